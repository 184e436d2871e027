#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "redfuzz/agents.hpp"
#include "redfuzz/defense.hpp"
#include "redfuzz/embedding.hpp"
#include "redfuzz/fuzzer.hpp"
#include "redfuzz/gateway.hpp"
#include "redfuzz/knowledge.hpp"
#include "redfuzz/session.hpp"
#include "redfuzz/templates.hpp"
#include "redfuzz/wire.hpp"

namespace redfuzz {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Minimal TOML-syntax reader covering what campaign configs use: [section]
// and [dotted.section] headers, key = value with strings, integers, floats,
// booleans and flat arrays, # comments.
class TomlDoc {
public:
    using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<std::string>>;

    static TomlDoc parse_file(const std::string& path) { return parse(read_text_file(path), path); }

    static TomlDoc parse(const std::string& text, const std::string& origin = "<config>") {
        TomlDoc doc;
        std::string section;
        std::size_t lineno = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos
                                                                         : eol - pos);
            pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
            ++lineno;
            strip_comment(line);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string raw = trim(line.substr(eq + 1));
            if (key.empty() || raw.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
            std::string full = section.empty() ? key : section + "." + key;
            doc.values_[full] = parse_value(raw, origin, lineno);
        }
        return doc;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* s = std::get_if<std::string>(&it->second)) return *s;
        throw ConfigError("config key " + key + " is not a string");
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
        throw ConfigError("config key " + key + " is not an integer");
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<double>(&it->second)) return *v;
        if (auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
        throw ConfigError("config key " + key + " is not a number");
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<bool>(&it->second)) return *v;
        throw ConfigError("config key " + key + " is not a boolean");
    }

    std::vector<std::string> get_string_array(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return {};
        if (auto* v = std::get_if<std::vector<std::string>>(&it->second)) return *v;
        throw ConfigError("config key " + key + " is not an array");
    }

    std::vector<double> get_double_array(const std::string& key,
                                         std::vector<double> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<std::vector<std::string>>(&it->second)) {
            std::vector<double> out;
            for (const auto& s : *v) out.push_back(std::stod(s));
            return out;
        }
        throw ConfigError("config key " + key + " is not an array");
    }

private:
    static void strip_comment(std::string& line) {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
            else if (line[i] == '#' && !in_string) {
                line.erase(i);
                return;
            }
        }
    }

    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    static std::string unquote(const std::string& raw, const std::string& origin,
                               std::size_t lineno) {
        if (raw.size() < 2 || raw.back() != '"')
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
            if (raw[i] == '\\' && i + 2 < raw.size()) {
                ++i;
                switch (raw[i]) {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    default:
                        throw ConfigError(origin + ":" + std::to_string(lineno) +
                                          ": unsupported escape");
                }
            } else {
                out.push_back(raw[i]);
            }
        }
        return out;
    }

    static Value parse_value(const std::string& raw, const std::string& origin, std::size_t lineno) {
        if (raw.front() == '"') return unquote(raw, origin, lineno);
        if (raw == "true") return true;
        if (raw == "false") return false;
        if (raw.front() == '[') {
            if (raw.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated array");
            std::vector<std::string> items;
            std::string body = raw.substr(1, raw.size() - 2);
            std::size_t start = 0;
            bool in_string = false;
            for (std::size_t i = 0; i <= body.size(); ++i) {
                if (i < body.size() && body[i] == '"' && (i == 0 || body[i - 1] != '\\'))
                    in_string = !in_string;
                if (i == body.size() || (body[i] == ',' && !in_string)) {
                    std::string item = trim(body.substr(start, i - start));
                    if (!item.empty()) {
                        if (item.front() == '"') items.push_back(unquote(item, origin, lineno));
                        else items.push_back(item);
                    }
                    start = i + 1;
                }
            }
            return items;
        }
        // number
        try {
            if (raw.find('.') == std::string::npos && raw.find('e') == std::string::npos &&
                raw.find('E') == std::string::npos) {
                std::size_t used = 0;
                std::int64_t v = std::stoll(raw, &used);
                if (used == raw.size()) return v;
            } else {
                std::size_t used = 0;
                double v = std::stod(raw, &used);
                if (used == raw.size()) return v;
            }
        } catch (const std::exception&) {
        }
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": cannot parse value: " + raw);
    }

    std::map<std::string, Value> values_;
};

// --- campaign configuration ---------------------------------------------------

enum class Phase { Accumulate, Attack, Both };

inline Phase phase_from_string(const std::string& s) {
    if (s == "accumulate") return Phase::Accumulate;
    if (s == "attack") return Phase::Attack;
    if (s == "both") return Phase::Both;
    throw ConfigError("unknown phase: " + s);
}

struct EndpointConfig {
    std::string kind = "mock"; // mock | http | passthrough (judges only)
    std::string script;        // scenario file for mocks
    ChatEndpoint http;
};

struct CampaignConfig {
    Phase phase = Phase::Both;
    std::string dataset_accumulate;
    std::string dataset_attack;
    std::string output_dir = "out";
    std::string repository_path;
    std::string templates_dir = "templates";
    int workers = 1;
    std::uint64_t rng_seed = 1;
    bool resume = false;
    bool allow_empty_repository = false;
    std::vector<std::string> allow_hosts = {"localhost", "127.0.0.1"};
    bool authorized = false;       // --i-am-authorized
    std::string engagement_note;   // logged in the campaign header

    SessionConfig session;
    AgentLimits limits;
    int reflect_budget = 3;
    FuzzConfig fuzz;
    KnowledgeParams knowledge;
    int embedding_dim = 64;
    std::string embedding_backend = "test"; // test | remote

    DefenseKind defense = DefenseKind::None;
    DefenseParams defense_params;
    std::string guard_script; // mock classifier for guard_filter

    std::map<std::string, EndpointConfig> endpoints; // planner/executor/.../target/sandbox
};

namespace detail {

inline EndpointConfig read_endpoint(const TomlDoc& doc, const std::string& section) {
    EndpointConfig ep;
    ep.kind = doc.get_string(section + ".kind", "mock");
    ep.script = doc.get_string(section + ".script", "");
    ep.http.base_url = doc.get_string(section + ".base_url", "");
    ep.http.model_name = doc.get_string(section + ".model", "");
    ep.http.api_key_ref = doc.get_string(section + ".api_key_env", "");
    ep.http.temperature = doc.get_double(section + ".temperature", 0.0);
    ep.http.max_output_tokens = static_cast<int>(doc.get_int(section + ".max_output_tokens", 1024));
    ep.http.timeout_s = doc.get_double(section + ".timeout_s", 60.0);
    ep.http.retry.max_attempts = static_cast<int>(doc.get_int(section + ".retry_max_attempts", 3));
    ep.http.retry.backoff_s = doc.get_double_array(section + ".retry_backoff_s", {1.0, 4.0});
    ep.http.permits = static_cast<int>(doc.get_int(section + ".permits", 4));
    ep.http.requests_per_minute =
        static_cast<int>(doc.get_int(section + ".requests_per_minute", 0));
    if (ep.kind == "mock" && ep.script.empty() && section != "endpoints.judge" &&
        section != "endpoints.judge_hr")
        throw ConfigError(section + ": mock endpoint needs a script file");
    if (ep.kind == "http" && ep.http.base_url.empty())
        throw ConfigError(section + ": http endpoint needs a base_url");
    return ep;
}

} // namespace detail

inline CampaignConfig load_campaign_config(const std::string& path) {
    const TomlDoc doc = TomlDoc::parse_file(path);
    CampaignConfig cfg;
    cfg.phase = phase_from_string(doc.get_string("campaign.phase", "both"));
    cfg.dataset_accumulate = doc.get_string("campaign.dataset_accumulate", "");
    cfg.dataset_attack = doc.get_string("campaign.dataset_attack", "");
    cfg.output_dir = doc.get_string("campaign.output_dir", "out");
    cfg.repository_path = doc.get_string("campaign.repository", cfg.output_dir + "/repository.jsonl");
    cfg.templates_dir = doc.get_string("campaign.templates_dir", "templates");
    cfg.workers = static_cast<int>(doc.get_int("campaign.workers", 1));
    cfg.rng_seed = static_cast<std::uint64_t>(doc.get_int("campaign.rng_seed", 1));
    cfg.allow_empty_repository = doc.get_bool("campaign.allow_empty_repository", false);
    if (doc.has("campaign.allow_hosts")) cfg.allow_hosts = doc.get_string_array("campaign.allow_hosts");

    cfg.session.turn_budget = static_cast<int>(doc.get_int("session.turn_budget", 10));
    cfg.session.refine_cap = static_cast<int>(doc.get_int("session.refine_cap", 3));
    cfg.session.success_threshold = static_cast<int>(doc.get_int("session.success_threshold", 8));
    cfg.session.judge_every_turn = doc.get_bool("session.judge_every_turn", true);
    cfg.limits.max_plan_steps = static_cast<int>(doc.get_int("session.max_plan_steps", 6));
    cfg.limits.max_active_strategies =
        static_cast<int>(doc.get_int("session.max_active_strategies", 6));
    cfg.limits.parse_retry_budget = static_cast<int>(doc.get_int("session.parse_retry_budget", 2));
    cfg.limits.refine_cap = cfg.session.refine_cap;
    cfg.reflect_budget = static_cast<int>(doc.get_int("session.reflect_budget", 3));

    cfg.fuzz.population_size = static_cast<int>(doc.get_int("fuzz.population_size", 8));
    cfg.fuzz.generations = static_cast<int>(doc.get_int("fuzz.generations", 5));
    cfg.fuzz.tournament_size = static_cast<int>(doc.get_int("fuzz.tournament_size", 2));
    cfg.fuzz.mutation_rate = doc.get_double("fuzz.mutation_rate", 0.1);
    cfg.fuzz.elitism = static_cast<int>(doc.get_int("fuzz.elitism", 1));
    cfg.fuzz.success_threshold = cfg.session.success_threshold;
    cfg.fuzz.rng_seed = cfg.rng_seed;
    cfg.fuzz.max_active_strategies = cfg.limits.max_active_strategies;

    cfg.knowledge.merge_threshold = doc.get_double("knowledge.merge_threshold", 0.85);
    cfg.knowledge.max_iterations = static_cast<int>(doc.get_int("knowledge.max_iterations", 10));
    cfg.embedding_dim = static_cast<int>(doc.get_int("knowledge.embedding_dim", 64));
    cfg.embedding_backend = doc.get_string("knowledge.embedding_backend", "test");

    cfg.defense = defense_kind_from_string(doc.get_string("defense.kind", "none"));
    cfg.defense_params.reminder_prefix = doc.get_string("defense.reminder_prefix", "");
    cfg.defense_params.reminder_suffix = doc.get_string("defense.reminder_suffix", "");
    cfg.defense_params.perturbation_rate = doc.get_double("defense.perturbation_rate", 0.1);
    cfg.defense_params.fail_open = doc.get_bool("defense.fail_open", false);
    cfg.defense_params.rng_seed = cfg.rng_seed;
    cfg.guard_script = doc.get_string("defense.guard_script", "");

    for (const char* name :
         {"planner", "executor", "controller", "distiller", "judge", "judge_hr", "target",
          "sandbox"}) {
        const std::string section = std::string("endpoints.") + name;
        if (doc.has(section + ".kind") || doc.has(section + ".script") ||
            doc.has(section + ".base_url"))
            cfg.endpoints[name] = detail::read_endpoint(doc, section);
    }
    return cfg;
}

inline ModelRef model_from_endpoint(const EndpointConfig& ep) {
    ModelRef ref;
    if (ep.kind == "http") ref.impl = ep.http;
    else ref.impl = MockModelScript::load(ep.script);
    return ref;
}

} // namespace redfuzz
