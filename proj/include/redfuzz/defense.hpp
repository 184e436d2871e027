#pragma once

#include <atomic>
#include <cstdio>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "redfuzz/gateway.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/rng.hpp"

namespace redfuzz {

enum class DefenseKind { None, SystemReminder, InputPerturbation, GuardFilter };

inline std::string to_string(DefenseKind d) {
    switch (d) {
        case DefenseKind::None: return "none";
        case DefenseKind::SystemReminder: return "system_reminder";
        case DefenseKind::InputPerturbation: return "input_perturbation";
        case DefenseKind::GuardFilter: return "guard_filter";
    }
    return "none";
}

inline DefenseKind defense_kind_from_string(const std::string& s) {
    if (s == "none") return DefenseKind::None;
    if (s == "system_reminder") return DefenseKind::SystemReminder;
    if (s == "input_perturbation") return DefenseKind::InputPerturbation;
    if (s == "guard_filter") return DefenseKind::GuardFilter;
    throw std::invalid_argument("unknown defense kind: " + s);
}

struct DefenseParams {
    std::string reminder_prefix;   // installed as the system prompt
    std::string reminder_suffix;   // appended to every outgoing final user message
    double perturbation_rate = 0.1; // per-character edit probability
    bool fail_open = false;         // guard endpoint failure: forward vs refuse
    std::uint64_t rng_seed = 0;
    ModelRef guard;                 // conversation classifier for GuardFilter
};

inline constexpr const char* kGuardRefusal = "I cannot assist with this request.";

struct PerturbationResult {
    std::string text;
    int edits = 0;
};

// Character-level swap/insert/delete, each position edited independently with
// probability rate. Edit count is binomial in the prompt length.
inline PerturbationResult perturb_text(const std::string& text, double rate, Rng& rng) {
    PerturbationResult out;
    out.text.reserve(text.size() + 8);
    for (char c : text) {
        if (rate > 0.0 && rng.bernoulli(rate)) {
            ++out.edits;
            switch (rng.uniform_int(0, 2)) {
                case 0: // swap for a random printable character
                    out.text.push_back(static_cast<char>(rng.uniform_int(33, 126)));
                    break;
                case 1: // insert a random printable character after
                    out.text.push_back(c);
                    out.text.push_back(static_cast<char>(rng.uniform_int(33, 126)));
                    break;
                default: // delete
                    break;
            }
        } else {
            out.text.push_back(c);
        }
    }
    return out;
}

// The target model handle sessions talk to. With defense None it is
// byte-transparent; defense adapters rewrite the request (or short-circuit it)
// before the underlying model sees anything.
class Target {
public:
    Target() : Target(ModelRef{}) {}

    explicit Target(ModelRef model)
        : model_(std::move(model)),
          calls_(std::make_shared<std::atomic<int>>(0)),
          guard_calls_(std::make_shared<std::atomic<int>>(0)),
          perturb_rng_(std::make_shared<Rng>(0)) {}

    const ModelRef& model() const { return model_; }
    DefenseKind defense() const { return defense_; }
    const DefenseParams& params() const { return params_; }
    int underlying_calls() const { return calls_->load(); }
    int guard_calls() const { return guard_calls_->load(); }

    // Mock script backing the raw target, for the deterministic test judge.
    const MockModelScript* mock_script() const { return model_.mock(); }

    std::optional<std::string> system_prompt() const {
        if (defense_ == DefenseKind::SystemReminder && !params_.reminder_prefix.empty())
            return params_.reminder_prefix;
        return std::nullopt;
    }

    std::string system_prompt_fingerprint() const {
        auto sp = system_prompt();
        if (!sp) return "";
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(*sp)));
        return buf;
    }

    CompletionResult complete(const ChatRequest& request, EventLog* log = nullptr) const {
        validate_request(request);
        switch (defense_) {
            case DefenseKind::None:
                return forward(request, log);
            case DefenseKind::SystemReminder: {
                ChatRequest wrapped = request;
                if (!params_.reminder_prefix.empty()) {
                    wrapped.system_prompt = wrapped.system_prompt
                                                ? params_.reminder_prefix + "\n" + *wrapped.system_prompt
                                                : params_.reminder_prefix;
                }
                if (!params_.reminder_suffix.empty())
                    wrapped.messages.back().text += "\n" + params_.reminder_suffix;
                return forward(wrapped, log);
            }
            case DefenseKind::InputPerturbation: {
                ChatRequest wrapped = request;
                PerturbationResult p =
                    perturb_text(wrapped.messages.back().text, params_.perturbation_rate, *perturb_rng_);
                wrapped.messages.back().text = p.text;
                log_event(log, "PERTURBATION", {{"edits", p.edits}});
                return forward(wrapped, log);
            }
            case DefenseKind::GuardFilter:
                return guarded(request, log);
        }
        return forward(request, log);
    }

    friend Target apply_defense(const Target& target, DefenseKind kind, DefenseParams params);

private:
    CompletionResult forward(const ChatRequest& request, EventLog* log) const {
        calls_->fetch_add(1);
        return run_model(model_, request, log, "target");
    }

    // The guard classifier sees the entire conversation before dispatch. A
    // flag (or, by default, a guard failure) returns a fixed refusal without
    // ever calling the target.
    CompletionResult guarded(const ChatRequest& request, EventLog* log) const {
        bool flagged;
        try {
            guard_calls_->fetch_add(1);
            CompletionResult verdict = run_model(params_.guard, request, log, "guard");
            flagged = verdict.text.find("FLAG") != std::string::npos;
        } catch (const std::exception& e) {
            log_event(log, "GUARD_ERROR",
                      {{"error", e.what()}, {"fail_open", params_.fail_open}});
            if (params_.fail_open) return forward(request, log);
            flagged = true;
        }
        if (flagged) {
            log_event(log, "GUARD_REFUSAL", {{"refusal", kGuardRefusal}});
            return CompletionResult{kGuardRefusal, std::nullopt};
        }
        return forward(request, log);
    }

    ModelRef model_;
    DefenseKind defense_ = DefenseKind::None;
    DefenseParams params_;
    std::shared_ptr<std::atomic<int>> calls_;
    std::shared_ptr<std::atomic<int>> guard_calls_;
    std::shared_ptr<Rng> perturb_rng_;
};

inline Target apply_defense(const Target& target, DefenseKind kind, DefenseParams params) {
    Target wrapped = target;
    wrapped.defense_ = kind;
    wrapped.params_ = std::move(params);
    wrapped.perturb_rng_ = std::make_shared<Rng>(wrapped.params_.rng_seed);
    // fresh counters: the wrapper accounts for its own traffic
    wrapped.calls_ = std::make_shared<std::atomic<int>>(0);
    wrapped.guard_calls_ = std::make_shared<std::atomic<int>>(0);
    return wrapped;
}

} // namespace redfuzz
