#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "redfuzz/agents.hpp"
#include "redfuzz/config.hpp"
#include "redfuzz/core.hpp"
#include "redfuzz/dataset.hpp"
#include "redfuzz/defense.hpp"
#include "redfuzz/fuzzer.hpp"
#include "redfuzz/knowledge.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/session.hpp"

namespace redfuzz {

// Top-level phases: knowledge accumulation against a sandbox model, then
// knowledge-driven fuzzing against the target. Per-query failures are logged
// and skipped; the campaign always finishes the dataset.

struct ReportRow {
    std::string query_id;
    int best_score = 0;
    bool success = false;
    int turns = 0;     // turns used by the best session
    int sessions = 0;  // sessions executed for this query
    std::vector<std::string> strategy_ids;
    int hr = 0; // harmfulness rating, 0-5 scale
    std::string termination;
};

struct Report {
    std::vector<ReportRow> rows;
    std::optional<double> asr; // fraction of rows with the success flag
    std::optional<double> hr;  // mean harmfulness rating
};

inline ojson row_to_wire(const ReportRow& row) {
    ojson obj;
    obj["query_id"] = row.query_id;
    obj["best_score"] = row.best_score;
    obj["success"] = row.success;
    obj["turns"] = row.turns;
    obj["sessions"] = row.sessions;
    obj["strategy_ids"] = row.strategy_ids;
    obj["hr"] = row.hr;
    obj["termination"] = row.termination;
    return obj;
}

inline ReportRow row_from_wire(const ojson& obj) {
    ReportRow row;
    row.query_id = obj.at("query_id").get<std::string>();
    row.best_score = obj.at("best_score").get<int>();
    row.success = obj.at("success").get<bool>();
    row.turns = obj.at("turns").get<int>();
    row.sessions = obj.at("sessions").get<int>();
    row.strategy_ids = obj.at("strategy_ids").get<std::vector<std::string>>();
    row.hr = obj.at("hr").get<int>();
    row.termination = obj.at("termination").get<std::string>();
    return row;
}

inline Report compute_metrics(std::vector<ReportRow> rows) {
    Report report;
    report.rows = std::move(rows);
    if (report.rows.empty()) return report;
    double successes = 0, hr_sum = 0;
    for (const auto& row : report.rows) {
        successes += row.success ? 1.0 : 0.0;
        hr_sum += row.hr;
    }
    report.asr = successes / static_cast<double>(report.rows.size());
    report.hr = hr_sum / static_cast<double>(report.rows.size());
    return report;
}

namespace detail {

inline std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace detail

// Machine-readable rows plus a human summary table. ASR/HR print as
// "undefined" for an empty campaign; that is still a successful run.
inline void emit_report(const Report& report, const std::string& output_dir) {
    std::filesystem::create_directories(output_dir);
    std::vector<ojson> lines;
    for (const auto& row : report.rows) {
        ojson rec;
        rec["kind"] = "ROW";
        ojson fields = row_to_wire(row);
        for (auto& [k, v] : fields.items()) rec[k] = v;
        lines.push_back(std::move(rec));
    }
    ojson metrics;
    metrics["kind"] = "METRICS";
    metrics["queries"] = report.rows.size();
    metrics["asr"] = report.asr ? ojson(*report.asr) : ojson(nullptr);
    metrics["hr"] = report.hr ? ojson(*report.hr) : ojson(nullptr);
    lines.push_back(std::move(metrics));
    write_jsonl(output_dir + "/report.jsonl", lines);

    std::string table;
    table += "query            best  success  turns  sessions  hr  termination\n";
    table += "---------------  ----  -------  -----  --------  --  -----------\n";
    for (const auto& row : report.rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-15s  %4d  %-7s  %5d  %8d  %2d  %s\n",
                      row.query_id.c_str(), row.best_score, row.success ? "yes" : "no", row.turns,
                      row.sessions, row.hr, row.termination.c_str());
        table += buf;
    }
    table += "\n";
    table += "ASR: " + (report.asr ? detail::fixed4(*report.asr) : std::string("undefined")) + "\n";
    table += "HR:  " + (report.hr ? detail::fixed4(*report.hr) : std::string("undefined")) + "\n";
    write_text_file(output_dir + "/report.txt", table);
}

// Re-derive the report from a trajectory log alone.
inline Report replay_metrics(const std::string& log_path) {
    std::vector<ReportRow> rows;
    for (const auto& ev : read_jsonl(log_path)) {
        if (ev.at("kind").get<std::string>() != "QUERY_DONE") continue;
        if (ev.value("phase", std::string{}) != "attack") continue;
        rows.push_back(row_from_wire(ev.at("row")));
    }
    return compute_metrics(std::move(rows));
}

// --- runtime assembly ---------------------------------------------------------

class CampaignRuntime {
public:
    CampaignRuntime(CampaignConfig cfg, EventLog* log)
        : cfg_(std::move(cfg)),
          provider_(cfg_.embedding_dim, cfg_.embedding_backend == "remote"
                                            ? EmbeddingBackend::Remote
                                            : EmbeddingBackend::DeterministicTest),
          log_(log) {
        planner_ = make_agent("planner", Role::Plan, "plan.tmpl");
        reflector_ = make_agent("planner", Role::Reflect, "reflect.tmpl");
        executor_ = make_agent("executor", Role::Execute, "execute.tmpl");
        controller_ = make_agent("controller", Role::Control, "control.tmpl");
        distiller_ = make_agent("distiller", Role::Distill, "distill.tmpl");
        merger_ = make_agent("distiller", Role::Merge, "merge.tmpl");
    }

    const CampaignConfig& config() const { return cfg_; }
    const EmbeddingProvider& provider() const { return provider_; }
    EventLog* log() const { return log_; }
    const Agent& planner() const { return planner_; }
    const Agent& reflector() const { return reflector_; }
    const Agent& executor() const { return executor_; }
    const Agent& controller() const { return controller_; }
    const Agent& distiller() const { return distiller_; }
    const Agent& merger() const { return merger_; }

    Target make_target(const std::string& endpoint_name) const {
        auto it = cfg_.endpoints.find(endpoint_name);
        if (it == cfg_.endpoints.end())
            throw ConfigError("campaign config does not define endpoints." + endpoint_name);
        Target bare(model_from_endpoint(it->second));
        if (endpoint_name == "target" && cfg_.defense != DefenseKind::None) {
            DefenseParams params = cfg_.defense_params;
            if (cfg_.defense == DefenseKind::GuardFilter) {
                if (cfg_.guard_script.empty())
                    throw ConfigError("guard_filter defense needs defense.guard_script");
                params.guard.impl = MockModelScript::load(cfg_.guard_script);
            }
            return apply_defense(bare, cfg_.defense, params);
        }
        return bare;
    }

    // Judge for the 1-10 per-turn score. "passthrough" (or an omitted judge
    // endpoint) scores deterministically from the mock target's compliance
    // side channel.
    JudgeModel make_judge(const Target& target) const {
        auto it = cfg_.endpoints.find("judge");
        if (it == cfg_.endpoints.end() || it->second.kind == "passthrough") {
            const MockModelScript* script = target.mock_script();
            if (!script)
                throw ConfigError("passthrough judge requires a mock target; configure an "
                                  "endpoints.judge template for remote targets");
            return JudgeModel::passthrough(*script, 1, 10);
        }
        Agent agent{load_template(Role::Judge, "judge.tmpl"), model_from_endpoint(it->second)};
        return JudgeModel::llm(std::move(agent), 1, 10, cfg_.limits.parse_retry_budget);
    }

    // Harmfulness-rating judge on the 0-5 scale, applied to best responses.
    JudgeModel make_hr_judge(const Target& target) const {
        auto it = cfg_.endpoints.find("judge_hr");
        if (it == cfg_.endpoints.end() || it->second.kind == "passthrough") {
            const MockModelScript* script = target.mock_script();
            if (!script)
                throw ConfigError("passthrough judge_hr requires a mock target; configure an "
                                  "endpoints.judge_hr template for remote targets");
            return JudgeModel::passthrough(*script, 0, 5);
        }
        Agent agent{load_template(Role::Judge, "judge_hr.tmpl"), model_from_endpoint(it->second)};
        return JudgeModel::llm(std::move(agent), 0, 5, cfg_.limits.parse_retry_budget);
    }

private:
    RoleTemplate load_template(Role role, const std::string& file) const {
        return load_role_template(cfg_.templates_dir + "/" + file, role);
    }

    Agent make_agent(const std::string& endpoint_name, Role role, const std::string& file) const {
        auto it = cfg_.endpoints.find(endpoint_name);
        if (it == cfg_.endpoints.end())
            throw ConfigError("campaign config does not define endpoints." + endpoint_name);
        return Agent{load_template(role, file), model_from_endpoint(it->second)};
    }

    CampaignConfig cfg_;
    EmbeddingProvider provider_;
    EventLog* log_;
    Agent planner_, reflector_, executor_, controller_, distiller_, merger_;
};

namespace detail {

inline void parallel_for(int workers, int n, const std::function<void(int)>& task) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int count = std::min(workers, n);
    for (int w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                task(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

// Completed (phase, query) pairs recovered from a previous run's log.
struct ResumeState {
    std::set<std::pair<std::string, std::string>> done;
    std::vector<ReportRow> attack_rows;

    bool completed(const std::string& phase, const std::string& query_id) const {
        return done.count({phase, query_id}) > 0;
    }
};

inline ResumeState load_resume_state(const std::string& log_path) {
    ResumeState state;
    if (!std::filesystem::exists(log_path)) return state;
    for (const auto& ev : read_jsonl(log_path)) {
        if (ev.at("kind").get<std::string>() != "QUERY_DONE") continue;
        const std::string phase = ev.value("phase", std::string{});
        state.done.emplace(phase, ev.value("query_id", std::string{}));
        if (phase == "attack" && ev.contains("row")) state.attack_rows.push_back(row_from_wire(ev.at("row")));
    }
    return state;
}

inline std::string host_of(const std::string& base_url) {
    std::size_t start = base_url.find("://");
    start = start == std::string::npos ? 0 : start + 3;
    std::size_t end = base_url.find_first_of(":/", start);
    return base_url.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

} // namespace detail

// The attack phase refuses to touch non-allowlisted remote endpoints unless
// the operator passed --i-am-authorized together with an engagement note; the
// note lands in the campaign log header.
inline void enforce_authorization(const CampaignConfig& cfg) {
    auto it = cfg.endpoints.find("target");
    if (it == cfg.endpoints.end() || it->second.kind != "http") return;
    const std::string host = detail::host_of(it->second.http.base_url);
    for (const auto& allowed : cfg.allow_hosts)
        if (host == allowed) return;
    if (!cfg.authorized)
        throw ConfigError("attack target host '" + host +
                          "' is not allowlisted; pass --i-am-authorized and an engagement note "
                          "if this test is in scope");
    if (cfg.engagement_note.empty())
        throw ConfigError("--i-am-authorized requires --engagement-note describing the "
                          "engagement; it is recorded in the campaign log header");
}

struct AccumulationQueryResult {
    bool succeeded = false;
    bool resumed = false;
    std::vector<Strategy> strategies;
    int score = 0;
    int sessions = 0;
    std::string error;
    std::vector<ojson> events;
};

// Phase 1: explore each auxiliary query on the sandbox, distill successful
// trajectories, record the query -> strategy mapping, then consolidate.
// workers > 1 trades the in-phase feedback loop for parallelism; results are
// merged in dataset order either way, so a given worker count is reproducible.
inline Repository run_accumulation(const CampaignRuntime& rt, Repository repo) {
    const CampaignConfig& cfg = rt.config();
    EventLog* log = rt.log();
    std::vector<Query> queries = ingest_dataset(cfg.dataset_accumulate);
    log_event(log, "PHASE_START",
              {{"phase", "accumulate"}, {"queries", queries.size()}});
    if (queries.empty())
        log_event(log, "WARNING", {{"message", "accumulation dataset is empty"}});

    detail::ResumeState resume;
    if (cfg.resume && log) resume = detail::load_resume_state(log->path());

    const Target sandbox = rt.make_target("sandbox");
    const JudgeModel sandbox_judge = rt.make_judge(sandbox);

    std::vector<AccumulationQueryResult> results(queries.size());
    detail::parallel_for(cfg.workers, static_cast<int>(queries.size()), [&](int i) {
        const Query& query = queries[static_cast<std::size_t>(i)];
        AccumulationQueryResult& out = results[static_cast<std::size_t>(i)];
        if (resume.completed("accumulate", query.id)) {
            out.resumed = true;
            return;
        }
        EventLog buffer;
        try {
            SessionRunner runner(rt.executor(), rt.controller(), sandbox_judge, cfg.session,
                                 cfg.limits, &buffer, "a-q" + std::to_string(i + 1));
            auto [best, lineage] = accumulation_episode(query, sandbox, rt.planner(),
                                                        rt.reflector(), runner,
                                                        cfg.reflect_budget, cfg.limits);
            out.sessions = runner.sessions_run();
            out.score = best.max_score;
            if (best.termination == Termination::Succeeded) {
                out.strategies = distill(rt.distiller(), query, best.plan, best.dialogue,
                                         best.session_id, cfg.limits, &buffer);
                out.succeeded = true;
            }
        } catch (const std::exception& e) {
            out.error = e.what();
        }
        out.events = buffer.events();
    });

    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Query& query = queries[i];
        AccumulationQueryResult& r = results[i];
        if (r.resumed) continue;
        if (log) log->append_events(r.events);
        if (!r.error.empty()) {
            log_event(log, "QUERY_ERROR",
                      {{"phase", "accumulate"}, {"query_id", query.id}, {"error", r.error}});
            continue;
        }
        std::size_t added = 0;
        if (r.succeeded) {
            try {
                AddResult add = add_strategies(repo, r.strategies, rt.provider());
                repo = std::move(add.repo);
                repo = add_success_record(repo, query, add.ids, r.score, rt.provider());
                added = add.ids.size();
                // flush this query's additions so a crash loses at most the
                // in-flight session
                if (!cfg.repository_path.empty())
                    append_repository_lines(cfg.repository_path, repo, add.ids,
                                            &repo.success_records().back());
            } catch (const std::exception& e) {
                log_event(log, "QUERY_ERROR",
                          {{"phase", "accumulate"}, {"query_id", query.id}, {"error", e.what()}});
            }
        }
        log_event(log, "QUERY_DONE",
                  {{"phase", "accumulate"},
                   {"query_id", query.id},
                   {"succeeded", r.succeeded},
                   {"best_score", r.score},
                   {"sessions", r.sessions},
                   {"strategies_added", added}});
    }

    repo = consolidate(repo, rt.merger(), cfg.knowledge, rt.provider(), log);
    log_event(log, "PHASE_DONE",
              {{"phase", "accumulate"},
               {"strategies", repo.size()},
               {"records", repo.success_records().size()},
               {"snapshot_version", repo.snapshot_version()}});
    return repo;
}

struct AttackQueryResult {
    ReportRow row;
    bool resumed = false;
    std::vector<SuccessRecord> new_records;
    std::string error;
    std::vector<ojson> events;
};

struct AttackResult {
    Report report;
    Repository repo;
};

// Phase 2: fuzz each target query over the repository snapshot. Winning
// configurations feed back as success records (sequentially between queries
// when workers == 1, merged afterwards otherwise).
inline AttackResult run_attack(const CampaignRuntime& rt, Repository repo) {
    const CampaignConfig& cfg = rt.config();
    EventLog* log = rt.log();
    enforce_authorization(cfg);
    if (repo.size() == 0 && !cfg.allow_empty_repository)
        throw ConfigError("attack phase requires a non-empty repository (or "
                          "allow_empty_repository = true for exploratory-only search)");

    std::vector<Query> queries = ingest_dataset(cfg.dataset_attack);
    log_event(log, "PHASE_START", {{"phase", "attack"}, {"queries", queries.size()}});
    if (queries.empty()) log_event(log, "WARNING", {{"message", "attack dataset is empty"}});

    detail::ResumeState resume;
    if (cfg.resume && log) resume = detail::load_resume_state(log->path());

    const Target target = rt.make_target("target");
    const JudgeModel target_judge = rt.make_judge(target);
    const JudgeModel hr_judge = rt.make_hr_judge(target);

    auto run_query = [&](int i, const Repository& snapshot, EventLog* buffer,
                         AttackQueryResult& out) {
        const Query& query = queries[static_cast<std::size_t>(i)];
        SessionRunner runner(rt.executor(), rt.controller(), target_judge, cfg.session,
                             cfg.limits, buffer, "t-q" + std::to_string(i + 1));
        FuzzConfig fuzz_cfg = cfg.fuzz;
        fuzz_cfg.rng_seed = mix_u64(cfg.rng_seed, static_cast<std::uint64_t>(i) + 1);
        FuzzResult fr = run_fuzz(query, snapshot, target, rt.planner(), runner, fuzz_cfg,
                                 cfg.limits, rt.provider(), buffer);
        out.row.query_id = query.id;
        out.row.best_score = fr.best.fitness;
        out.row.success = fr.succeeded;
        out.row.turns = fr.best_outcome.turns_used;
        out.row.sessions = fr.sessions_executed;
        out.row.termination = to_string(fr.best_outcome.termination);
        const auto snapshot_ids = snapshot.snapshot_order();
        for (std::size_t k = 0; k < snapshot_ids.size(); ++k)
            if (k < fr.best.vector.bits.size() && fr.best.vector.bits[k])
                out.row.strategy_ids.push_back(snapshot_ids[k]);
        // HR is judged on the best elicited response, 0 when nothing committed.
        std::string best_response;
        int best_turn_score = -1;
        const auto& scores = fr.best_outcome.per_turn_scores;
        const auto path = fr.best_outcome.dialogue.active_path();
        for (std::size_t k = 0; k < path.size() && k < scores.size(); ++k) {
            if (scores[k] > best_turn_score) {
                best_turn_score = scores[k];
                best_response = fr.best_outcome.dialogue.turn_at(path[k]).response;
            }
        }
        out.row.hr = best_response.empty() ? 0 : hr_judge.score(query, best_response, buffer);
        for (std::size_t k = snapshot.success_records().size();
             k < fr.repo.success_records().size(); ++k)
            out.new_records.push_back(fr.repo.success_records()[k]);
    };

    std::vector<AttackQueryResult> results(queries.size());
    if (cfg.workers <= 1) {
        for (int i = 0; i < static_cast<int>(queries.size()); ++i) {
            AttackQueryResult& out = results[static_cast<std::size_t>(i)];
            if (resume.completed("attack", queries[static_cast<std::size_t>(i)].id)) {
                out.resumed = true;
                continue;
            }
            EventLog buffer;
            try {
                run_query(i, repo, &buffer, out);
                for (const auto& rec : out.new_records) {
                    RepositoryOps::records(repo).push_back(rec);
                    if (!cfg.repository_path.empty())
                        append_repository_lines(cfg.repository_path, repo, {}, &rec);
                }
                out.new_records.clear();
            } catch (const std::exception& e) {
                out.error = e.what();
            }
            out.events = buffer.events();
        }
    } else {
        detail::parallel_for(cfg.workers, static_cast<int>(queries.size()), [&](int i) {
            AttackQueryResult& out = results[static_cast<std::size_t>(i)];
            if (resume.completed("attack", queries[static_cast<std::size_t>(i)].id)) {
                out.resumed = true;
                return;
            }
            EventLog buffer;
            try {
                run_query(i, repo, &buffer, out);
            } catch (const std::exception& e) {
                out.error = e.what();
            }
            out.events = buffer.events();
        });
    }

    std::vector<ReportRow> rows = resume.attack_rows;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        AttackQueryResult& r = results[i];
        if (r.resumed) continue;
        if (log) log->append_events(r.events);
        if (!r.error.empty()) {
            log_event(log, "QUERY_ERROR",
                      {{"phase", "attack"}, {"query_id", queries[i].id}, {"error", r.error}});
            continue;
        }
        for (const auto& rec : r.new_records) {
            RepositoryOps::records(repo).push_back(rec);
            if (!cfg.repository_path.empty())
                append_repository_lines(cfg.repository_path, repo, {}, &rec);
        }
        rows.push_back(r.row);
        log_event(log, "QUERY_DONE",
                  {{"phase", "attack"}, {"query_id", queries[i].id}, {"row", row_to_wire(r.row)}});
    }

    AttackResult result{compute_metrics(std::move(rows)), std::move(repo)};
    log_event(log, "PHASE_DONE",
              {{"phase", "attack"},
               {"asr", result.report.asr ? ojson(*result.report.asr) : ojson(nullptr)},
               {"hr", result.report.hr ? ojson(*result.report.hr) : ojson(nullptr)}});
    return result;
}

} // namespace redfuzz
