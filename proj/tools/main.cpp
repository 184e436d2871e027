// Command-line front end: accumulate, attack, consolidate, report, replay.
// Flags mirror the campaign config file; environment variables are used only
// for endpoint secrets (api_key_env names in the config).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "redfuzz/gateway_http.hpp"
#include "redfuzz/redfuzz.hpp"

namespace {

using namespace redfuzz;

struct CommonFlags {
    std::string config_path;
    std::string output_dir;
    std::string repository;
    std::string dataset;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    bool resume = false;
    bool authorized = false;
    bool allow_empty_repo = false;
    std::string engagement_note;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "campaign config file (TOML)");
    if (needs_config) opt->required();
    cmd->add_option("--output-dir", flags.output_dir, "override campaign.output_dir");
    cmd->add_option("--repository", flags.repository, "override campaign.repository");
    cmd->add_option("--dataset", flags.dataset, "override the phase dataset");
    cmd->add_option("--seed", flags.seed, "override campaign.rng_seed");
    cmd->add_option("--workers", flags.workers, "override campaign.workers");
    cmd->add_flag("--resume", flags.resume, "skip queries already completed in the log");
    cmd->add_flag("--i-am-authorized", flags.authorized,
                  "confirm the target endpoint is in scope for this engagement");
    cmd->add_flag("--allow-empty-repo", flags.allow_empty_repo,
                  "run the attack phase with an empty repository (exploratory seeds)");
    cmd->add_option("--engagement-note", flags.engagement_note,
                    "note recorded in the campaign log header");
}

CampaignConfig load_config(const CommonFlags& flags, Phase phase) {
    CampaignConfig cfg = load_campaign_config(flags.config_path);
    cfg.phase = phase;
    if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
    if (!flags.repository.empty()) cfg.repository_path = flags.repository;
    if (flags.seed) cfg.rng_seed = *flags.seed;
    if (flags.workers) cfg.workers = *flags.workers;
    if (!flags.dataset.empty()) {
        if (phase == Phase::Accumulate) cfg.dataset_accumulate = flags.dataset;
        else cfg.dataset_attack = flags.dataset;
    }
    cfg.resume = flags.resume;
    cfg.authorized = flags.authorized;
    if (flags.allow_empty_repo) cfg.allow_empty_repository = true;
    cfg.engagement_note = flags.engagement_note;
    cfg.fuzz.rng_seed = cfg.rng_seed;
    return cfg;
}

void open_log(EventLog& log, const CampaignConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.output_dir);
    log.open(cfg.output_dir + "/" + name, cfg.resume);
}

void log_header(EventLog& log, const CampaignConfig& cfg, const std::string& command) {
    log.append("CAMPAIGN_START", {{"command", command},
                                  {"rng_seed", cfg.rng_seed},
                                  {"workers", cfg.workers},
                                  {"defense", to_string(cfg.defense)},
                                  {"engagement_note", cfg.engagement_note}});
}

Repository load_repo_if_any(const std::string& path) {
    if (path.empty() || !std::filesystem::exists(path)) return Repository{};
    return load_repository(path);
}

int cmd_accumulate(const CommonFlags& flags) {
    CampaignConfig cfg = load_config(flags, Phase::Accumulate);
    EventLog log;
    open_log(log, cfg, "accumulate.trajectory.jsonl");
    log_header(log, cfg, "accumulate");
    CampaignRuntime rt(cfg, &log);
    Repository repo = cfg.resume ? load_repo_if_any(cfg.repository_path) : Repository{};
    repo = run_accumulation(rt, std::move(repo));
    save_repository(repo, cfg.repository_path);
    std::printf("accumulated %zu strategies, %zu success records -> %s\n", repo.size(),
                repo.success_records().size(), cfg.repository_path.c_str());
    return 0;
}

int cmd_attack(const CommonFlags& flags) {
    CampaignConfig cfg = load_config(flags, Phase::Attack);
    EventLog log;
    open_log(log, cfg, "attack.trajectory.jsonl");
    log_header(log, cfg, "attack");
    CampaignRuntime rt(cfg, &log);
    Repository repo = load_repo_if_any(cfg.repository_path);
    AttackResult result = run_attack(rt, std::move(repo));
    save_repository(result.repo, cfg.repository_path);
    emit_report(result.report, cfg.output_dir);
    std::printf("attack finished: %zu queries, ASR %s, report in %s\n",
                result.report.rows.size(),
                result.report.asr ? std::to_string(*result.report.asr).c_str() : "undefined",
                cfg.output_dir.c_str());
    return 0;
}

int cmd_consolidate(const CommonFlags& flags) {
    CampaignConfig cfg = load_config(flags, Phase::Accumulate);
    EventLog log;
    open_log(log, cfg, "consolidate.trajectory.jsonl");
    log_header(log, cfg, "consolidate");
    CampaignRuntime rt(cfg, &log);
    Repository repo = load_repository(cfg.repository_path);
    const std::size_t before = repo.size();
    repo = consolidate(repo, rt.merger(), cfg.knowledge, rt.provider(), &log);
    save_repository(repo, cfg.repository_path);
    std::printf("consolidated %zu -> %zu strategies\n", before, repo.size());
    return 0;
}

int cmd_report(const std::string& log_path, const std::string& out_dir) {
    Report report = replay_metrics(log_path);
    emit_report(report, out_dir);
    std::printf("report written to %s (%zu rows)\n", out_dir.c_str(), report.rows.size());
    return 0;
}

int cmd_replay(const std::string& log_path) {
    Report report = replay_metrics(log_path);
    std::printf("rows: %zu\n", report.rows.size());
    if (report.asr) std::printf("ASR: %.4f\n", *report.asr);
    else std::printf("ASR: undefined\n");
    if (report.hr) std::printf("HR: %.4f\n", *report.hr);
    else std::printf("HR: undefined\n");
    for (const auto& row : report.rows)
        std::printf("  %s best=%d success=%d turns=%d sessions=%d hr=%d %s\n",
                    row.query_id.c_str(), row.best_score, row.success ? 1 : 0, row.turns,
                    row.sessions, row.hr, row.termination.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-turn red-team campaign runner"};
    app.require_subcommand(1);

    CommonFlags acc_flags, atk_flags, con_flags;
    std::string log_path, report_out;

    auto* acc = app.add_subcommand("accumulate", "phase 1: explore aux queries on the sandbox "
                                                 "and distill the strategy repository");
    add_common(acc, acc_flags);

    auto* atk = app.add_subcommand("attack", "phase 2: fuzz strategy combinations against the "
                                             "target and report ASR/HR");
    add_common(atk, atk_flags);

    auto* con = app.add_subcommand("consolidate", "cluster-and-merge the repository to a fixpoint");
    add_common(con, con_flags);

    auto* rep = app.add_subcommand("report", "re-derive the report files from a trajectory log");
    rep->add_option("--log", log_path, "trajectory log file")->required();
    rep->add_option("--output-dir", report_out, "where to write report files")->required();

    auto* rpl = app.add_subcommand("replay", "recompute metrics from a trajectory log and print them");
    rpl->add_option("--log", log_path, "trajectory log file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (acc->parsed()) return cmd_accumulate(acc_flags);
        if (atk->parsed()) return cmd_attack(atk_flags);
        if (con->parsed()) return cmd_consolidate(con_flags);
        if (rep->parsed()) return cmd_report(log_path, report_out);
        if (rpl->parsed()) return cmd_replay(log_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
