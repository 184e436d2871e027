#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "redfuzz/agents.hpp"
#include "redfuzz/core.hpp"
#include "redfuzz/embedding.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/wire.hpp"

namespace redfuzz {

// The strategy repository: embedding storage, similarity retrieval,
// query -> configuration success records, and iterative cluster-and-merge
// compaction. Retrieval is an exact exhaustive scan; the repository holds
// thousands of items at most, so correctness beats indexing.

struct SuccessRecord {
    std::string query_id;
    std::vector<double> query_embedding;
    std::vector<std::string> strategy_ids; // the full set used by the successful plan
    int score = 0;
};

struct KnowledgeParams {
    double merge_threshold = 0.85; // within-cluster pairwise cosine floor
    int max_iterations = 10;       // consolidation fixpoint cap
};

class Repository {
public:
    int snapshot_version() const { return snapshot_version_; }
    std::size_t size() const { return strategies_.size(); }
    const std::map<std::string, Strategy>& strategies() const { return strategies_; }
    const std::vector<SuccessRecord>& success_records() const { return records_; }

    bool contains(const std::string& id) const { return strategies_.count(id) > 0; }

    const Strategy& strategy(const std::string& id) const {
        auto it = strategies_.find(id);
        if (it == strategies_.end()) throw std::out_of_range("no such strategy: " + id);
        return it->second;
    }

    // Frozen ordering strategy vectors are aligned to: ids ascending.
    std::vector<std::string> snapshot_order() const {
        std::vector<std::string> ids;
        ids.reserve(strategies_.size());
        for (const auto& [id, s] : strategies_) ids.push_back(id);
        return ids;
    }

    std::vector<Strategy> decode(const StrategyVector& vec) const {
        auto order = snapshot_order();
        if (vec.bits.size() != order.size())
            throw std::invalid_argument("strategy vector length does not match snapshot");
        std::vector<Strategy> active;
        for (std::size_t i = 0; i < order.size(); ++i)
            if (vec.bits[i]) active.push_back(strategies_.at(order[i]));
        return active;
    }

    StrategyVector encode(const std::vector<std::string>& ids) const {
        auto order = snapshot_order();
        StrategyVector vec;
        vec.snapshot_version = snapshot_version_;
        vec.bits.assign(order.size(), 0);
        for (const auto& id : ids) {
            auto it = std::lower_bound(order.begin(), order.end(), id);
            if (it == order.end() || *it != id) continue; // remapped-away ids are skipped
            vec.bits[static_cast<std::size_t>(it - order.begin())] = 1;
        }
        return vec;
    }

    friend struct RepositoryOps;

private:
    std::map<std::string, Strategy> strategies_;
    std::unordered_map<std::uint64_t, std::string> body_hash_to_id_;
    std::vector<SuccessRecord> records_;
    int snapshot_version_ = 0;
    int next_id_ = 0;
};

struct AddResult {
    Repository repo;
    std::vector<std::string> ids; // aligned with the input list (existing id on dedup)
};

struct RepositoryOps {
    static std::string format_id(int n) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "s%04d", n);
        return buf;
    }

    // Assign ids, embed when needed, dedup byte-identical bodies. The
    // snapshot version bumps only when the strategy set actually changes.
    static AddResult add_strategies(const Repository& repo, std::vector<Strategy> incoming,
                                    const EmbeddingProvider& provider) {
        AddResult out{repo, {}};
        bool mutated = false;
        for (Strategy& s : incoming) {
            if (s.summary.empty() || s.body.empty())
                throw std::invalid_argument("strategy summary and body must be non-empty");
            const std::uint64_t body_hash = fnv1a64(s.body);
            auto existing = out.repo.body_hash_to_id_.find(body_hash);
            if (existing != out.repo.body_hash_to_id_.end() &&
                out.repo.strategies_.at(existing->second).body == s.body) {
                Strategy& held = out.repo.strategies_.at(existing->second);
                for (const auto& p : s.provenance) {
                    bool seen = false;
                    for (const auto& q : held.provenance)
                        if (q.query_id == p.query_id && q.session_id == p.session_id) seen = true;
                    if (!seen) held.provenance.push_back(p);
                }
                out.ids.push_back(existing->second);
                continue;
            }
            if (s.embedding.empty()) s.embedding = provider.embed(s.body);
            if (std::abs(l2_norm(s.embedding) - 1.0) > 1e-6)
                s.embedding = normalized(std::move(s.embedding));
            s.id = format_id(out.repo.next_id_++);
            out.repo.body_hash_to_id_[body_hash] = s.id;
            out.ids.push_back(s.id);
            out.repo.strategies_.emplace(s.id, std::move(s));
            mutated = true;
        }
        if (mutated) ++out.repo.snapshot_version_;
        return out;
    }

    static Repository add_success_record(const Repository& repo, const Query& query,
                                         std::vector<std::string> strategy_ids, int score,
                                         const EmbeddingProvider& provider) {
        Repository next = repo;
        std::sort(strategy_ids.begin(), strategy_ids.end());
        strategy_ids.erase(std::unique(strategy_ids.begin(), strategy_ids.end()),
                           strategy_ids.end());
        for (const auto& id : strategy_ids)
            if (!next.contains(id))
                throw std::invalid_argument("success record references unknown strategy " + id);
        SuccessRecord rec;
        rec.query_id = query.id;
        rec.query_embedding = provider.embed(query.text);
        rec.strategy_ids = std::move(strategy_ids);
        rec.score = score;
        next.records_.push_back(std::move(rec));
        return next;
    }

    static void replace_strategies(Repository& repo, std::map<std::string, Strategy> strategies,
                                   const std::map<std::string, std::string>& remap) {
        repo.strategies_ = std::move(strategies);
        repo.body_hash_to_id_.clear();
        for (const auto& [id, s] : repo.strategies_) repo.body_hash_to_id_[fnv1a64(s.body)] = id;
        for (auto& rec : repo.records_) {
            std::set<std::string> ids;
            for (const auto& id : rec.strategy_ids) {
                auto it = remap.find(id);
                ids.insert(it == remap.end() ? id : it->second);
            }
            rec.strategy_ids.assign(ids.begin(), ids.end());
        }
        ++repo.snapshot_version_;
    }

    static int next_id(const Repository& repo) { return repo.next_id_; }
    static void set_next_id(Repository& repo, int v) { repo.next_id_ = v; }
    static void set_snapshot_version(Repository& repo, int v) { repo.snapshot_version_ = v; }
    static std::vector<SuccessRecord>& records(Repository& repo) { return repo.records_; }
    static std::map<std::string, Strategy>& strategies(Repository& repo) { return repo.strategies_; }
    static std::unordered_map<std::uint64_t, std::string>& body_index(Repository& repo) {
        return repo.body_hash_to_id_;
    }
};

inline AddResult add_strategies(const Repository& repo, std::vector<Strategy> strategies,
                                const EmbeddingProvider& provider) {
    return RepositoryOps::add_strategies(repo, std::move(strategies), provider);
}

inline Repository add_success_record(const Repository& repo, const Query& query,
                                     std::vector<std::string> strategy_ids, int score,
                                     const EmbeddingProvider& provider) {
    return RepositoryOps::add_success_record(repo, query, std::move(strategy_ids), score, provider);
}

struct SeedHit {
    std::vector<std::string> strategy_ids;
    int score = 0;
    double similarity = 0.0;
};

// Success records of the top_k nearest recorded queries by cosine similarity.
// Ties break by higher recorded score, then insertion order. Empty when the
// repository has no records; callers fall back to exploratory mode.
inline std::vector<SeedHit> retrieve_seeds(const Repository& repo, const Query& query, int top_k,
                                           const EmbeddingProvider& provider) {
    if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
    const auto& records = repo.success_records();
    if (records.empty()) return {};
    const std::vector<double> q = provider.embed(query.text);

    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> sims(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        sims[i] = cosine(q, records[i].query_embedding);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        if (records[a].score != records[b].score) return records[a].score > records[b].score;
        return a < b;
    });

    std::vector<SeedHit> hits;
    for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < top_k; ++i) {
        const auto& rec = records[order[i]];
        hits.push_back(SeedHit{rec.strategy_ids, rec.score, sims[order[i]]});
    }
    return hits;
}

// Greedy agglomerative partition under a cosine floor: a strategy joins the
// first cluster whose every member is at least merge_threshold similar, else
// starts its own. Within-cluster pairwise cosine >= threshold by construction.
inline std::vector<std::vector<Strategy>> cluster(const std::vector<Strategy>& strategies,
                                                  const KnowledgeParams& params) {
    if (strategies.empty()) throw std::invalid_argument("cluster requires at least one strategy");
    std::vector<std::vector<Strategy>> clusters;
    for (const auto& s : strategies) {
        bool placed = false;
        for (auto& c : clusters) {
            bool close_to_all = true;
            for (const auto& member : c) {
                if (cosine(s.embedding, member.embedding) < params.merge_threshold) {
                    close_to_all = false;
                    break;
                }
            }
            if (close_to_all) {
                c.push_back(s);
                placed = true;
                break;
            }
        }
        if (!placed) clusters.push_back({s});
    }
    return clusters;
}

// Iterate cluster -> merge -> rewrite until the strategy count stabilizes (or
// max_iterations). The count is non-increasing: merge never returns more than
// its cluster, and format errors pass clusters through untouched. Success
// records are remapped so every reference resolves after every iteration.
inline Repository consolidate(const Repository& repo, const Agent& merger,
                              const KnowledgeParams& params, const EmbeddingProvider& provider,
                              EventLog* log = nullptr) {
    Repository current = repo;
    for (int iteration = 0; iteration < params.max_iterations; ++iteration) {
        if (current.size() <= 1) break;
        std::vector<Strategy> all;
        for (const auto& id : current.snapshot_order()) all.push_back(current.strategy(id));
        auto clusters = cluster(all, params);

        std::map<std::string, Strategy> next_set;
        std::map<std::string, std::string> remap;
        int next_id = RepositoryOps::next_id(current);
        bool changed = false;

        for (auto& c : clusters) {
            std::vector<Strategy> merged = merge(merger, c, log);
            if (merged.size() < c.size()) changed = true;

            // Representative for remapping: the member with the most
            // provenance (ties: smallest id) if it survived, else the first
            // surviving output.
            const Strategy* rep_input = &c.front();
            for (const auto& m : c)
                if (m.provenance.size() > rep_input->provenance.size() ||
                    (m.provenance.size() == rep_input->provenance.size() && m.id < rep_input->id))
                    rep_input = &m;

            std::set<std::string> surviving;
            for (Strategy& m : merged) {
                if (m.id.empty()) {
                    if (m.embedding.empty()) m.embedding = provider.embed(m.body);
                    m.id = RepositoryOps::format_id(next_id++);
                    changed = true;
                }
                surviving.insert(m.id);
            }
            std::string rep_id = surviving.count(rep_input->id) ? rep_input->id : merged.front().id;
            for (const auto& m : c)
                if (!surviving.count(m.id)) remap[m.id] = rep_id;
            for (Strategy& m : merged) next_set.emplace(m.id, std::move(m));
        }

        if (!changed) break;
        const std::size_t before = current.size();
        RepositoryOps::set_next_id(current, next_id);
        RepositoryOps::replace_strategies(current, std::move(next_set), remap);
        log_event(log, "CONSOLIDATE_ITERATION",
                  {{"iteration", iteration}, {"before", before}, {"after", current.size()}});
        if (current.size() == before) break;
    }
    return current;
}

// Every success record id must resolve; returns the dangling ids (empty means
// the audit passed).
inline std::vector<std::string> audit_references(const Repository& repo) {
    std::vector<std::string> dangling;
    for (const auto& rec : repo.success_records())
        for (const auto& id : rec.strategy_ids)
            if (!repo.contains(id)) dangling.push_back(id);
    return dangling;
}

// --- persistence -------------------------------------------------------------
//
// Single append-log file with periodic compacted snapshots. A SNAPSHOT line
// resets state and is followed by the full STRAT/RECORD dump; incremental
// STRAT/RECORD lines may then accumulate until the next compaction.

inline ojson record_to_wire(const SuccessRecord& rec) {
    ojson obj;
    obj["query_id"] = rec.query_id;
    obj["query_embedding"] = rec.query_embedding;
    obj["strategy_ids"] = rec.strategy_ids;
    obj["score"] = rec.score;
    return obj;
}

inline SuccessRecord record_from_wire(const ojson& obj) {
    SuccessRecord rec;
    rec.query_id = obj.at("query_id").get<std::string>();
    rec.query_embedding = obj.at("query_embedding").get<std::vector<double>>();
    rec.strategy_ids = obj.at("strategy_ids").get<std::vector<std::string>>();
    rec.score = obj.at("score").get<int>();
    return rec;
}

inline void save_repository(const Repository& repo, const std::string& path) {
    std::vector<ojson> lines;
    ojson head;
    head["kind"] = "SNAPSHOT";
    head["snapshot_version"] = repo.snapshot_version();
    head["next_id"] = RepositoryOps::next_id(repo);
    lines.push_back(std::move(head));
    for (const auto& id : repo.snapshot_order()) {
        ojson line;
        line["kind"] = "STRAT";
        line["snapshot_version"] = repo.snapshot_version();
        line["strategy"] = to_wire(repo.strategy(id));
        lines.push_back(std::move(line));
    }
    for (const auto& rec : repo.success_records()) {
        ojson line;
        line["kind"] = "RECORD";
        line["snapshot_version"] = repo.snapshot_version();
        line["record"] = record_to_wire(rec);
        lines.push_back(std::move(line));
    }
    write_jsonl(path, lines);
}

inline Repository load_repository(const std::string& path) {
    Repository repo;
    int max_seen_id = -1;
    int max_version = 0;
    for (const auto& line : read_jsonl(path)) {
        const std::string kind = line.at("kind").get<std::string>();
        if (kind == "SNAPSHOT") {
            repo = Repository{};
            max_seen_id = -1;
            max_version = line.at("snapshot_version").get<int>();
            RepositoryOps::set_snapshot_version(repo, max_version);
            RepositoryOps::set_next_id(repo, line.at("next_id").get<int>());
        } else if (kind == "STRAT") {
            // last write wins: incremental lines may update provenance
            Strategy s = strategy_from_wire(line.at("strategy"));
            if (s.id.size() > 1) max_seen_id = std::max(max_seen_id, std::atoi(s.id.c_str() + 1));
            max_version = std::max(max_version, line.value("snapshot_version", 0));
            RepositoryOps::body_index(repo)[fnv1a64(s.body)] = s.id;
            RepositoryOps::strategies(repo).insert_or_assign(s.id, std::move(s));
        } else if (kind == "RECORD") {
            max_version = std::max(max_version, line.value("snapshot_version", 0));
            RepositoryOps::records(repo).push_back(record_from_wire(line.at("record")));
        } else {
            throw std::runtime_error(path + ": unknown repository record kind " + kind);
        }
    }
    if (max_seen_id + 1 > RepositoryOps::next_id(repo))
        RepositoryOps::set_next_id(repo, max_seen_id + 1);
    if (max_version > repo.snapshot_version())
        RepositoryOps::set_snapshot_version(repo, max_version);
    if (auto dangling = audit_references(repo); !dangling.empty())
        throw std::runtime_error(path + ": dangling strategy reference " + dangling.front());
    return repo;
}

// Incremental persistence: flush one query's additions without rewriting the
// whole file. A later save_repository() compacts the log.
inline void append_repository_lines(const std::string& path, const Repository& repo,
                                    const std::vector<std::string>& strategy_ids,
                                    const SuccessRecord* record) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to repository file: " + path);
    std::set<std::string> unique(strategy_ids.begin(), strategy_ids.end());
    for (const auto& id : unique) {
        ojson line;
        line["kind"] = "STRAT";
        line["snapshot_version"] = repo.snapshot_version();
        line["strategy"] = to_wire(repo.strategy(id));
        out << wire_line(line) << '\n';
    }
    if (record) {
        ojson line;
        line["kind"] = "RECORD";
        line["snapshot_version"] = repo.snapshot_version();
        line["record"] = record_to_wire(*record);
        out << wire_line(line) << '\n';
    }
    out.flush();
}

// Serialized writes, consistent snapshots for readers. Consolidation during a
// fuzz run is excluded by the same writer lock that fuzz result writes take.
class RepositoryStore {
public:
    explicit RepositoryStore(Repository repo = {})
        : snapshot_(std::make_shared<const Repository>(std::move(repo))) {}

    std::shared_ptr<const Repository> read() const {
        std::lock_guard<std::mutex> lock(mu_);
        return snapshot_;
    }

    template <typename Fn>
    void update(Fn&& fn) {
        std::lock_guard<std::mutex> lock(writer_);
        Repository next;
        {
            std::lock_guard<std::mutex> rl(mu_);
            next = *snapshot_;
        }
        fn(next);
        auto fresh = std::make_shared<const Repository>(std::move(next));
        std::lock_guard<std::mutex> rl(mu_);
        snapshot_ = std::move(fresh);
    }

private:
    mutable std::mutex mu_;
    std::mutex writer_;
    std::shared_ptr<const Repository> snapshot_;
};

} // namespace redfuzz
