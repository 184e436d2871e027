#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "redfuzz/agents.hpp"
#include "redfuzz/core.hpp"
#include "redfuzz/knowledge.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/rng.hpp"
#include "redfuzz/session.hpp"

namespace redfuzz {

// Strategy-space evolutionary search: optimize the binary activation vector x
// to maximize the execution oracle built from plan -> session -> judge.

struct FuzzConfig {
    int population_size = 8;
    int generations = 5;
    int tournament_size = 2;
    double mutation_rate = 0.1; // p_m, per-bit flip probability
    int elitism = 1;
    int success_threshold = 8; // tau
    std::uint64_t rng_seed = 0;
    int max_active_strategies = 6;
    // Cap on oracle calls (sessions actually executed); 0 derives
    // population_size * generations. Cache hits are free, so a budget-limited
    // run can evolve for more generations than a naive count suggests.
    int oracle_budget = 0;

    int effective_budget() const {
        return oracle_budget > 0 ? oracle_budget : population_size * generations;
    }
};

inline void validate_fuzz_config(const FuzzConfig& c) {
    if (c.population_size < 2) throw std::invalid_argument("population_size must be >= 2");
    if (c.mutation_rate < 0.0 || c.mutation_rate > 1.0)
        throw std::invalid_argument("mutation_rate must be in [0,1]");
    if (c.elitism < 0 || c.elitism >= c.population_size)
        throw std::invalid_argument("elitism must be in [0, population_size)");
    if (c.tournament_size < 1) throw std::invalid_argument("tournament_size must be >= 1");
    if (c.generations < 1) throw std::invalid_argument("generations must be >= 1");
}

struct Evaluated {
    StrategyVector vector;
    int fitness = 0; // judge max J, in [0,10]
    std::string outcome_ref; // session id
};

// --- genetic operators -------------------------------------------------------

// Tournament selection: tournament_size distinct uniform draws, winner is the
// max fitness, ties resolved uniformly among the tied. Drawing without
// replacement makes a full-population tournament exactly the global argmax.
inline const Evaluated& select(const std::vector<Evaluated>& population, int tournament_size,
                               Rng& rng) {
    if (population.empty()) throw std::invalid_argument("cannot select from empty population");
    const std::size_t n = population.size();
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(tournament_size), n);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> tied;
    int best = -1;
    for (std::size_t i = 0; i < k; ++i) { // partial Fisher-Yates draw
        std::size_t j = i + rng.uniform_u64(n - i);
        std::swap(pool[i], pool[j]);
        int f = population[pool[i]].fitness;
        if (f > best) {
            best = f;
            tied.assign(1, pool[i]);
        } else if (f == best) {
            tied.push_back(pool[i]);
        }
    }
    return population[tied[rng.uniform_u64(tied.size())]];
}

// Uniform crossover: each bit inherited from either parent with probability 0.5.
inline StrategyVector crossover(const StrategyVector& a, const StrategyVector& b, Rng& rng) {
    if (a.snapshot_version != b.snapshot_version || a.bits.size() != b.bits.size())
        throw std::invalid_argument("crossover parents must share a snapshot");
    StrategyVector child;
    child.snapshot_version = a.snapshot_version;
    child.bits.resize(a.bits.size());
    for (std::size_t k = 0; k < a.bits.size(); ++k)
        child.bits[k] = rng.bernoulli(0.5) ? a.bits[k] : b.bits[k];
    return child;
}

// Independent per-bit flip with probability p_m, before any popcount clamp.
inline StrategyVector flip_bits(const StrategyVector& x, double p_m, Rng& rng) {
    StrategyVector out = x;
    for (auto& bit : out.bits)
        if (rng.bernoulli(p_m)) bit = bit ? 0 : 1;
    return out;
}

// Clear uniformly-random active bits until popcount fits the plan cap.
inline StrategyVector clamp_popcount(StrategyVector x, int max_active, Rng& rng) {
    while (x.popcount() > max_active) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < x.bits.size(); ++i)
            if (x.bits[i]) active.push_back(i);
        x.bits[active[rng.uniform_u64(active.size())]] = 0;
    }
    return x;
}

inline StrategyVector mutate(const StrategyVector& x, double p_m, int max_active, Rng& rng) {
    return clamp_popcount(flip_bits(x, p_m, rng), max_active, rng);
}

inline StrategyVector random_vector(std::size_t length, int snapshot_version, int max_active,
                                    Rng& rng) {
    StrategyVector v;
    v.snapshot_version = snapshot_version;
    v.bits.assign(length, 0);
    if (length == 0) return v;
    const int target = rng.uniform_int(1, std::min<int>(max_active, static_cast<int>(length)));
    while (v.popcount() < target)
        v.bits[rng.uniform_u64(length)] = 1;
    return v;
}

// Semantic seed scheduling: encode the success records of the nearest
// recorded queries, pad with random vectors. An empty repository yields a
// fully random population.
inline std::vector<StrategyVector> seed_population(const Query& query, const Repository& repo,
                                                   const FuzzConfig& config,
                                                   const EmbeddingProvider& provider, Rng& rng) {
    std::vector<StrategyVector> population;
    if (!repo.success_records().empty()) {
        for (const auto& hit : retrieve_seeds(repo, query, config.population_size, provider)) {
            StrategyVector v = repo.encode(hit.strategy_ids);
            if (v.popcount() > config.max_active_strategies)
                v = clamp_popcount(std::move(v), config.max_active_strategies, rng);
            population.push_back(std::move(v));
            if (static_cast<int>(population.size()) >= config.population_size) break;
        }
    }
    while (static_cast<int>(population.size()) < config.population_size)
        population.push_back(random_vector(repo.size(), repo.snapshot_version(),
                                           config.max_active_strategies, rng));
    return population;
}

// --- execution oracle ----------------------------------------------------------

struct OracleResult {
    Evaluated evaluated;
    SessionOutcome outcome;
    bool from_cache = false;
    bool cacheable = true;
};

// Decodes a vector into strategies, has the planner instantiate them
// (origin=Fuzzed), runs the session and scores it. Results are cached on
// (bits, query, snapshot); gateway failures score 0 and are never cached.
class FuzzOracle {
public:
    FuzzOracle(const Agent& planner, SessionRunner& runner, const Target& target,
               const Repository& repo, const AgentLimits& limits)
        : planner_(planner), runner_(runner), target_(target), repo_(repo), limits_(limits) {}

    int sessions_executed() const { return sessions_executed_; }
    int cache_hits() const { return cache_hits_; }

    bool is_cached(const StrategyVector& x, const Query& query) const {
        return cache_.count(cache_key(x, query)) > 0;
    }

    OracleResult evaluate(const StrategyVector& x, const Query& query) {
        if (x.snapshot_version != repo_.snapshot_version())
            throw std::invalid_argument("strategy vector is stale for this repository snapshot");
        const std::string key = cache_key(x, query);
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++cache_hits_;
            OracleResult hit = it->second;
            hit.from_cache = true;
            return hit;
        }

        OracleResult result;
        result.evaluated.vector = x;
        try {
            const std::vector<Strategy> active = repo_.decode(x);
            const PlanOrigin origin = PlanOrigin::Fuzzed;
            Plan p = plan(planner_, query, active, origin, limits_, runner_.log());
            ++sessions_executed_;
            result.outcome = runner_.run(query, p, target_);
            result.evaluated.fitness = result.outcome.max_score;
            result.evaluated.outcome_ref = result.outcome.session_id;
            if (result.outcome.termination == Termination::GatewayError) {
                result.evaluated.fitness = 0;
                result.cacheable = false;
            }
        } catch (const GatewayError&) {
            result.evaluated.fitness = 0;
            result.cacheable = false;
        }
        if (result.cacheable) cache_.emplace(key, result);
        return result;
    }

private:
    static std::string cache_key(const StrategyVector& x, const Query& query) {
        return query.id + "|" + std::to_string(x.snapshot_version) + "|" + x.to_bitstring();
    }

    const Agent& planner_;
    SessionRunner& runner_;
    const Target& target_;
    const Repository& repo_;
    AgentLimits limits_;
    std::map<std::string, OracleResult> cache_;
    int sessions_executed_ = 0;
    int cache_hits_ = 0;
};

struct GenerationSummary {
    int generation = 0;
    int best_fitness = 0;
    int evaluations = 0; // sessions actually executed this generation
    int cache_hits = 0;
    std::string best_bits;
};

struct FuzzResult {
    Evaluated best;
    SessionOutcome best_outcome;
    std::vector<GenerationSummary> history;
    Repository repo; // updated with the success record when the search wins
    bool succeeded = false;
    int generations_to_success = -1; // generation index of first fitness >= tau
    int sessions_executed = 0;
};

// Generational loop: evaluate, early-stop on tau, carry elites, refill via
// select -> crossover -> mutate. Per-individual rng streams derive from
// (rng_seed, generation, index) so evaluation order cannot change results.
// A winning configuration is written back as a success record, closing the
// accumulation feedback loop.
inline FuzzResult run_fuzz(const Query& query, const Repository& repo, const Target& target,
                           const Agent& planner, SessionRunner& runner, const FuzzConfig& config,
                           const AgentLimits& limits, const EmbeddingProvider& provider,
                           EventLog* log = nullptr) {
    validate_fuzz_config(config);
    FuzzResult result;
    result.repo = repo;

    FuzzOracle oracle(planner, runner, target, repo, limits);
    Rng seed_rng = Rng::derive(config.rng_seed, 0x5eedULL, 0);
    std::vector<StrategyVector> population = seed_population(query, repo, config, provider, seed_rng);

    std::optional<Evaluated> best;
    SessionOutcome best_outcome;
    auto consider = [&](const Evaluated& e, const SessionOutcome& o) {
        if (!best || e.fitness > best->fitness) {
            best = e;
            best_outcome = o;
        }
    };

    const int budget = config.effective_budget();
    const int max_generations =
        config.oracle_budget > 0 ? std::max(config.generations, budget) : config.generations;
    for (int gen = 0; gen < max_generations; ++gen) {
        const int sessions_before = oracle.sessions_executed();
        const int hits_before = oracle.cache_hits();
        std::vector<Evaluated> evaluated;
        bool reached_tau = false;
        bool budget_exhausted = false;
        for (const auto& individual : population) {
            if (!oracle.is_cached(individual, query) && oracle.sessions_executed() >= budget) {
                budget_exhausted = true;
                break;
            }
            OracleResult r = oracle.evaluate(individual, query);
            evaluated.push_back(r.evaluated);
            consider(r.evaluated, r.outcome);
            if (r.evaluated.fitness >= config.success_threshold) {
                reached_tau = true;
                break;
            }
        }
        GenerationSummary summary;
        summary.generation = gen;
        summary.best_fitness = best ? best->fitness : 0;
        summary.evaluations = oracle.sessions_executed() - sessions_before;
        summary.cache_hits = oracle.cache_hits() - hits_before;
        summary.best_bits = best ? best->vector.to_bitstring() : "";
        result.history.push_back(summary);
        log_event(log, "GENERATION",
                  {{"query_id", query.id},
                   {"generation", gen},
                   {"best_fitness", summary.best_fitness},
                   {"evaluations", summary.evaluations},
                   {"cache_hits", summary.cache_hits},
                   {"best_bits", summary.best_bits}});
        if (reached_tau) {
            result.generations_to_success = gen;
            break;
        }
        if (budget_exhausted || evaluated.empty()) break;
        if (gen + 1 >= max_generations) break;

        // Next generation: elites by fitness (stable), offspring by tournament.
        std::vector<std::size_t> order(evaluated.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return evaluated[a].fitness > evaluated[b].fitness;
        });
        std::vector<StrategyVector> next;
        for (int e = 0; e < config.elitism && e < static_cast<int>(order.size()); ++e)
            next.push_back(evaluated[order[static_cast<std::size_t>(e)]].vector);
        for (int slot = static_cast<int>(next.size()); slot < config.population_size; ++slot) {
            Rng rng = Rng::derive(config.rng_seed, static_cast<std::uint64_t>(gen) + 1,
                                  static_cast<std::uint64_t>(slot));
            const Evaluated& pa = select(evaluated, config.tournament_size, rng);
            const Evaluated& pb = select(evaluated, config.tournament_size, rng);
            StrategyVector child = crossover(pa.vector, pb.vector, rng);
            next.push_back(mutate(child, config.mutation_rate, config.max_active_strategies, rng));
        }
        population = std::move(next);
    }

    result.sessions_executed = oracle.sessions_executed();
    if (best) {
        result.best = *best;
        result.best_outcome = best_outcome;
        result.succeeded = best->fitness >= config.success_threshold;
        if (result.succeeded) {
            std::vector<std::string> winning_ids;
            const auto snapshot = repo.snapshot_order();
            for (std::size_t i = 0; i < snapshot.size(); ++i)
                if (best->vector.bits[i]) winning_ids.push_back(snapshot[i]);
            result.repo =
                add_success_record(result.repo, query, winning_ids, best->fitness, provider);
            log_event(log, "RECORD_WRITE",
                      {{"query_id", query.id},
                       {"strategy_ids", winning_ids},
                       {"score", best->fitness}});
        }
    }
    return result;
}

} // namespace redfuzz
