#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "redfuzz/wire.hpp"

namespace redfuzz {

// Shared domain types for dialogues, plans, strategies, scores and
// trajectories. Everything in this header is an immutable value after
// construction; operations return new values, so instances can be shared
// across threads without coordination.

struct Query {
    std::string id;
    std::string text;
    std::string category; // optional free-form tag
};

inline void validate_query(const Query& q) {
    if (q.id.empty()) throw std::invalid_argument("query id must be non-empty");
    if (q.text.empty()) throw std::invalid_argument("query text must be non-empty");
}

struct Turn {
    std::string prompt;
    std::string response;
    int turn_index = 1; // 1-based
    std::optional<int> judge_score; // in [1,10] when present, back-filled after commit
};

inline void validate_turn(const Turn& t) {
    if (t.turn_index < 1) throw std::invalid_argument("turn_index must be >= 1");
    if (t.judge_score && (*t.judge_score < 1 || *t.judge_score > 10))
        throw std::invalid_argument("judge_score must be in [1,10]");
}

// Branching record of genuine target-model exchanges. Node 0 is the implicit
// empty-history root; committed nodes are append-only and their prompt and
// response text is never modified afterwards (only judge_score may be
// back-filled). The current context is always the derived root->active_leaf
// path, never stored separately.
class DialogueTree {
public:
    DialogueTree() = default;
    explicit DialogueTree(std::string system_prompt_fingerprint)
        : fingerprint_(std::move(system_prompt_fingerprint)) {}

    int node_count() const { return static_cast<int>(nodes_.size()); }
    int active_leaf() const { return active_leaf_; }
    const std::string& fingerprint() const { return fingerprint_; }

    int depth_of(int node_id) const {
        check_node(node_id);
        return node_id == 0 ? 0 : nodes_[static_cast<std::size_t>(node_id - 1)].depth;
    }

    int depth() const { return depth_of(active_leaf_); }

    int parent_of(int node_id) const {
        if (node_id <= 0 || node_id > node_count())
            throw std::out_of_range("no such committed node");
        return nodes_[static_cast<std::size_t>(node_id - 1)].parent;
    }

    const Turn& turn_at(int node_id) const {
        if (node_id <= 0 || node_id > node_count())
            throw std::out_of_range("no such committed node");
        return nodes_[static_cast<std::size_t>(node_id - 1)].turn;
    }

    // Node ids along root->active_leaf, root excluded.
    std::vector<int> active_path() const { return path_to(active_leaf_); }

    std::vector<int> path_to(int node_id) const {
        check_node(node_id);
        std::vector<int> ids;
        for (int cur = node_id; cur != 0; cur = parent_of(cur)) ids.push_back(cur);
        std::reverse(ids.begin(), ids.end());
        return ids;
    }

    // The linear context H_t: turns along the active path.
    std::vector<Turn> history() const {
        std::vector<Turn> turns;
        for (int id : active_path()) turns.push_back(turn_at(id));
        return turns;
    }

    DialogueTree commit(Turn turn) const {
        validate_turn(turn);
        if (turn.turn_index != depth() + 1)
            throw std::invalid_argument("commit rejected: turn_index " +
                                        std::to_string(turn.turn_index) + " does not extend depth " +
                                        std::to_string(depth()));
        DialogueTree next(*this);
        next.nodes_.push_back(Node{active_leaf_, depth() + 1, std::move(turn)});
        next.active_leaf_ = next.node_count();
        return next;
    }

    // Move the active leaf to the depth-k ancestor. Nothing is deleted; a
    // subsequent commit creates a sibling branch.
    DialogueTree backtracked(int k) const {
        if (k < 0 || k > depth())
            throw std::out_of_range("backtrack depth " + std::to_string(k) + " out of range [0," +
                                    std::to_string(depth()) + "]");
        DialogueTree next(*this);
        int cur = active_leaf_;
        while (depth_of(cur) > k) cur = parent_of(cur);
        next.active_leaf_ = cur;
        return next;
    }

    DialogueTree with_judge_score(int node_id, int score) const {
        if (node_id <= 0 || node_id > node_count())
            throw std::out_of_range("no such committed node");
        if (score < 1 || score > 10) throw std::invalid_argument("judge_score must be in [1,10]");
        DialogueTree next(*this);
        next.nodes_[static_cast<std::size_t>(node_id - 1)].turn.judge_score = score;
        return next;
    }

    // Single-line encoding of one node; stable across later commits.
    ojson node_record(int node_id) const {
        const Turn& t = turn_at(node_id);
        ojson rec;
        rec["id"] = node_id;
        rec["parent"] = parent_of(node_id);
        rec["turn_index"] = t.turn_index;
        rec["prompt"] = t.prompt;
        rec["response"] = t.response;
        if (t.judge_score) rec["judge_score"] = *t.judge_score;
        else rec["judge_score"] = nullptr;
        return rec;
    }

    ojson to_json() const {
        ojson obj;
        obj["fingerprint"] = fingerprint_;
        obj["active_leaf"] = active_leaf_;
        ojson nodes = ojson::array();
        for (int id = 1; id <= node_count(); ++id) nodes.push_back(node_record(id));
        obj["nodes"] = std::move(nodes);
        return obj;
    }

    static DialogueTree from_json(const ojson& obj) {
        DialogueTree tree(obj.at("fingerprint").get<std::string>());
        for (const auto& rec : obj.at("nodes")) {
            Node node;
            node.parent = rec.at("parent").get<int>();
            node.turn.turn_index = rec.at("turn_index").get<int>();
            node.turn.prompt = rec.at("prompt").get<std::string>();
            node.turn.response = rec.at("response").get<std::string>();
            if (!rec.at("judge_score").is_null())
                node.turn.judge_score = rec.at("judge_score").get<int>();
            if (node.parent < 0 || node.parent > tree.node_count())
                throw std::invalid_argument("dialogue tree record has dangling parent");
            node.depth = (node.parent == 0 ? 0 : tree.nodes_[static_cast<std::size_t>(node.parent - 1)].depth) + 1;
            tree.nodes_.push_back(std::move(node));
        }
        tree.active_leaf_ = obj.at("active_leaf").get<int>();
        tree.check_node(tree.active_leaf_);
        return tree;
    }

private:
    struct Node {
        int parent = 0;
        int depth = 1;
        Turn turn;
    };

    void check_node(int node_id) const {
        if (node_id < 0 || node_id > node_count()) throw std::out_of_range("no such node");
    }

    std::vector<Node> nodes_;
    int active_leaf_ = 0;
    std::string fingerprint_;
};

inline DialogueTree commit_turn(const DialogueTree& tree, Turn turn) {
    return tree.commit(std::move(turn));
}

inline DialogueTree backtrack(const DialogueTree& tree, int k) {
    return tree.backtracked(k);
}

struct PlanStep {
    std::string instruction;
    std::string expected_behavior;
};

enum class PlanOrigin { Exploratory, Retrieved, Reflected, Fuzzed };

inline std::string to_string(PlanOrigin origin) {
    switch (origin) {
        case PlanOrigin::Exploratory: return "exploratory";
        case PlanOrigin::Retrieved: return "retrieved";
        case PlanOrigin::Reflected: return "reflected";
        case PlanOrigin::Fuzzed: return "fuzzed";
    }
    return "exploratory";
}

inline PlanOrigin plan_origin_from_string(const std::string& s) {
    if (s == "exploratory") return PlanOrigin::Exploratory;
    if (s == "retrieved") return PlanOrigin::Retrieved;
    if (s == "reflected") return PlanOrigin::Reflected;
    if (s == "fuzzed") return PlanOrigin::Fuzzed;
    throw std::invalid_argument("unknown plan origin: " + s);
}

struct Plan {
    std::vector<PlanStep> steps;
    PlanOrigin origin = PlanOrigin::Exploratory;
    std::vector<std::string> strategy_ids; // empty for exploratory plans
};

inline void validate_plan(const Plan& plan, int max_plan_steps) {
    if (plan.steps.empty()) throw std::invalid_argument("plan must have at least one step");
    if (static_cast<int>(plan.steps.size()) > max_plan_steps)
        throw std::invalid_argument("plan exceeds max_plan_steps");
    for (const auto& step : plan.steps)
        if (step.instruction.empty() || step.expected_behavior.empty())
            throw std::invalid_argument("plan step fields must be non-empty");
    if (plan.origin == PlanOrigin::Exploratory && !plan.strategy_ids.empty())
        throw std::invalid_argument("exploratory plans must not reference strategies");
}

struct StrategyProvenance {
    std::string query_id;
    std::string session_id;
};

// Abstract interaction pattern distilled from a successful session. The body
// is content-free of any specific objective; embedding is unit-normalized.
struct Strategy {
    std::string id;
    std::string summary;
    std::string body;
    std::vector<double> embedding;
    std::vector<StrategyProvenance> provenance;
};

// Binary activation chromosome over a frozen repository snapshot ordering.
struct StrategyVector {
    std::vector<std::uint8_t> bits;
    int snapshot_version = 0;

    int popcount() const {
        int n = 0;
        for (auto b : bits) n += (b != 0);
        return n;
    }

    std::string to_bitstring() const {
        std::string s;
        s.reserve(bits.size());
        for (auto b : bits) s.push_back(b ? '1' : '0');
        return s;
    }

    static StrategyVector from_bitstring(const std::string& s, int snapshot_version) {
        StrategyVector v;
        v.snapshot_version = snapshot_version;
        v.bits.reserve(s.size());
        for (char c : s) {
            if (c != '0' && c != '1') throw std::invalid_argument("bitstring must be 0/1 only");
            v.bits.push_back(c == '1' ? 1 : 0);
        }
        return v;
    }

    friend bool operator==(const StrategyVector& a, const StrategyVector& b) {
        return a.snapshot_version == b.snapshot_version && a.bits == b.bits;
    }
};

inline void validate_strategy_vector(const StrategyVector& v, std::size_t snapshot_size,
                                     int max_active_strategies) {
    if (v.bits.size() != snapshot_size)
        throw std::invalid_argument("strategy vector length does not match snapshot");
    if (v.popcount() > max_active_strategies)
        throw std::invalid_argument("strategy vector activates more than max_active_strategies");
}

enum class Termination { Succeeded, BudgetExhausted, Aborted, GatewayError };

inline std::string to_string(Termination t) {
    switch (t) {
        case Termination::Succeeded: return "succeeded";
        case Termination::BudgetExhausted: return "budget_exhausted";
        case Termination::Aborted: return "aborted";
        case Termination::GatewayError: return "gateway_error";
    }
    return "gateway_error";
}

inline Termination termination_from_string(const std::string& s) {
    if (s == "succeeded") return Termination::Succeeded;
    if (s == "budget_exhausted") return Termination::BudgetExhausted;
    if (s == "aborted") return Termination::Aborted;
    if (s == "gateway_error") return Termination::GatewayError;
    throw std::invalid_argument("unknown termination: " + s);
}

struct SessionOutcome {
    std::string session_id;
    DialogueTree dialogue;
    Plan plan;
    std::vector<int> per_turn_scores; // aligned with the committed path
    int max_score = 0;                // 0 for sessions with no judged turns
    int turns_used = 0;
    Termination termination = Termination::BudgetExhausted;
};

// Maximum per-turn judge score; 0 for an empty session so gateway-failed
// sessions never count as successes.
inline int session_max_score(const SessionOutcome& outcome) {
    int best = 0;
    for (int s : outcome.per_turn_scores) best = std::max(best, s);
    return best;
}

// --- canonical wire encodings -------------------------------------------

inline ojson to_wire(const Query& q) {
    ojson obj;
    obj["id"] = q.id;
    obj["text"] = q.text;
    obj["category"] = q.category;
    return obj;
}

inline Query query_from_wire(const ojson& obj) {
    Query q;
    q.id = obj.at("id").get<std::string>();
    q.text = obj.at("text").get<std::string>();
    q.category = obj.value("category", std::string{});
    validate_query(q);
    return q;
}

inline ojson to_wire(const Turn& t) {
    ojson obj;
    obj["turn_index"] = t.turn_index;
    obj["prompt"] = t.prompt;
    obj["response"] = t.response;
    if (t.judge_score) obj["judge_score"] = *t.judge_score;
    else obj["judge_score"] = nullptr;
    return obj;
}

inline Turn turn_from_wire(const ojson& obj) {
    Turn t;
    t.turn_index = obj.at("turn_index").get<int>();
    t.prompt = obj.at("prompt").get<std::string>();
    t.response = obj.at("response").get<std::string>();
    if (!obj.at("judge_score").is_null()) t.judge_score = obj.at("judge_score").get<int>();
    validate_turn(t);
    return t;
}

inline ojson to_wire(const PlanStep& s) {
    ojson obj;
    obj["instruction"] = s.instruction;
    obj["expect"] = s.expected_behavior;
    return obj;
}

inline ojson to_wire(const Plan& p) {
    ojson obj;
    obj["origin"] = to_string(p.origin);
    obj["strategy_ids"] = p.strategy_ids;
    ojson steps = ojson::array();
    for (const auto& s : p.steps) steps.push_back(to_wire(s));
    obj["steps"] = std::move(steps);
    return obj;
}

inline Plan plan_from_wire(const ojson& obj) {
    Plan p;
    p.origin = plan_origin_from_string(obj.at("origin").get<std::string>());
    p.strategy_ids = obj.at("strategy_ids").get<std::vector<std::string>>();
    for (const auto& s : obj.at("steps"))
        p.steps.push_back(PlanStep{s.at("instruction").get<std::string>(),
                                   s.at("expect").get<std::string>()});
    return p;
}

inline ojson to_wire(const Strategy& s) {
    ojson obj;
    obj["id"] = s.id;
    obj["summary"] = s.summary;
    obj["body"] = s.body;
    obj["embedding"] = s.embedding;
    ojson prov = ojson::array();
    for (const auto& p : s.provenance) {
        ojson rec;
        rec["query_id"] = p.query_id;
        rec["session_id"] = p.session_id;
        prov.push_back(std::move(rec));
    }
    obj["provenance"] = std::move(prov);
    return obj;
}

inline Strategy strategy_from_wire(const ojson& obj) {
    Strategy s;
    s.id = obj.at("id").get<std::string>();
    s.summary = obj.at("summary").get<std::string>();
    s.body = obj.at("body").get<std::string>();
    s.embedding = obj.at("embedding").get<std::vector<double>>();
    for (const auto& p : obj.at("provenance"))
        s.provenance.push_back(StrategyProvenance{p.at("query_id").get<std::string>(),
                                                  p.at("session_id").get<std::string>()});
    return s;
}

inline ojson to_wire(const StrategyVector& v) {
    ojson obj;
    obj["bits"] = v.to_bitstring();
    obj["snapshot_version"] = v.snapshot_version;
    return obj;
}

inline StrategyVector strategy_vector_from_wire(const ojson& obj) {
    return StrategyVector::from_bitstring(obj.at("bits").get<std::string>(),
                                          obj.at("snapshot_version").get<int>());
}

inline ojson to_wire(const SessionOutcome& o) {
    ojson obj;
    obj["session_id"] = o.session_id;
    obj["termination"] = to_string(o.termination);
    obj["max_score"] = o.max_score;
    obj["turns_used"] = o.turns_used;
    obj["per_turn_scores"] = o.per_turn_scores;
    obj["plan"] = to_wire(o.plan);
    obj["dialogue"] = o.dialogue.to_json();
    return obj;
}

inline SessionOutcome session_outcome_from_wire(const ojson& obj) {
    SessionOutcome o;
    o.session_id = obj.at("session_id").get<std::string>();
    o.termination = termination_from_string(obj.at("termination").get<std::string>());
    o.max_score = obj.at("max_score").get<int>();
    o.turns_used = obj.at("turns_used").get<int>();
    o.per_turn_scores = obj.at("per_turn_scores").get<std::vector<int>>();
    o.plan = plan_from_wire(obj.at("plan"));
    o.dialogue = DialogueTree::from_json(obj.at("dialogue"));
    return o;
}

} // namespace redfuzz
