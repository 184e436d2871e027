#include <doctest.h>

#include "testutil.hpp"

using namespace redfuzz;

namespace {

Turn make_turn(int index, const std::string& tag) {
    Turn t;
    t.prompt = "u" + std::to_string(index) + "_" + tag;
    t.response = "r" + std::to_string(index) + "_" + tag;
    t.turn_index = index;
    return t;
}

DialogueTree chain_of(int depth) {
    DialogueTree tree;
    for (int i = 1; i <= depth; ++i) tree = commit_turn(tree, make_turn(i, "chain"));
    return tree;
}

// Independent reference: flat list of (parent, turn) pairs replayed alongside
// the real tree.
struct RefTree {
    std::vector<std::pair<int, Turn>> nodes; // id = index + 1
    int active = 0;

    int depth_of(int id) const {
        int d = 0;
        while (id != 0) {
            id = nodes[static_cast<std::size_t>(id - 1)].first;
            ++d;
        }
        return d;
    }

    void commit(const Turn& t) {
        nodes.push_back({active, t});
        active = static_cast<int>(nodes.size());
    }

    void backtrack(int k) {
        while (depth_of(active) > k) active = nodes[static_cast<std::size_t>(active - 1)].first;
    }

    std::vector<int> active_path() const {
        std::vector<int> ids;
        for (int cur = active; cur != 0; cur = nodes[static_cast<std::size_t>(cur - 1)].first)
            ids.push_back(cur);
        std::reverse(ids.begin(), ids.end());
        return ids;
    }
};

} // namespace

TEST_CASE("commit_turn appends under the active leaf") {
    DialogueTree empty;
    auto one = commit_turn(empty, make_turn(1, "a"));
    CHECK(one.depth() == 1);
    CHECK(one.history().size() == 1);
    CHECK(empty.depth() == 0); // the input value is untouched

    auto three = chain_of(3);
    auto before = three.to_json()["nodes"].dump();
    auto four = commit_turn(three, make_turn(4, "a"));
    CHECK(four.depth() == 4);
    // all prior nodes bit-identical
    for (int id = 1; id <= 3; ++id)
        CHECK(four.node_record(id).dump() == three.node_record(id).dump());
    CHECK(three.to_json()["nodes"].dump() == before);

    CHECK_THROWS_AS(commit_turn(three, make_turn(2, "bad")), std::invalid_argument);
    CHECK(three.depth() == 3);
    CHECK(three.node_count() == 3);
}

TEST_CASE("backtrack moves the leaf without deleting nodes") {
    auto tree = chain_of(5);
    auto back = backtrack(tree, 3);
    CHECK(back.depth() == 3);
    CHECK(back.history().size() == 3);
    CHECK(back.node_count() == 5); // original path still stored

    auto root = backtrack(tree, 0);
    CHECK(root.depth() == 0);
    CHECK(root.history().empty());

    CHECK_THROWS_AS(backtrack(tree, 6), std::out_of_range);
    CHECK_THROWS_AS(backtrack(tree, -1), std::out_of_range);
}

TEST_CASE("backtrack then commit creates a sibling branch") {
    // Hand-built expectation: chain 1-2-3, backtrack to depth 2, commit a new
    // turn -> node 4 whose parent is node 2; node 3 still present.
    auto tree = chain_of(3);
    auto branched = commit_turn(backtrack(tree, 2), make_turn(3, "alt"));
    CHECK(branched.node_count() == 4);
    CHECK(branched.parent_of(3) == 2);
    CHECK(branched.parent_of(4) == 2);
    CHECK(branched.active_leaf() == 4);
    CHECK(branched.turn_at(4).prompt == "u3_alt");
    CHECK(branched.turn_at(3).prompt == "u3_chain");
    auto path = branched.active_path();
    CHECK(path == std::vector<int>({1, 2, 4}));
}

TEST_CASE("tree audit: random op sequences match the flat reference") {
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        DialogueTree tree;
        RefTree ref;
        for (int op = 0; op < 30; ++op) {
            if (ref.active == 0 || rng.bernoulli(0.7)) {
                Turn t = make_turn(ref.depth_of(ref.active) + 1,
                                   "t" + std::to_string(trial) + "_" + std::to_string(op));
                tree = commit_turn(tree, t);
                ref.commit(t);
            } else {
                int k = rng.uniform_int(0, ref.depth_of(ref.active));
                tree = backtrack(tree, k);
                ref.backtrack(k);
            }
            REQUIRE(tree.node_count() == static_cast<int>(ref.nodes.size()));
            REQUIRE(tree.active_leaf() == ref.active);
        }
        // identical node set
        for (int id = 1; id <= tree.node_count(); ++id) {
            REQUIRE(tree.parent_of(id) == ref.nodes[static_cast<std::size_t>(id - 1)].first);
            REQUIRE(tree.turn_at(id).prompt ==
                    ref.nodes[static_cast<std::size_t>(id - 1)].second.prompt);
        }
        REQUIRE(tree.active_path() == ref.active_path());
        // path consistency: indices 1..d with no gaps on every root-to-leaf path
        for (int id = 1; id <= tree.node_count(); ++id) {
            auto path = tree.path_to(id);
            for (std::size_t i = 0; i < path.size(); ++i)
                REQUIRE(tree.turn_at(path[i]).turn_index == static_cast<int>(i) + 1);
        }
    }
}

TEST_CASE("history immutability under commit and score backfill") {
    auto tree = chain_of(4);
    std::vector<std::string> before;
    for (int id = 1; id <= 4; ++id) before.push_back(tree.node_record(id).dump());

    auto grown = commit_turn(tree, make_turn(5, "x"));
    for (int id = 1; id <= 4; ++id) CHECK(grown.node_record(id).dump() == before[static_cast<std::size_t>(id - 1)]);

    auto scored = grown.with_judge_score(2, 7);
    CHECK(scored.turn_at(2).judge_score == 7);
    CHECK(scored.turn_at(2).prompt == grown.turn_at(2).prompt);
    CHECK(scored.turn_at(2).response == grown.turn_at(2).response);
    CHECK(grown.turn_at(2).judge_score == std::nullopt); // value semantics
    CHECK_THROWS_AS(grown.with_judge_score(2, 11), std::invalid_argument);
    CHECK_THROWS_AS(grown.with_judge_score(9, 5), std::out_of_range);
}

TEST_CASE("session_max_score") {
    SessionOutcome outcome;
    outcome.per_turn_scores = {3, 7, 5};
    CHECK(session_max_score(outcome) == 7);
    outcome.per_turn_scores = {};
    CHECK(session_max_score(outcome) == 0);
    outcome.per_turn_scores = {10};
    CHECK(session_max_score(outcome) == 10);
}

TEST_CASE("turn and plan validation") {
    Turn bad;
    bad.turn_index = 0;
    CHECK_THROWS_AS(validate_turn(bad), std::invalid_argument);
    bad.turn_index = 1;
    bad.judge_score = 11;
    CHECK_THROWS_AS(validate_turn(bad), std::invalid_argument);

    Plan p;
    CHECK_THROWS_AS(validate_plan(p, 6), std::invalid_argument);
    for (int i = 0; i < 7; ++i) p.steps.push_back(PlanStep{"i", "e"});
    CHECK_THROWS_AS(validate_plan(p, 6), std::invalid_argument);
    p.steps.resize(3);
    CHECK_NOTHROW(validate_plan(p, 6));
    p.origin = PlanOrigin::Exploratory;
    p.strategy_ids = {"s0001"};
    CHECK_THROWS_AS(validate_plan(p, 6), std::invalid_argument);
}

TEST_CASE("strategy vector bitstrings and popcount") {
    auto v = StrategyVector::from_bitstring("00100100", 3);
    CHECK(v.popcount() == 2);
    CHECK(v.to_bitstring() == "00100100");
    CHECK(v.snapshot_version == 3);
    CHECK_THROWS_AS(StrategyVector::from_bitstring("01x", 0), std::invalid_argument);
    CHECK_THROWS_AS(validate_strategy_vector(v, 7, 6), std::invalid_argument);
    CHECK_THROWS_AS(validate_strategy_vector(v, 8, 1), std::invalid_argument);
    CHECK_NOTHROW(validate_strategy_vector(v, 8, 6));
}

TEST_CASE("canonical serialization round-trips byte-identically") {
    auto tree = commit_turn(backtrack(chain_of(3), 1), make_turn(2, "alt"));
    auto tree2 = DialogueTree::from_json(tree.to_json());
    CHECK(tree2.to_json().dump() == tree.to_json().dump());

    Turn t = make_turn(4, "wire");
    t.judge_score = 6;
    CHECK(to_wire(turn_from_wire(to_wire(t))).dump() == to_wire(t).dump());
    Query q = testutil::make_query("q1", "an objective");
    CHECK(to_wire(query_from_wire(to_wire(q))).dump() == to_wire(q).dump());

    Plan p;
    p.steps = {{"ask about the setting", "model describes it"},
               {"narrow to specifics", "model provides detail"}};
    p.origin = PlanOrigin::Fuzzed;
    p.strategy_ids = {"s0001", "s0004"};
    CHECK(to_wire(plan_from_wire(to_wire(p))).dump() == to_wire(p).dump());

    Strategy s = testutil::make_strategy("s0002", "framing", "use an indirect framing device",
                                         {0.6, 0.8});
    s.provenance.push_back({"q1", "sess-1"});
    CHECK(to_wire(strategy_from_wire(to_wire(s))).dump() == to_wire(s).dump());

    SessionOutcome o;
    o.session_id = "sess-9";
    o.dialogue = tree;
    o.plan = p;
    o.per_turn_scores = {4, 9};
    o.max_score = 9;
    o.turns_used = 3;
    o.termination = Termination::Succeeded;
    CHECK(to_wire(session_outcome_from_wire(to_wire(o))).dump() == to_wire(o).dump());
}
