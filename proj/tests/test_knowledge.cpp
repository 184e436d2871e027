#include <doctest.h>

#include <cmath>

#include "testutil.hpp"

using namespace redfuzz;
using namespace testutil;

namespace {

const EmbeddingProvider kProvider(64);

// Four orthogonal centroid directions on disjoint coordinate blocks, members
// perturbed inside their own block so within-cluster cosine stays high and
// cross-cluster cosine stays zero.
struct PlantedCorpus {
    std::vector<Strategy> strategies;
    std::vector<int> labels;

    static PlantedCorpus build(int dim = 64, int centroids = 4,
                               std::vector<int> sizes = {8, 8, 7, 7}) {
        PlantedCorpus corpus;
        const int block = dim / centroids;
        int counter = 0;
        for (int c = 0; c < centroids; ++c) {
            for (int m = 0; m < sizes[static_cast<std::size_t>(c)]; ++m) {
                std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
                for (int d = 0; d < block; ++d) v[static_cast<std::size_t>(c * block + d)] = 1.0;
                v[static_cast<std::size_t>(c * block + (m % block))] += 0.1;
                Strategy s = make_strategy("", "centroid-" + std::to_string(c),
                                           "C" + std::to_string(c) + "-member-" +
                                               std::to_string(m) + " pattern body",
                                           normalized(std::move(v)));
                s.provenance.push_back({"q" + std::to_string(counter), "sess"});
                if (m == 0) s.provenance.push_back({"q-extra" + std::to_string(c), "sess"});
                corpus.strategies.push_back(std::move(s));
                corpus.labels.push_back(c);
                ++counter;
            }
        }
        return corpus;
    }
};

} // namespace

TEST_CASE("deterministic embeddings: unit norm, replay-identical") {
    auto a = kProvider.embed("set the scene gradually");
    auto b = kProvider.embed("set the scene gradually");
    CHECK(a == b);
    CHECK(std::abs(l2_norm(a) - 1.0) < 1e-9);
    auto c = kProvider.embed("an entirely different idea");
    CHECK(cosine(a, c) < 0.99);
    CHECK_NOTHROW(kProvider.embed(""));
    CHECK(std::abs(l2_norm(kProvider.embed("")) - 1.0) < 1e-9);
    CHECK(std::abs(l2_norm(kProvider.embed("one")) - 1.0) < 1e-9);
}

TEST_CASE("add_strategies: ids, dedup, provenance union") {
    Repository repo;
    std::vector<Strategy> batch = {make_strategy("", "a", "body alpha"),
                                   make_strategy("", "b", "body beta"),
                                   make_strategy("", "c", "body gamma")};
    batch[0].provenance = {{"q1", "s1"}};
    auto added = add_strategies(repo, batch, kProvider);
    CHECK(added.repo.size() == 3);
    CHECK(added.ids == std::vector<std::string>({"s0000", "s0001", "s0002"}));
    CHECK(added.repo.snapshot_version() == 1);
    for (const auto& [id, s] : added.repo.strategies())
        CHECK(std::abs(l2_norm(s.embedding) - 1.0) < 1e-6);

    // byte-identical body: size unchanged, same id handed back, version stable
    Strategy again = make_strategy("", "a2", "body alpha");
    again.provenance = {{"q2", "s2"}};
    auto redo = add_strategies(added.repo, {again}, kProvider);
    CHECK(redo.repo.size() == 3);
    CHECK(redo.ids == std::vector<std::string>({"s0000"}));
    CHECK(redo.repo.snapshot_version() == 1);
    CHECK(redo.repo.strategy("s0000").provenance.size() == 2);

    CHECK_THROWS_AS(add_strategies(redo.repo, {make_strategy("", "", "")}, kProvider),
                    std::invalid_argument);
}

TEST_CASE("repository persistence round-trips byte-identically") {
    auto dir = scratch_dir("knowledge_persist");
    Repository repo;
    auto added = add_strategies(repo, {make_strategy("", "a", "alpha pattern"),
                                       make_strategy("", "b", "beta pattern")},
                                kProvider);
    repo = added.repo;
    repo = add_success_record(repo, make_query("q1", "first objective"), added.ids, 9, kProvider);

    const std::string path = dir + "/repo.jsonl";
    save_repository(repo, path);
    Repository loaded = load_repository(path);
    CHECK(loaded.size() == repo.size());
    CHECK(loaded.snapshot_version() == repo.snapshot_version());
    CHECK(loaded.success_records().size() == 1);

    const std::string path2 = dir + "/repo2.jsonl";
    save_repository(loaded, path2);
    CHECK(read_text_file(path) == read_text_file(path2));

    // fresh ids after load continue the sequence
    auto more = add_strategies(loaded, {make_strategy("", "c", "gamma pattern")}, kProvider);
    CHECK(more.ids == std::vector<std::string>({"s0002"}));

    CHECK_THROWS_AS(add_success_record(repo, make_query("q2", "x"), {"s9999"}, 8, kProvider),
                    std::invalid_argument);
}

TEST_CASE("retrieve_seeds: exact ranking with deterministic tie-breaks") {
    Repository repo;
    auto added = add_strategies(repo, {make_strategy("", "a", "alpha"),
                                       make_strategy("", "b", "beta")},
                                kProvider);
    repo = added.repo;

    CHECK(retrieve_seeds(repo, make_query("q", "anything"), 3, kProvider).empty());

    std::vector<std::string> texts = {"ask about history",      "discuss a novel",
                                      "describe a mechanism",   "walk through a recipe",
                                      "outline a protocol",     "sketch a scenario",
                                      "compare two options",    "review a draft",
                                      "simulate an interview",  "plan a trip"};
    for (std::size_t i = 0; i < texts.size(); ++i) {
        repo = add_success_record(repo, make_query("q" + std::to_string(i), texts[i]),
                                  {added.ids[i % 2]}, static_cast<int>(8 + i % 3), kProvider);
    }

    // the query itself ranks first with cosine exactly 1
    auto hits = retrieve_seeds(repo, make_query("probe", "outline a protocol"), 3, kProvider);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].similarity == doctest::Approx(1.0));
    CHECK(hits[0].strategy_ids == std::vector<std::string>({added.ids[4 % 2]}));

    // top-3 equals a brute-force scan
    Query probe = make_query("p", "walk through a protocol");
    auto q = kProvider.embed(probe.text);
    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < repo.success_records().size(); ++i)
        brute.push_back({cosine(q, repo.success_records()[i].query_embedding), i});
    std::stable_sort(brute.begin(), brute.end(), [&](auto& a, auto& b) {
        if (a.first != b.first) return a.first > b.first;
        const auto& ra = repo.success_records()[a.second];
        const auto& rb = repo.success_records()[b.second];
        if (ra.score != rb.score) return ra.score > rb.score;
        return a.second < b.second;
    });
    auto got = retrieve_seeds(repo, probe, 3, kProvider);
    REQUIRE(got.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const auto& expect = repo.success_records()[brute[static_cast<std::size_t>(i)].second];
        CHECK(got[static_cast<std::size_t>(i)].strategy_ids == expect.strategy_ids);
        CHECK(got[static_cast<std::size_t>(i)].score == expect.score);
    }

    // exact ties: identical embedding, different scores -> higher score first,
    // then insertion order
    Repository tied;
    auto t_added = add_strategies(tied, {make_strategy("", "x", "pattern x"),
                                         make_strategy("", "y", "pattern y"),
                                         make_strategy("", "z", "pattern z")},
                                  kProvider);
    tied = t_added.repo;
    tied = add_success_record(tied, make_query("t1", "same text"), {t_added.ids[0]}, 8, kProvider);
    tied = add_success_record(tied, make_query("t2", "same text"), {t_added.ids[1]}, 10, kProvider);
    tied = add_success_record(tied, make_query("t3", "same text"), {t_added.ids[2]}, 8, kProvider);
    auto tie_hits = retrieve_seeds(tied, make_query("t", "same text"), 3, kProvider);
    REQUIRE(tie_hits.size() == 3);
    CHECK(tie_hits[0].strategy_ids == std::vector<std::string>({t_added.ids[1]})); // score 10
    CHECK(tie_hits[1].strategy_ids == std::vector<std::string>({t_added.ids[0]})); // earlier insert
    CHECK(tie_hits[2].strategy_ids == std::vector<std::string>({t_added.ids[2]}));

    CHECK_THROWS_AS(retrieve_seeds(tied, make_query("t", "x"), 0, kProvider),
                    std::invalid_argument);
}

TEST_CASE("cluster: identical, orthogonal and planted corpora") {
    KnowledgeParams params; // threshold 0.85

    std::vector<Strategy> same = {make_strategy("s0", "a", "one", {1.0, 0.0}),
                                  make_strategy("s1", "b", "two", {1.0, 0.0}),
                                  make_strategy("s2", "c", "three", {1.0, 0.0})};
    CHECK(cluster(same, params).size() == 1);

    std::vector<Strategy> ortho = {make_strategy("s0", "a", "one", {1.0, 0.0}),
                                   make_strategy("s1", "b", "two", {0.0, 1.0}),
                                   make_strategy("s2", "c", "three", {1.0, 0.0})};
    auto two = cluster(ortho, params);
    CHECK(two.size() == 2);

    auto corpus = PlantedCorpus::build();
    auto clusters = cluster(corpus.strategies, params);
    REQUIRE(clusters.size() == 4);
    // pair-counting: the partition must match the planted labels exactly
    std::map<std::string, int> got_label;
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (const auto& s : clusters[c]) got_label[s.body] = static_cast<int>(c);
    for (std::size_t i = 0; i < corpus.strategies.size(); ++i)
        for (std::size_t j = i + 1; j < corpus.strategies.size(); ++j) {
            const bool same_planted = corpus.labels[i] == corpus.labels[j];
            const bool same_cluster = got_label[corpus.strategies[i].body] ==
                                      got_label[corpus.strategies[j].body];
            REQUIRE(same_planted == same_cluster);
        }
    // within-cluster cosine floor holds by construction
    for (const auto& c : clusters)
        for (std::size_t i = 0; i < c.size(); ++i)
            for (std::size_t j = i + 1; j < c.size(); ++j)
                REQUIRE(cosine(c[i].embedding, c[j].embedding) >= params.merge_threshold);

    CHECK_THROWS_AS(cluster({}, params), std::invalid_argument);
}

TEST_CASE("consolidate: duplicates collapse, references stay sound") {
    KnowledgeParams params;

    // near-duplicate bodies with identical embeddings reduce to one in a
    // single iteration via the scripted merge
    Repository repo;
    std::vector<Strategy> dups;
    for (int i = 0; i < 5; ++i) {
        auto s = make_strategy("", "dup", "DUPBODY variant " + std::to_string(i),
                               std::vector<double>{1.0, 0.0});
        dups.push_back(std::move(s));
    }
    auto added = add_strategies(repo, dups, kProvider);
    repo = added.repo;
    repo = add_success_record(repo, make_query("q1", "text one"), {added.ids[3]}, 9, kProvider);
    repo = add_success_record(repo, make_query("q2", "text two"), {added.ids[0], added.ids[4]}, 8,
                              kProvider);

    auto merger = scripted_agent(
        Role::Merge, const_script("STRATEGY\nSUMMARY: dup\nBODY: DUPBODY variant 0\n"));
    EventLog log;
    Repository compact = consolidate(repo, merger, params, kProvider, &log);
    CHECK(compact.size() == 1);
    CHECK(audit_references(compact).empty());
    for (const auto& rec : compact.success_records())
        CHECK(rec.strategy_ids == std::vector<std::string>({added.ids[0]}));
    CHECK(log.events_of_kind("CONSOLIDATE_ITERATION").size() == 1);

    // mutually orthogonal strategies are a fixpoint immediately
    Repository ortho;
    std::vector<Strategy> distinct = {
        make_strategy("", "a", "alpha", {1.0, 0.0, 0.0}),
        make_strategy("", "b", "beta", {0.0, 1.0, 0.0}),
        make_strategy("", "c", "gamma", {0.0, 0.0, 1.0})};
    ortho = add_strategies(ortho, distinct, kProvider).repo;
    const int version_before = ortho.snapshot_version();
    Repository same = consolidate(ortho, merger, params, kProvider);
    CHECK(same.size() == 3);
    CHECK(same.snapshot_version() == version_before);

    // planted 4-centroid corpus: exactly 4 survive, all records remap, the
    // count sequence is non-increasing
    auto corpus = PlantedCorpus::build();
    Repository planted;
    auto padd = add_strategies(planted, corpus.strategies, kProvider);
    planted = padd.repo;
    for (std::size_t i = 0; i < padd.ids.size(); i += 5)
        planted = add_success_record(planted, make_query("pq" + std::to_string(i), "text " + std::to_string(i)),
                                     {padd.ids[i]}, 9, kProvider);

    MockModelScript merge_script;
    for (int c = 0; c < 4; ++c)
        merge_script.rules.push_back(
            MockRule{{"C" + std::to_string(c) + "-member-"},
                     MatchScope::FullHistory,
                     "STRATEGY\nSUMMARY: centroid-" + std::to_string(c) + "\nBODY: C" +
                         std::to_string(c) + "-member-0 pattern body\n",
                     1});
    auto planted_merger = scripted_agent(Role::Merge, merge_script);
    EventLog plog;
    Repository reduced = consolidate(planted, planted_merger, params, kProvider, &plog);
    CHECK(reduced.size() == 4);
    CHECK(audit_references(reduced).empty());
    std::size_t prev = planted.size();
    for (const auto& ev : plog.events_of_kind("CONSOLIDATE_ITERATION")) {
        const auto after = ev.at("after").get<std::size_t>();
        CHECK(after <= prev);
        prev = after;
    }
    // every surviving id is a first member (the representative rule)
    for (const auto& [id, s] : reduced.strategies())
        CHECK(s.body.find("member-0") != std::string::npos);
}

TEST_CASE("repository store serializes writers and snapshots readers") {
    RepositoryStore store;
    auto before = store.read();
    store.update([&](Repository& r) {
        r = add_strategies(r, {make_strategy("", "a", "alpha body")}, kProvider).repo;
    });
    auto after = store.read();
    CHECK(before->size() == 0);
    CHECK(after->size() == 1);
}
