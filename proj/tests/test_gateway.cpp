#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "redfuzz/embedding_http.hpp"
#include "redfuzz/gateway_http.hpp"
#include "testutil.hpp"

using namespace redfuzz;

namespace {

Turn turn(int i) {
    Turn t;
    t.prompt = "u" + std::to_string(i);
    t.response = "r" + std::to_string(i);
    t.turn_index = i;
    return t;
}

} // namespace

TEST_CASE("build_request linearizes the active path") {
    DialogueTree empty;
    auto req = build_request(empty, "p");
    REQUIRE(req.messages.size() == 1);
    CHECK(req.messages[0].role == "user");
    CHECK(req.messages[0].text == "p");

    auto two = commit_turn(commit_turn(empty, turn(1)), turn(2));
    req = build_request(two, "p");
    REQUIRE(req.messages.size() == 5);
    const char* roles[] = {"user", "assistant", "user", "assistant", "user"};
    for (int i = 0; i < 5; ++i) CHECK(req.messages[static_cast<std::size_t>(i)].role == roles[i]);
    CHECK(req.messages[1].text == "r1");
    CHECK(req.messages[4].text == "p");

    // after backtrack(1) on a depth-3 tree, only turn 1 is in context
    auto three = commit_turn(two, turn(3));
    auto req2 = build_request(backtrack(three, 1), "p");
    REQUIRE(req2.messages.size() == 3);
    CHECK(req2.messages[0].text == "u1");
    CHECK(req2.messages[1].text == "r1");
    CHECK(req2.messages[2].text == "p");
}

TEST_CASE("request validation rejects forged shapes") {
    ChatRequest req;
    CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
    req.messages = {{"assistant", "x"}};
    CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
    req.messages = {{"user", "x"}, {"assistant", "y"}};
    CHECK_THROWS_AS(validate_request(req), std::invalid_argument); // must end in user
    req.messages = {{"user", "x"}, {"user", "y"}};
    CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
    req.messages = {{"user", "x"}, {"assistant", "y"}, {"user", "z"}};
    CHECK_NOTHROW(validate_request(req));
}

TEST_CASE("mock scripts: first match wins, deterministic") {
    MockModelScript script;
    script.rules.push_back(MockRule{{"MARKER_A", "MARKER_B"}, MatchScope::FullHistory, "both", 9});
    script.rules.push_back(MockRule{{"MARKER_A"}, MatchScope::FullHistory, "just a", 5});
    script.rules.push_back(MockRule{{"TAIL"}, MatchScope::LastUser, "tail rule", 7});
    script.default_response = "fallback";
    script.default_compliance = 2;

    ChatRequest req;
    req.messages = {{"user", "hello"}};
    auto [text, level] = mock_complete(script, req);
    CHECK(text == "fallback");
    CHECK(level == 2);

    req.messages = {{"user", "has MARKER_A only"}};
    CHECK(mock_complete(script, req).first == "just a");

    req.messages = {{"user", "has MARKER_A"}, {"assistant", "and MARKER_B"}, {"user", "go"}};
    CHECK(mock_complete(script, req).first == "both");

    // last_user scope ignores history
    req.messages = {{"user", "TAIL in history"}, {"assistant", "ok"}, {"user", "clean"}};
    CHECK(mock_complete(script, req).first == "fallback");
    req.messages = {{"user", "clean"}, {"assistant", "ok"}, {"user", "now TAIL"}};
    CHECK(mock_complete(script, req).first == "tail rule");

    // determinism: identical request, identical response
    for (int i = 0; i < 3; ++i) CHECK(mock_complete(script, req).first == "tail rule");

    CHECK(script.compliance_for("both") == 9);
    CHECK(script.compliance_for("fallback") == 2);
    CHECK(script.compliance_for("unknown text") == 1);
}

TEST_CASE("mock scenario files round-trip") {
    auto dir = testutil::scratch_dir("gateway_scenario");
    MockModelScript script;
    script.rules.push_back(MockRule{{"X"}, MatchScope::LastUser, "rx", 8});
    script.default_response = "dr";
    script.default_compliance = 3;
    std::vector<ojson> lines;
    for (auto& line : script.to_wire()) lines.push_back(line);
    write_jsonl(dir + "/scenario.jsonl", lines);

    auto loaded = MockModelScript::load(dir + "/scenario.jsonl");
    REQUIRE(loaded.rules.size() == 1);
    CHECK(loaded.rules[0].scope == MatchScope::LastUser);
    CHECK(loaded.rules[0].response == "rx");
    CHECK(loaded.rules[0].compliance_level == 8);
    CHECK(loaded.default_response == "dr");
    CHECK(loaded.default_compliance == 3);
}

TEST_CASE("chat completion payload parsing") {
    CHECK(parse_chat_completion(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
    CHECK(parse_chat_completion(
              R"({"choices":[{"finish_reason":"content_filter","message":{"content":""}}]})") ==
          kProviderBlocked);
    CHECK_THROWS_AS(parse_chat_completion("not json"), ProtocolError);
    CHECK_THROWS_AS(parse_chat_completion(R"({"choices":[]})"), ProtocolError);
    CHECK_THROWS_AS(parse_chat_completion(R"({"choices":[{"message":{}}]})"), ProtocolError);
}

TEST_CASE("remote completion retries transient failures") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        int n = ++hits;
        if (n <= 2) {
            res.status = 500;
            res.set_content("boom", "text/plain");
        } else {
            res.set_content(R"({"choices":[{"message":{"content":"recovered"}}]})",
                            "application/json");
        }
    });
    server.Post("/broken/chat/completions", [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        res.set_content("still broken", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ChatEndpoint endpoint;
    endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    endpoint.model_name = "stub";
    endpoint.retry.max_attempts = 3;
    endpoint.retry.backoff_s = {0.01, 0.02};

    ChatRequest req;
    req.messages = {{"user", "ping"}};

    std::vector<GatewayAttempt> attempts;
    CHECK(complete(endpoint, req, &attempts) == "recovered");
    CHECK(attempts.size() == 3); // failure, failure, success
    CHECK(attempts[0].status == 500);
    CHECK(attempts[2].status == 200);
    CHECK(hits.load() == 3);

    // exhausted retries surface a GatewayError carrying the last status
    ChatEndpoint broken = endpoint;
    broken.base_url = "http://127.0.0.1:" + std::to_string(port) + "/broken";
    broken.retry.backoff_s = {0.0};
    attempts.clear();
    try {
        complete(broken, req, &attempts);
        FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
        CHECK(e.last_status() == 500);
    }
    CHECK(attempts.size() == 3);

    // a 404 is not transient: immediate error, single attempt
    ChatEndpoint missing = endpoint;
    missing.base_url = "http://127.0.0.1:" + std::to_string(port) + "/nothing";
    attempts.clear();
    CHECK_THROWS_AS(complete(missing, req, &attempts), GatewayError);
    CHECK(attempts.size() == 1);

    server.stop();
    listener.join();
}

TEST_CASE("moderation blocks normalize instead of retrying") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
        res.set_content(R"({"error":{"code":"content_filter"}})", "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ChatEndpoint endpoint;
    endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    endpoint.model_name = "stub";
    endpoint.retry.backoff_s = {0.0};
    ChatRequest req;
    req.messages = {{"user", "ping"}};
    CHECK(complete(endpoint, req) == kProviderBlocked);
    CHECK(hits.load() == 1); // a moderation block is an observation, not a fault

    server.stop();
    listener.join();
}

TEST_CASE("remote embedding backend round-trips through the endpoint") {
    httplib::Server server;
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("input").is_array());
        res.set_content(R"({"data":[{"embedding":[3.0, 4.0]}]})", "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ChatEndpoint endpoint;
    endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    endpoint.model_name = "embedder";
    install_remote_embedding(endpoint);

    EmbeddingProvider remote(2, EmbeddingBackend::Remote);
    auto v = remote.embed("anything");
    REQUIRE(v.size() == 2);
    CHECK(v[0] == doctest::Approx(0.6)); // normalized on ingest
    CHECK(v[1] == doctest::Approx(0.8));

    EmbeddingProvider wrong_dim(5, EmbeddingBackend::Remote);
    CHECK_THROWS(wrong_dim.embed("anything"));

    CHECK_THROWS_AS(parse_embedding_payload("{}"), ProtocolError);

    server.stop();
    listener.join();
    redfuzz::detail::remote_embed_hook() = nullptr;
}

TEST_CASE("token bucket paces requests") {
    auto now = std::chrono::steady_clock::now();
    auto fake_now = [&] { return now; };
    TokenBucket bucket(60, fake_now); // 1 token/second, burst 60
    for (int i = 0; i < 60; ++i) CHECK(bucket.try_take());
    CHECK_FALSE(bucket.try_take());
    now += std::chrono::seconds(2);
    CHECK(bucket.try_take());
    CHECK(bucket.try_take());
    CHECK_FALSE(bucket.try_take());

    TokenBucket unlimited(0);
    for (int i = 0; i < 100; ++i) CHECK(unlimited.try_take());
}

TEST_CASE("endpoint throttle caps in-flight requests") {
    EndpointThrottle throttle(2, 0);
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    std::vector<std::thread> workers;
    for (int i = 0; i < 8; ++i) {
        workers.emplace_back([&] {
            auto guard = throttle.acquire();
            int now = ++in_flight;
            int prev = peak.load();
            while (now > prev && !peak.compare_exchange_weak(prev, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
            --in_flight;
        });
    }
    for (auto& w : workers) w.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
}

TEST_CASE("black-box discipline: public surface exposes no model internals") {
    namespace fs = std::filesystem;
    const fs::path include_dir = fs::path(REDFUZZ_SOURCE_DIR) / "include" / "redfuzz";
    REQUIRE(fs::exists(include_dir));
    int checked = 0;
    for (const auto& entry : fs::directory_iterator(include_dir)) {
        std::ifstream in(entry.path());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string lower;
        for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        CHECK_MESSAGE(lower.find("logit") == std::string::npos, entry.path().string());
        CHECK_MESSAGE(lower.find("logprob") == std::string::npos, entry.path().string());
        CHECK_MESSAGE(lower.find("gradient") == std::string::npos, entry.path().string());
        ++checked;
    }
    CHECK(checked >= 15);
}
