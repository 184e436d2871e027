#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "redfuzz/core.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/rng.hpp"
#include "redfuzz/wire.hpp"

namespace redfuzz {

// Uniform chat-model interface over remote endpoints and deterministic local
// mocks. The request shape enforces the black-box contract: assistant
// messages are verbatim copies of committed turns, so no history forgery or
// pre-filling can be expressed through this layer.

class GatewayError : public std::runtime_error {
public:
    GatewayError(const std::string& endpoint_id, int last_status, const std::string& what)
        : std::runtime_error("gateway error [" + endpoint_id + ", status " +
                             std::to_string(last_status) + "]: " + what),
          endpoint_id_(endpoint_id),
          last_status_(last_status) {}

    const std::string& endpoint_id() const { return endpoint_id_; }
    int last_status() const { return last_status_; }

private:
    std::string endpoint_id_;
    int last_status_;
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::vector<double> backoff_s = {1.0, 4.0}; // sleep before attempt i+1; last entry repeats
};

struct ChatEndpoint {
    std::string base_url;
    std::string model_name;
    std::string api_key_ref; // environment variable holding the key, never the key itself
    double temperature = 0.0;
    int max_output_tokens = 1024;
    double timeout_s = 60.0;
    RetryPolicy retry;
    int permits = 4;              // max concurrent in-flight requests
    int requests_per_minute = 0;  // 0 disables the token bucket

    std::string id() const { return base_url + "#" + model_name; }
};

inline void validate_endpoint(const ChatEndpoint& e) {
    if (e.temperature < 0) throw std::invalid_argument("temperature must be >= 0");
    if (e.retry.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

struct ChatMessage {
    std::string role; // "user" | "assistant"
    std::string text;
};

struct ChatRequest {
    std::optional<std::string> system_prompt;
    std::vector<ChatMessage> messages;
};

// Roles strictly alternate user/assistant and end in user.
inline void validate_request(const ChatRequest& req) {
    if (req.messages.empty()) throw std::invalid_argument("request must carry at least one message");
    for (std::size_t i = 0; i < req.messages.size(); ++i) {
        const std::string expected = (i % 2 == 0) ? "user" : "assistant";
        if (req.messages[i].role != expected)
            throw std::invalid_argument("message roles must alternate user/assistant starting with user");
    }
    if (req.messages.size() % 2 == 0)
        throw std::invalid_argument("request must end with a user message");
}

// Linearize the active path of the tree and append the new user prompt.
inline ChatRequest build_request(const DialogueTree& tree, const std::string& new_prompt,
                                 const std::optional<std::string>& system_prompt = std::nullopt) {
    ChatRequest req;
    req.system_prompt = system_prompt;
    for (const Turn& t : tree.history()) {
        req.messages.push_back(ChatMessage{"user", t.prompt});
        req.messages.push_back(ChatMessage{"assistant", t.response});
    }
    req.messages.push_back(ChatMessage{"user", new_prompt});
    validate_request(req);
    return req;
}

inline ojson request_to_wire(const ChatRequest& req) {
    ojson obj;
    obj["system"] = req.system_prompt ? ojson(*req.system_prompt) : ojson(nullptr);
    ojson msgs = ojson::array();
    for (const auto& m : req.messages) {
        ojson rec;
        rec["role"] = m.role;
        rec["text"] = m.text;
        msgs.push_back(std::move(rec));
    }
    obj["messages"] = std::move(msgs);
    return obj;
}

// --- deterministic mock models --------------------------------------------

enum class MatchScope { FullHistory, LastUser };

struct MockRule {
    std::vector<std::string> contains_all; // every substring must appear
    MatchScope scope = MatchScope::FullHistory;
    std::string response;
    int compliance_level = 1; // visible to the test judge only
};

// Scripted test double for a chat model. Exactly one rule fires per request:
// rules are checked in order, first match wins, otherwise the default answers.
struct MockModelScript {
    std::vector<MockRule> rules;
    std::string default_response = "I cannot help with that.";
    int default_compliance = 1;

    static std::string haystack(const ChatRequest& req, MatchScope scope) {
        if (scope == MatchScope::LastUser)
            return req.messages.empty() ? std::string{} : req.messages.back().text;
        std::string text;
        if (req.system_prompt) {
            text += "<<system>>\n";
            text += *req.system_prompt;
            text += "\n";
        }
        for (const auto& m : req.messages) {
            text += "<<" + m.role + ">>\n";
            text += m.text;
            text += "\n";
        }
        return text;
    }

    const MockRule* match(const ChatRequest& req) const {
        for (const auto& rule : rules) {
            const std::string hay = haystack(req, rule.scope);
            bool all = true;
            for (const auto& needle : rule.contains_all) {
                if (hay.find(needle) == std::string::npos) {
                    all = false;
                    break;
                }
            }
            if (all) return &rule;
        }
        return nullptr;
    }

    // Compliance for a response the script previously produced; used by the
    // deterministic test judge. Unknown text scores 1 (most conservative).
    int compliance_for(const std::string& response) const {
        for (const auto& rule : rules)
            if (rule.response == response) return rule.compliance_level;
        if (response == default_response) return default_compliance;
        return 1;
    }

    static MockModelScript load(const std::string& path) {
        MockModelScript script;
        bool have_default = false;
        for (const auto& rec : read_jsonl(path)) {
            const std::string kind = rec.at("kind").get<std::string>();
            if (kind == "RULE") {
                MockRule rule;
                const auto& cond = rec.at("contains");
                if (cond.is_string()) rule.contains_all.push_back(cond.get<std::string>());
                else rule.contains_all = cond.get<std::vector<std::string>>();
                rule.response = rec.at("response").get<std::string>();
                rule.compliance_level = rec.value("compliance", 1);
                if (rec.value("scope", std::string("full")) == "last_user")
                    rule.scope = MatchScope::LastUser;
                script.rules.push_back(std::move(rule));
            } else if (kind == "DEFAULT") {
                script.default_response = rec.at("response").get<std::string>();
                script.default_compliance = rec.value("compliance", 1);
                have_default = true;
            } else {
                throw std::runtime_error(path + ": unknown scenario record kind " + kind);
            }
        }
        if (script.rules.empty() && !have_default)
            throw std::runtime_error(path + ": scenario file defines no rules and no default");
        return script;
    }

    ojson to_wire() const {
        ojson obj = ojson::array();
        for (const auto& rule : rules) {
            ojson rec;
            rec["kind"] = "RULE";
            rec["contains"] = rule.contains_all;
            rec["scope"] = rule.scope == MatchScope::LastUser ? "last_user" : "full";
            rec["response"] = rule.response;
            rec["compliance"] = rule.compliance_level;
            obj.push_back(std::move(rec));
        }
        ojson def;
        def["kind"] = "DEFAULT";
        def["response"] = default_response;
        def["compliance"] = default_compliance;
        obj.push_back(std::move(def));
        return obj;
    }
};

inline std::pair<std::string, int> mock_complete(const MockModelScript& script,
                                                 const ChatRequest& req) {
    validate_request(req);
    if (const MockRule* rule = script.match(req))
        return {rule->response, rule->compliance_level};
    return {script.default_response, script.default_compliance};
}

// --- throttling -------------------------------------------------------------

// Token bucket over a injectable clock; refills at requests_per_minute.
class TokenBucket {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    TokenBucket(int requests_per_minute, Clock clock = nullptr)
        : rpm_(requests_per_minute),
          clock_(clock ? std::move(clock) : [] { return std::chrono::steady_clock::now(); }),
          tokens_(requests_per_minute),
          last_(clock_()) {}

    // Blocks (sleeping) until a token is available. No-op when disabled.
    void take() {
        if (rpm_ <= 0) return;
        std::unique_lock<std::mutex> lock(mu_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            lock.unlock();
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            lock.lock();
        }
    }

    bool try_take() {
        if (rpm_ <= 0) return true;
        std::lock_guard<std::mutex> lock(mu_);
        refill();
        if (tokens_ < 1.0) return false;
        tokens_ -= 1.0;
        return true;
    }

private:
    void refill() {
        auto now = clock_();
        double elapsed_s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(static_cast<double>(rpm_), tokens_ + elapsed_s * rpm_ / 60.0);
    }

    int rpm_;
    Clock clock_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mu_;
};

// Per-endpoint in-flight permit count plus rate limiter.
class EndpointThrottle {
public:
    EndpointThrottle(int permits, int requests_per_minute)
        : permits_(permits > 0 ? permits : 1), bucket_(requests_per_minute) {}

    class Guard {
    public:
        explicit Guard(EndpointThrottle* t) : throttle_(t) {}
        Guard(Guard&& other) noexcept : throttle_(other.throttle_) { other.throttle_ = nullptr; }
        Guard(const Guard&) = delete;
        ~Guard() {
            if (throttle_) throttle_->release();
        }

    private:
        EndpointThrottle* throttle_;
    };

    Guard acquire() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            cv_.wait(lock, [&] { return in_flight_ < permits_; });
            ++in_flight_;
        }
        bucket_.take();
        return Guard(this);
    }

private:
    void release() {
        std::lock_guard<std::mutex> lock(mu_);
        --in_flight_;
        cv_.notify_one();
    }

    int permits_;
    int in_flight_ = 0;
    TokenBucket bucket_;
    std::mutex mu_;
    std::condition_variable cv_;
};

inline std::shared_ptr<EndpointThrottle> endpoint_throttle(const ChatEndpoint& endpoint) {
    static std::mutex registry_mu;
    static std::map<std::string, std::shared_ptr<EndpointThrottle>> registry;
    std::lock_guard<std::mutex> lock(registry_mu);
    auto it = registry.find(endpoint.id());
    if (it != registry.end()) return it->second;
    auto throttle = std::make_shared<EndpointThrottle>(endpoint.permits, endpoint.requests_per_minute);
    registry.emplace(endpoint.id(), throttle);
    return throttle;
}

// --- remote completion -------------------------------------------------------

struct GatewayAttempt {
    int status = 0; // 0 for transport-level failure
    std::string note;
};

// Synthetic response substituted when the provider blocks a request at the
// moderation layer; the controller treats it as a refusal, not a fault.
inline constexpr const char* kProviderBlocked = "[PROVIDER_BLOCKED]";

namespace detail {

struct HttpResponse {
    bool transport_ok = false;
    int status = 0;
    std::string body;
    std::string error;
};

// Implemented in gateway_http.hpp to keep the heavy HTTP dependency optional
// for translation units that only use mocks.
using HttpPostFn = std::function<HttpResponse(const ChatEndpoint&, const std::string& path,
                                              const std::string& body)>;

inline HttpPostFn& http_post_hook() {
    static HttpPostFn fn;
    return fn;
}

inline bool looks_like_moderation_block(int status, const std::string& body) {
    if (status != 400 && status != 403 && status != 422) return false;
    return body.find("content_filter") != std::string::npos ||
           body.find("content_policy") != std::string::npos ||
           body.find("moderation") != std::string::npos;
}

} // namespace detail

inline std::string chat_completion_body(const ChatEndpoint& endpoint, const ChatRequest& req) {
    ojson body;
    body["model"] = endpoint.model_name;
    ojson messages = ojson::array();
    if (req.system_prompt) {
        ojson m;
        m["role"] = "system";
        m["content"] = *req.system_prompt;
        messages.push_back(std::move(m));
    }
    for (const auto& msg : req.messages) {
        ojson m;
        m["role"] = msg.role;
        m["content"] = msg.text;
        messages.push_back(std::move(m));
    }
    body["messages"] = std::move(messages);
    body["temperature"] = endpoint.temperature;
    body["max_tokens"] = endpoint.max_output_tokens;
    return body.dump();
}

inline std::string parse_chat_completion(const std::string& payload) {
    ojson obj = ojson::parse(payload, nullptr, false);
    if (obj.is_discarded()) throw ProtocolError("remote payload is not valid JSON");
    if (!obj.contains("choices") || !obj["choices"].is_array() || obj["choices"].empty())
        throw ProtocolError("remote payload has no choices");
    const auto& choice = obj["choices"][0];
    if (choice.value("finish_reason", std::string{}) == "content_filter") return kProviderBlocked;
    if (!choice.contains("message") || !choice["message"].contains("content") ||
        !choice["message"]["content"].is_string())
        throw ProtocolError("remote payload has no message content");
    return choice["message"]["content"].get<std::string>();
}

// Send a chat completion with retry on transient transport failures (429,
// 5xx, connection errors). Content-moderation blocks are observations, not
// faults: they normalize to kProviderBlocked and are never retried.
inline std::string complete(const ChatEndpoint& endpoint, const ChatRequest& request,
                            std::vector<GatewayAttempt>* attempt_log = nullptr,
                            EventLog* log = nullptr) {
    validate_endpoint(endpoint);
    validate_request(request);
    auto& post = detail::http_post_hook();
    if (!post)
        throw GatewayError(endpoint.id(), 0,
                           "HTTP transport not linked; include redfuzz/gateway_http.hpp");

    auto throttle = endpoint_throttle(endpoint);
    const std::string body = chat_completion_body(endpoint, request);
    int last_status = 0;
    std::string last_error;
    for (int attempt = 1; attempt <= endpoint.retry.max_attempts; ++attempt) {
        if (attempt > 1) {
            const auto& schedule = endpoint.retry.backoff_s;
            double delay = schedule.empty()
                               ? 0.0
                               : schedule[std::min<std::size_t>(attempt - 2, schedule.size() - 1)];
            if (delay > 0)
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        detail::HttpResponse resp;
        {
            auto guard = throttle->acquire();
            resp = post(endpoint, "/chat/completions", body);
        }
        if (attempt_log)
            attempt_log->push_back(GatewayAttempt{resp.transport_ok ? resp.status : 0,
                                                  resp.transport_ok ? "" : resp.error});
        log_event(log, "GATEWAY_ATTEMPT",
                  {{"endpoint", endpoint.id()},
                   {"attempt", attempt},
                   {"status", resp.transport_ok ? resp.status : 0}});
        if (resp.transport_ok && resp.status == 200) return parse_chat_completion(resp.body);
        if (resp.transport_ok && detail::looks_like_moderation_block(resp.status, resp.body))
            return kProviderBlocked;
        const bool retryable = !resp.transport_ok || resp.status == 429 || resp.status >= 500;
        last_status = resp.transport_ok ? resp.status : 0;
        last_error = resp.transport_ok ? ("HTTP " + std::to_string(resp.status)) : resp.error;
        if (!retryable)
            throw GatewayError(endpoint.id(), last_status, "non-retryable failure: " + last_error);
    }
    throw GatewayError(endpoint.id(), last_status, "retries exhausted: " + last_error);
}

// --- model reference ---------------------------------------------------------

struct CompletionResult {
    std::string text;
    std::optional<int> mock_compliance; // side channel for the test judge only
};

// A model a role or target can talk to: a remote endpoint or a scripted mock.
struct ModelRef {
    std::variant<ChatEndpoint, MockModelScript> impl = MockModelScript{};

    bool is_mock() const { return std::holds_alternative<MockModelScript>(impl); }

    const MockModelScript* mock() const { return std::get_if<MockModelScript>(&impl); }
    const ChatEndpoint* endpoint() const { return std::get_if<ChatEndpoint>(&impl); }

    std::string describe() const {
        if (is_mock()) return "mock";
        return std::get<ChatEndpoint>(impl).id();
    }
};

inline CompletionResult run_model(const ModelRef& model, const ChatRequest& request,
                                  EventLog* log = nullptr, const std::string& purpose = "") {
    if (log) {
        ojson payload = request_to_wire(request);
        payload["endpoint"] = model.describe();
        payload["purpose"] = purpose;
        log->append("REQUEST", std::move(payload));
    }
    if (const MockModelScript* script = model.mock()) {
        auto [text, compliance] = mock_complete(*script, request);
        return CompletionResult{text, compliance};
    }
    return CompletionResult{complete(*model.endpoint(), request, nullptr, log), std::nullopt};
}

} // namespace redfuzz
