#pragma once

// Remote embedding transport: wires an embeddings endpoint into
// EmbeddingProvider's Remote backend. Kept separate so mock-only binaries do
// not need the HTTP stack.

#include <string>
#include <vector>

#include "redfuzz/embedding.hpp"
#include "redfuzz/gateway.hpp"
#include "redfuzz/gateway_http.hpp"

namespace redfuzz {

inline std::vector<double> parse_embedding_payload(const std::string& payload) {
    ojson obj = ojson::parse(payload, nullptr, false);
    if (obj.is_discarded()) throw ProtocolError("embedding payload is not valid JSON");
    if (!obj.contains("data") || !obj["data"].is_array() || obj["data"].empty() ||
        !obj["data"][0].contains("embedding"))
        throw ProtocolError("embedding payload has no data[0].embedding");
    return obj["data"][0]["embedding"].get<std::vector<double>>();
}

// Point the Remote backend at an embeddings endpoint. The request shape is
// POST {base_url}/embeddings with {"model": ..., "input": [text]}.
inline void install_remote_embedding(const ChatEndpoint& endpoint) {
    detail::remote_embed_hook() = [endpoint](const std::string& text) {
        ojson body;
        body["model"] = endpoint.model_name;
        body["input"] = std::vector<std::string>{text};
        auto throttle = endpoint_throttle(endpoint);
        detail::HttpResponse resp;
        {
            auto guard = throttle->acquire();
            resp = detail::http_post_impl(endpoint, "/embeddings", body.dump());
        }
        if (!resp.transport_ok)
            throw GatewayError(endpoint.id(), 0, "embedding transport failure: " + resp.error);
        if (resp.status != 200)
            throw GatewayError(endpoint.id(), resp.status, "embedding request failed");
        return parse_embedding_payload(resp.body);
    };
}

} // namespace redfuzz
