#pragma once

// HTTP transport for the gateway, kept in its own header so translation units
// that only exercise mocks do not pay for the HTTP stack. Including this
// header anywhere in a binary installs the transport.

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "redfuzz/gateway.hpp"

namespace redfuzz {
namespace detail {

struct ParsedUrl {
    std::string scheme_host_port; // e.g. "http://127.0.0.1:8080"
    std::string path_prefix;      // e.g. "/v1"
};

inline ParsedUrl parse_base_url(const std::string& base_url) {
    ParsedUrl out;
    std::size_t scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
        throw std::invalid_argument("base_url must include a scheme: " + base_url);
    std::size_t path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        out.scheme_host_port = base_url;
    } else {
        out.scheme_host_port = base_url.substr(0, path_start);
        out.path_prefix = base_url.substr(path_start);
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/')
            out.path_prefix.pop_back();
    }
    return out;
}

inline HttpResponse http_post_impl(const ChatEndpoint& endpoint, const std::string& path,
                                   const std::string& body) {
    HttpResponse out;
    ParsedUrl url;
    try {
        url = parse_base_url(endpoint.base_url);
    } catch (const std::exception& e) {
        out.error = e.what();
        return out;
    }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url.scheme_host_port.rfind("https://", 0) == 0) {
        out.error = "https endpoint requires a TLS-enabled build";
        return out;
    }
#endif
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(std::chrono::duration<double>(endpoint.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(endpoint.timeout_s));

    httplib::Headers headers;
    if (!endpoint.api_key_ref.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_ref.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(url.path_prefix + path, headers, body, "application/json");
    if (!res) {
        out.error = "transport failure: " + httplib::to_string(res.error());
        return out;
    }
    out.transport_ok = true;
    out.status = res->status;
    out.body = res->body;
    return out;
}

struct HttpTransportRegistrar {
    HttpTransportRegistrar() { http_post_hook() = http_post_impl; }
};

inline HttpTransportRegistrar http_transport_registrar{};

} // namespace detail
} // namespace redfuzz
