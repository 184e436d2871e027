#pragma once

#include <cctype>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "redfuzz/rng.hpp"

namespace redfuzz {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("vector dimensionality mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline std::vector<double> normalized(std::vector<double> v) {
    double n = l2_norm(v);
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
    for (double& x : v) x /= n;
    return v;
}

// Both inputs unit-normalized on ingest, so cosine reduces to a dot product.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(a, b);
}

enum class EmbeddingBackend { Remote, DeterministicTest };

namespace detail {

// Installed by embedding_http.hpp; maps text -> raw embedding vector.
using EmbedFn = std::function<std::vector<double>(const std::string& text)>;

inline EmbedFn& remote_embed_hook() {
    static EmbedFn fn;
    return fn;
}

} // namespace detail

// Text embedding used for strategy storage and seed retrieval. The
// deterministic backend hashes a bag of token trigrams into d dimensions and
// normalizes; same text gives the same vector on every platform, which keeps
// retrieval and clustering replay-identical without a model server. The
// remote backend calls an embeddings endpoint installed via
// redfuzz/embedding_http.hpp.
class EmbeddingProvider {
public:
    explicit EmbeddingProvider(int dimensionality = 64,
                               EmbeddingBackend backend = EmbeddingBackend::DeterministicTest)
        : dim_(dimensionality), backend_(backend) {
        if (dim_ < 2) throw std::invalid_argument("embedding dimensionality must be >= 2");
    }

    int dimensionality() const { return dim_; }
    EmbeddingBackend backend() const { return backend_; }

    std::vector<double> embed(const std::string& text) const {
        if (backend_ == EmbeddingBackend::DeterministicTest) return embed_deterministic(text);
        auto& remote = detail::remote_embed_hook();
        if (!remote)
            throw std::runtime_error(
                "remote embedding backend not configured; include redfuzz/embedding_http.hpp "
                "and install an endpoint");
        std::vector<double> v = remote(text);
        if (static_cast<int>(v.size()) != dim_)
            throw std::runtime_error("remote embedding dimensionality mismatch");
        return normalized(std::move(v));
    }

    std::vector<double> embed_deterministic(const std::string& text) const {
        std::vector<std::string> tokens = tokenize(text);
        // Boundary markers guarantee at least one window for short texts.
        std::vector<std::string> padded;
        padded.reserve(tokens.size() + 2);
        padded.push_back("^");
        for (auto& t : tokens) padded.push_back(std::move(t));
        padded.push_back("$");

        std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
        auto accumulate = [&](const std::string& gram) {
            std::uint64_t h = fnv1a64(gram);
            std::size_t idx = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
            v[idx] += (h >> 63) ? -1.0 : 1.0;
        };
        if (padded.size() < 3) {
            accumulate(padded[0] + "\x1f" + padded[1]);
        } else {
            for (std::size_t i = 0; i + 2 < padded.size(); ++i)
                accumulate(padded[i] + "\x1f" + padded[i + 1] + "\x1f" + padded[i + 2]);
        }
        if (l2_norm(v) == 0.0) v[0] = 1.0;
        return normalized(std::move(v));
    }

private:
    static std::vector<std::string> tokenize(const std::string& text) {
        std::vector<std::string> tokens;
        std::string cur;
        for (unsigned char c : text) {
            if (std::isalnum(c)) {
                cur.push_back(static_cast<char>(std::tolower(c)));
            } else if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        }
        if (!cur.empty()) tokens.push_back(cur);
        return tokens;
    }

    int dim_;
    EmbeddingBackend backend_;
};

} // namespace redfuzz
