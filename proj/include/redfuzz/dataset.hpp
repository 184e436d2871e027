#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "redfuzz/core.hpp"
#include "redfuzz/wire.hpp"

namespace redfuzz {

class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One query record per line: {"id": ..., "text": ..., "category": ...}.
// Duplicate ids are rejected; an empty file is a valid empty dataset (the
// caller warns).
inline std::vector<Query> ingest_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("dataset not found: " + path);
    std::vector<Query> queries;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson rec = ojson::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw IngestError(path + ":" + std::to_string(lineno) + ": malformed record");
        Query q;
        try {
            q = query_from_wire(rec);
        } catch (const std::exception& e) {
            throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(q.id).second)
            throw IngestError(path + ":" + std::to_string(lineno) + ": duplicate query id '" +
                              q.id + "'");
        queries.push_back(std::move(q));
    }
    return queries;
}

} // namespace redfuzz
