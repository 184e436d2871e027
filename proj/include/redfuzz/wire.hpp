#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace redfuzz {

// Canonical line-delimited serialization: one object per line, UTF-8,
// insertion-ordered fields so identical values always encode to identical bytes.
using ojson = nlohmann::ordered_json;

inline std::string wire_line(const ojson& obj) {
    return obj.dump();
}

inline std::vector<ojson> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<ojson> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson obj = ojson::parse(line, nullptr, false);
        if (obj.is_discarded())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record");
        out.push_back(std::move(obj));
    }
    return out;
}

inline void write_jsonl(const std::string& path, const std::vector<ojson>& objects) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    for (const auto& obj : objects) out << wire_line(obj) << '\n';
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << text;
}

} // namespace redfuzz
