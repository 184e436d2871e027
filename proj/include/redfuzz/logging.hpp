#pragma once

#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "redfuzz/wire.hpp"

namespace redfuzz {

// Append-only trajectory log: one record per event, flushed per event for
// crash forensics. Records carry a sequence number instead of wall-clock time
// so reruns with the same seed produce byte-identical files.
class EventLog {
public:
    EventLog() = default;

    explicit EventLog(const std::string& path, bool append = false) { open(path, append); }

    void open(const std::string& path, bool append = false) {
        std::lock_guard<std::mutex> lock(mu_);
        file_.open(path, append ? (std::ios::app | std::ios::out) : (std::ios::trunc | std::ios::out));
        if (!file_) throw std::runtime_error("cannot open log file: " + path);
        path_ = path;
    }

    void append(const std::string& kind, ojson payload) {
        std::lock_guard<std::mutex> lock(mu_);
        append_locked(kind, std::move(payload));
    }

    // Merge a batch of already-formed events (e.g. from a per-query buffer),
    // restamping sequence numbers in arrival order.
    void append_events(const std::vector<ojson>& batch) {
        std::lock_guard<std::mutex> lock(mu_);
        for (const auto& ev : batch) {
            ojson payload = ev;
            std::string kind = payload.at("kind").get<std::string>();
            payload.erase("seq");
            payload.erase("kind");
            append_locked(kind, std::move(payload));
        }
    }

    const std::vector<ojson>& events() const { return events_; }
    const std::string& path() const { return path_; }

    std::vector<ojson> events_of_kind(const std::string& kind) const {
        std::vector<ojson> out;
        for (const auto& ev : events_)
            if (ev.at("kind").get<std::string>() == kind) out.push_back(ev);
        return out;
    }

private:
    void append_locked(const std::string& kind, ojson payload) {
        ojson rec;
        rec["seq"] = seq_++;
        rec["kind"] = kind;
        for (auto& [key, value] : payload.items()) rec[key] = value;
        if (file_.is_open()) {
            file_ << wire_line(rec) << '\n';
            file_.flush();
        }
        events_.push_back(std::move(rec));
    }

    std::mutex mu_;
    std::ofstream file_;
    std::string path_;
    std::vector<ojson> events_;
    std::uint64_t seq_ = 0;
};

inline void log_event(EventLog* log, const std::string& kind, ojson payload) {
    if (log) log->append(kind, std::move(payload));
}

} // namespace redfuzz
