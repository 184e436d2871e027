#pragma once

#include <cctype>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "redfuzz/core.hpp"
#include "redfuzz/templates.hpp"

namespace redfuzz {

// Parsers for the structured agent output format: fenced blocks with labeled
// fields, line-oriented. JSON mode is deliberately not assumed; not every
// model a campaign touches supports it.

template <typename T>
struct Parsed {
    std::optional<T> value;
    std::string error;
    bool ok() const { return value.has_value(); }
};

enum class ControlDecision { Proceed, Refine, Abort };
enum class ControlCause { Refusal, Deviation, Partial, Satisfied };

inline std::string to_string(ControlDecision d) {
    switch (d) {
        case ControlDecision::Proceed: return "proceed";
        case ControlDecision::Refine: return "refine";
        case ControlDecision::Abort: return "abort";
    }
    return "refine";
}

inline std::string to_string(ControlCause c) {
    switch (c) {
        case ControlCause::Refusal: return "refusal";
        case ControlCause::Deviation: return "deviation";
        case ControlCause::Partial: return "partial";
        case ControlCause::Satisfied: return "satisfied";
    }
    return "deviation";
}

struct ControlVerdict {
    ControlDecision decision = ControlDecision::Refine;
    std::string feedback; // required iff Refine
    ControlCause cause = ControlCause::Deviation;
};

struct StrategyDraft {
    std::string summary;
    std::string body;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// Matches "KEY...:" with an optional numeric suffix, e.g. "STEP 2:".
inline bool labeled_line(const std::string& line, const std::string& key, std::string& rest) {
    std::string u = upper(trim(line));
    if (u.rfind(key, 0) != 0) return false;
    std::size_t pos = key.size();
    while (pos < u.size() && (u[pos] == ' ' || std::isdigit(static_cast<unsigned char>(u[pos])))) ++pos;
    if (pos >= u.size() || u[pos] != ':') return false;
    std::string t = trim(line);
    rest = trim(t.substr(pos + 1));
    return true;
}

} // namespace detail

inline Parsed<Plan> parse_plan_doc(const std::string& text, int max_plan_steps) {
    Plan plan;
    std::optional<std::string> pending_instruction;
    for (const auto& line : detail::lines_of(text)) {
        std::string rest;
        if (detail::labeled_line(line, "STEP", rest)) {
            if (pending_instruction)
                return {std::nullopt, "STEP without matching EXPECT line"};
            if (rest.empty()) return {std::nullopt, "empty STEP instruction"};
            pending_instruction = rest;
        } else if (detail::labeled_line(line, "EXPECT", rest)) {
            if (!pending_instruction)
                return {std::nullopt, "EXPECT without preceding STEP line"};
            if (rest.empty()) return {std::nullopt, "empty EXPECT field"};
            plan.steps.push_back(PlanStep{*pending_instruction, rest});
            pending_instruction.reset();
        }
    }
    if (pending_instruction) return {std::nullopt, "trailing STEP without EXPECT"};
    if (plan.steps.empty()) return {std::nullopt, "no STEP/EXPECT pairs found"};
    if (static_cast<int>(plan.steps.size()) > max_plan_steps)
        return {std::nullopt, "plan has more than max_plan_steps steps"};
    return {plan, ""};
}

inline Parsed<ControlVerdict> parse_verdict(const std::string& text) {
    ControlVerdict v;
    bool have_decision = false, have_cause = false;
    std::vector<std::string> lines = detail::lines_of(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string rest;
        if (detail::labeled_line(lines[i], "DECISION", rest)) {
            std::string u = detail::upper(rest);
            if (u.rfind("PROCEED", 0) == 0) v.decision = ControlDecision::Proceed;
            else if (u.rfind("REFINE", 0) == 0) v.decision = ControlDecision::Refine;
            else if (u.rfind("ABORT", 0) == 0) v.decision = ControlDecision::Abort;
            else return {std::nullopt, "unknown DECISION: " + rest};
            have_decision = true;
        } else if (detail::labeled_line(lines[i], "CAUSE", rest)) {
            std::string u = detail::upper(rest);
            if (u.rfind("REFUSAL", 0) == 0) v.cause = ControlCause::Refusal;
            else if (u.rfind("DEVIATION", 0) == 0) v.cause = ControlCause::Deviation;
            else if (u.rfind("PARTIAL", 0) == 0) v.cause = ControlCause::Partial;
            else if (u.rfind("SATISFIED", 0) == 0) v.cause = ControlCause::Satisfied;
            else return {std::nullopt, "unknown CAUSE: " + rest};
            have_cause = true;
        } else if (detail::labeled_line(lines[i], "FEEDBACK", rest)) {
            // Feedback runs to the end of the message.
            std::string fb = rest;
            for (std::size_t j = i + 1; j < lines.size(); ++j) {
                fb += "\n";
                fb += lines[j];
            }
            v.feedback = detail::trim(fb);
            break;
        }
    }
    if (!have_decision) return {std::nullopt, "missing DECISION line"};
    if (!have_cause)
        v.cause = v.decision == ControlDecision::Proceed ? ControlCause::Satisfied
                                                         : ControlCause::Deviation;
    if (v.decision == ControlDecision::Refine && v.feedback.empty())
        return {std::nullopt, "REFINE verdict without FEEDBACK"};
    return {v, ""};
}

inline Parsed<std::vector<StrategyDraft>> parse_strategy_list(const std::string& text) {
    std::vector<StrategyDraft> drafts;
    std::optional<StrategyDraft> cur;
    bool in_body = false;
    auto flush = [&]() -> std::string {
        if (!cur) return "";
        cur->body = detail::trim(cur->body);
        if (cur->summary.empty() || cur->body.empty())
            return "strategy entry missing SUMMARY or BODY";
        drafts.push_back(*cur);
        cur.reset();
        return "";
    };
    for (const auto& line : detail::lines_of(text)) {
        std::string t = detail::upper(detail::trim(line));
        std::string rest;
        if (t == "STRATEGY" || t.rfind("STRATEGY ", 0) == 0) {
            if (auto err = flush(); !err.empty()) return {std::nullopt, err};
            cur = StrategyDraft{};
            in_body = false;
        } else if (t == "END_STRATEGIES") {
            break;
        } else if (cur && detail::labeled_line(line, "SUMMARY", rest)) {
            cur->summary = rest;
            in_body = false;
        } else if (cur && detail::labeled_line(line, "BODY", rest)) {
            cur->body = rest;
            in_body = true;
        } else if (cur && in_body) {
            cur->body += "\n";
            cur->body += line;
        }
    }
    if (auto err = flush(); !err.empty()) return {std::nullopt, err};
    if (drafts.empty()) return {std::nullopt, "no STRATEGY entries found"};
    return {drafts, ""};
}

// Accepts "SCORE: 7", "Score: 7/10", "score = 9" or, as a last resort, the
// first standalone integer in range.
inline Parsed<int> parse_score(const std::string& text, int lo, int hi) {
    auto integer_at = [&](std::size_t pos, int& out, std::size_t& end) {
        while (pos < text.size() && !std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (text[pos] == '\n') return false; // stay on the labeled line
            ++pos;
        }
        if (pos >= text.size()) return false;
        std::size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        out = std::stoi(text.substr(start, pos - start));
        end = pos;
        return true;
    };

    std::string u = detail::upper(text);
    std::size_t pos = u.find("SCORE");
    if (pos != std::string::npos) {
        int value = 0;
        std::size_t end = 0;
        if (integer_at(pos + 5, value, end) && value >= lo && value <= hi) return {value, ""};
        if (end != 0) return {std::nullopt, "score out of range"};
    }
    // Fallback: first integer token anywhere in the text.
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
        if (i > 0 && std::isalnum(static_cast<unsigned char>(text[i - 1]))) continue;
        std::size_t j = i;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        int value = std::stoi(text.substr(i, j - i));
        if (value >= lo && value <= hi) return {value, ""};
        i = j;
    }
    return {std::nullopt, "no score in [" + std::to_string(lo) + "," + std::to_string(hi) + "] found"};
}

inline std::string format_reminder(OutputSchema schema) {
    switch (schema) {
        case OutputSchema::PlanDoc:
            return "FORMAT REMINDER: respond only with STEP:/EXPECT: line pairs, one pair per "
                   "plan step, at least one pair.";
        case OutputSchema::PromptText:
            return "FORMAT REMINDER: respond with the exact message text to send, nothing else.";
        case OutputSchema::ControlVerdict:
            return "FORMAT REMINDER: respond with DECISION: PROCEED|REFINE|ABORT, CAUSE: "
                   "REFUSAL|DEVIATION|PARTIAL|SATISFIED, and FEEDBACK: <text> when refining.";
        case OutputSchema::StrategyList:
            return "FORMAT REMINDER: respond with one or more blocks of STRATEGY / SUMMARY: "
                   "<one line> / BODY: <description>.";
        case OutputSchema::ScoreInt:
            return "FORMAT REMINDER: respond with a single line SCORE: <integer>.";
    }
    return "";
}

} // namespace redfuzz
