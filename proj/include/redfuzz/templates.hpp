#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "redfuzz/wire.hpp"

namespace redfuzz {

enum class Role { Plan, Reflect, Execute, Control, Distill, Merge, Judge };

enum class OutputSchema { PlanDoc, PromptText, ControlVerdict, StrategyList, ScoreInt };

inline std::string to_string(Role role) {
    switch (role) {
        case Role::Plan: return "plan";
        case Role::Reflect: return "reflect";
        case Role::Execute: return "execute";
        case Role::Control: return "control";
        case Role::Distill: return "distill";
        case Role::Merge: return "merge";
        case Role::Judge: return "judge";
    }
    return "plan";
}

inline OutputSchema schema_for_role(Role role) {
    switch (role) {
        case Role::Plan:
        case Role::Reflect: return OutputSchema::PlanDoc;
        case Role::Execute: return OutputSchema::PromptText;
        case Role::Control: return OutputSchema::ControlVerdict;
        case Role::Distill:
        case Role::Merge: return OutputSchema::StrategyList;
        case Role::Judge: return OutputSchema::ScoreInt;
    }
    return OutputSchema::PlanDoc;
}

// Placeholders each role's template must reference.
inline std::vector<std::string> required_placeholders(Role role) {
    switch (role) {
        case Role::Plan: return {"query", "strategies"};
        case Role::Reflect: return {"query", "plan", "history", "feedback"};
        case Role::Execute: return {"query", "plan", "history", "feedback"};
        case Role::Control: return {"response", "expected"};
        case Role::Distill: return {"query", "plan", "history"};
        case Role::Merge: return {"cluster"};
        case Role::Judge: return {"query", "response"};
    }
    return {};
}

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operator-editable prompt template. Placeholder grammar: {{name}}, double
// braces, no nesting. Templates ship neutral; the framework validates
// placeholder coverage only, never content.
struct RoleTemplate {
    Role role = Role::Plan;
    std::string template_text;
    OutputSchema output_schema = OutputSchema::PlanDoc;

    static std::vector<std::string> placeholders_in(const std::string& text) {
        std::vector<std::string> names;
        std::size_t pos = 0;
        while (true) {
            std::size_t open = text.find("{{", pos);
            if (open == std::string::npos) break;
            std::size_t close = text.find("}}", open + 2);
            if (close == std::string::npos)
                throw TemplateError("unterminated placeholder near offset " + std::to_string(open));
            std::string name = text.substr(open + 2, close - open - 2);
            if (name.empty() || name.find('{') != std::string::npos)
                throw TemplateError("malformed placeholder: {{" + name + "}}");
            names.push_back(std::move(name));
            pos = close + 2;
        }
        return names;
    }

    void validate() const {
        auto found = placeholders_in(template_text);
        for (const auto& need : required_placeholders(role)) {
            bool present = false;
            for (const auto& got : found)
                if (got == need) { present = true; break; }
            if (!present)
                throw TemplateError(to_string(role) + " template is missing {{" + need + "}}");
        }
    }

    std::string render(const std::map<std::string, std::string>& values) const {
        std::string out;
        out.reserve(template_text.size());
        std::size_t pos = 0;
        while (true) {
            std::size_t open = template_text.find("{{", pos);
            if (open == std::string::npos) {
                out.append(template_text, pos, std::string::npos);
                break;
            }
            out.append(template_text, pos, open - pos);
            std::size_t close = template_text.find("}}", open + 2);
            if (close == std::string::npos) throw TemplateError("unterminated placeholder");
            std::string name = template_text.substr(open + 2, close - open - 2);
            auto it = values.find(name);
            if (it == values.end())
                throw TemplateError("no value for placeholder {{" + name + "}}");
            out.append(it->second);
            pos = close + 2;
        }
        return out;
    }
};

inline RoleTemplate load_role_template(const std::string& path, Role role) {
    RoleTemplate tmpl;
    tmpl.role = role;
    tmpl.template_text = read_text_file(path);
    tmpl.output_schema = schema_for_role(role);
    tmpl.validate();
    return tmpl;
}

} // namespace redfuzz
