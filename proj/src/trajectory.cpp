// SPDX-License-Identifier: Apache-2.0

#include "otc/trajectory.hpp"

#include <algorithm>
#include <sstream>

#include "otc/errors.hpp"

namespace otc {

void validate(const Trajectory& t, std::optional<int> max_calls) {
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const Step& s = t.steps[i];
        if (s.tool_call.has_value() != s.observation.has_value()) {
            throw StructuralError("step " + std::to_string(i) + " of '" + t.question_id +
                                  (s.observation ? "' has an observation without a tool call"
                                                 : "' has a tool call without an observation"));
        }
    }
    if (max_calls) {
        const int m = tool_call_count(t);
        if (m > *max_calls) {
            throw StructuralError("trajectory '" + t.question_id + "' makes " + std::to_string(m) +
                                  " tool calls, budget is " + std::to_string(*max_calls));
        }
    }
}

bool is_canonical(const Trajectory& t) {
    for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
        if (!t.steps[i].has_tool_call()) {
            return false;
        }
    }
    return true;
}

int tool_call_count(const Trajectory& t) {
    validate(t);
    return static_cast<int>(
        std::count_if(t.steps.begin(), t.steps.end(), [](const Step& s) { return s.has_tool_call(); }));
}

namespace {

std::string join_reasoning(const std::string& a, const std::string& b) {
    if (a.empty()) {
        return b;
    }
    if (b.empty()) {
        return a;
    }
    return a + " " + b;
}

}  // namespace

Trajectory merge_no_tool_steps(Trajectory t) {
    std::vector<Step> merged;
    merged.reserve(t.steps.size());
    std::string carry;
    bool pending = false;
    for (Step& s : t.steps) {
        if (pending) {
            s.reasoning = join_reasoning(carry, s.reasoning);
            carry.clear();
            pending = false;
        }
        if (!s.has_tool_call()) {
            carry = std::move(s.reasoning);
            pending = true;
            continue;
        }
        merged.push_back(std::move(s));
    }
    if (pending) {
        merged.push_back(Step{std::move(carry), std::nullopt, std::nullopt});
    }
    t.steps = std::move(merged);
    return t;
}

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        out.push_back(std::move(tok));
    }
    return out;
}

std::vector<Token> serialize(const Trajectory& t) {
    validate(t);
    std::vector<Token> out;
    auto emit = [&out](std::string text, TokenRole role, std::size_t step) {
        out.push_back(Token{std::move(text), role, step});
    };
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const Step& s = t.steps[i];
        for (auto& w : split_whitespace(s.reasoning)) {
            emit(std::move(w), TokenRole::Reasoning, i);
        }
        if (!s.tool_call) {
            continue;
        }
        emit(kCallOpen, TokenRole::CallMarker, i);
        emit(s.tool_call->tool, TokenRole::CallTool, i);
        for (auto& w : split_whitespace(s.tool_call->query)) {
            emit(std::move(w), TokenRole::CallQuery, i);
        }
        emit(kCallClose, TokenRole::CallMarker, i);
        emit(kObsOpen, TokenRole::Observation, i);
        for (auto& w : split_whitespace(*s.observation)) {
            emit(std::move(w), TokenRole::Observation, i);
        }
        emit(kObsClose, TokenRole::Observation, i);
    }
    const std::size_t answer_step = t.steps.size();
    emit(kAnswerOpen, TokenRole::AnswerMarker, answer_step);
    for (auto& w : split_whitespace(t.final_answer)) {
        emit(std::move(w), TokenRole::Answer, answer_step);
    }
    emit(kAnswerClose, TokenRole::AnswerMarker, answer_step);
    return out;
}

std::size_t observation_token_length(const std::string& observation) {
    return split_whitespace(observation).size() + 2;
}

TokenMask build_token_mask(const Trajectory& t) {
    const auto tokens = serialize(t);
    TokenMask mask(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        mask[i] = tokens[i].from_policy();
    }
    return mask;
}

TokenMask build_token_mask(const Trajectory& t, const std::vector<Token>& tokens) {
    if (tokens != serialize(t)) {
        throw StructuralError("token stream does not match the serialization of '" + t.question_id + "'");
    }
    TokenMask mask(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        mask[i] = tokens[i].from_policy();
    }
    return mask;
}

void to_json(nlohmann::json& j, const Trajectory& t) {
    auto steps = nlohmann::json::array();
    for (const Step& s : t.steps) {
        nlohmann::json js = {{"reasoning", s.reasoning}};
        if (s.tool_call) {
            js["tool_call"] = {{"tool", s.tool_call->tool}, {"query", s.tool_call->query}};
        }
        if (s.observation) {
            js["observation"] = *s.observation;
        }
        steps.push_back(std::move(js));
    }
    j = nlohmann::json{
        {"question_id", t.question_id},
        {"steps", std::move(steps)},
        {"final_answer", t.final_answer},
        {"format_ok", t.format_ok},
    };
}

void from_json(const nlohmann::json& j, Trajectory& t) {
    try {
        t.question_id = j.at("question_id").get<std::string>();
        t.final_answer = j.at("final_answer").get<std::string>();
        t.format_ok = j.value("format_ok", true);
        t.steps.clear();
        for (const auto& js : j.at("steps")) {
            Step s;
            s.reasoning = js.value("reasoning", std::string{});
            if (auto it = js.find("tool_call"); it != js.end() && !it->is_null()) {
                s.tool_call = ToolCall{it->at("tool").get<std::string>(), it->at("query").get<std::string>()};
            }
            if (auto it = js.find("observation"); it != js.end() && !it->is_null()) {
                s.observation = it->get<std::string>();
            }
            t.steps.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("malformed trajectory record: ") + e.what());
    }
    validate(t);
}

std::string to_jsonl_line(const Trajectory& t) {
    return nlohmann::json(t).dump();
}

Trajectory trajectory_from_jsonl_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw StructuralError(std::string("invalid trajectory JSON: ") + e.what());
    }
    return j.get<Trajectory>();
}

}  // namespace otc
