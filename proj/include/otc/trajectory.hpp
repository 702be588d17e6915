// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace otc {

/// One tool invocation: which tool and the query payload sent to it.
struct ToolCall {
    std::string tool;
    std::string query;

    bool operator==(const ToolCall&) const = default;
};

/// A reasoning segment, optionally followed by a tool call and the
/// observation the environment returned for it. A call always has an
/// observation and a no-tool step has neither.
struct Step {
    std::string reasoning;
    std::optional<ToolCall> tool_call;
    std::optional<std::string> observation;

    bool has_tool_call() const { return tool_call.has_value(); }
    bool operator==(const Step&) const = default;
};

/// Tool-integrated reasoning trajectory with its final answer.
///
/// Values are treated as immutable once built; rollout workers hand them
/// around by value or const reference.
struct Trajectory {
    std::string question_id;
    std::vector<Step> steps;
    std::string final_answer;
    bool format_ok = true;

    bool operator==(const Trajectory&) const = default;
};

/// Ground truth for one question. intrinsic_min_calls is an evaluation
/// oracle and is never shown to the learner.
struct TaskRecord {
    std::string question_id;
    std::string ground_truth;
    int intrinsic_min_calls = 0;
};

/// Checks the step invariants (call iff observation) and, when max_calls is
/// given, the tool budget. Throws StructuralError.
void validate(const Trajectory& t, std::optional<int> max_calls = std::nullopt);

/// True when no interior step lacks a tool call.
bool is_canonical(const Trajectory& t);

/// Number of steps carrying a tool call (m).
int tool_call_count(const Trajectory& t);

/// Folds each interior no-tool step's reasoning into its successor, so only a
/// trailing no-tool step can remain. Idempotent.
Trajectory merge_no_tool_steps(Trajectory t);

// ---------------------------------------------------------------------------
// Token serialization
//
// Text segments are split on whitespace. A step serializes as
//   <reasoning tokens> [<call> TOOL <query tokens> </call> <obs> <observation tokens> </obs>]
// and the trajectory ends with
//   <answer> <answer tokens> </answer>
// The <obs> ... </obs> block, markers included, is produced by the
// environment; every other token is produced by the policy.

inline constexpr const char* kCallOpen = "<call>";
inline constexpr const char* kCallClose = "</call>";
inline constexpr const char* kObsOpen = "<obs>";
inline constexpr const char* kObsClose = "</obs>";
inline constexpr const char* kAnswerOpen = "<answer>";
inline constexpr const char* kAnswerClose = "</answer>";

enum class TokenRole {
    Reasoning,
    CallMarker,
    CallTool,
    CallQuery,
    Observation,
    AnswerMarker,
    Answer,
};

struct Token {
    std::string text;
    TokenRole role = TokenRole::Reasoning;
    /// Index of the step the token belongs to; steps.size() for answer tokens.
    std::size_t step = 0;

    bool from_policy() const { return role != TokenRole::Observation; }
    bool operator==(const Token&) const = default;
};

using TokenMask = std::vector<bool>;

std::vector<std::string> split_whitespace(const std::string& text);

std::vector<Token> serialize(const Trajectory& t);

/// Serialized length of an observation block, markers included.
std::size_t observation_token_length(const std::string& observation);

/// Mask over serialize(t): true for policy tokens, false for observation tokens.
TokenMask build_token_mask(const Trajectory& t);

/// Same as above, but first checks that `tokens` is the canonical
/// serialization of `t`. Throws StructuralError on mismatch.
TokenMask build_token_mask(const Trajectory& t, const std::vector<Token>& tokens);

// JSONL trajectory log format.
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

std::string to_jsonl_line(const Trajectory& t);
Trajectory trajectory_from_jsonl_line(const std::string& line);

}  // namespace otc
