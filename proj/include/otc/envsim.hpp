// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "otc/rng.hpp"
#include "otc/trajectory.hpp"

namespace otc {

/// Evidence ids are slots in [0, kMaxEvidenceSlots); a task needing E items
/// uses slots 0..E-1, so the slot index doubles as the query an agent sends.
inline constexpr int kMaxEvidenceSlots = 16;

inline constexpr const char* kSearchTool = "search";

/// A question whose answer needs a fixed set of evidence items, some of which
/// the agent already knows. The optimal tool-call count is the number of
/// needed items it does not know.
struct SyntheticTask {
    std::string question_id;
    std::vector<int> evidence_set;
    std::vector<int> known_mask;
    std::string answer;
    std::vector<std::string> distractor_answers;

    int optimal_calls() const;
    std::uint32_t evidence_bits() const;
    std::uint32_t known_bits() const;
    TaskRecord record() const;

    bool operator==(const SyntheticTask&) const = default;
};

/// Throws ConfigError when the task breaks its invariants or needs more
/// evidence than the budget allows.
void validate_task(const SyntheticTask& task, int max_calls);

struct TasksetParams {
    int count = 200;
    int evidence_min = 0;
    int evidence_max = 3;
    double knowledge_prob = 0.5;
    std::uint64_t seed = 1;
    int max_calls = 4;

    void validate() const;
};

/// Deterministic under params.seed. Evidence counts are uniform on
/// [evidence_min, evidence_max]; each item is pre-known with knowledge_prob.
std::vector<SyntheticTask> generate_taskset(const TasksetParams& params);

void to_json(nlohmann::json& j, const SyntheticTask& t);
void from_json(const nlohmann::json& j, SyntheticTask& t);

void write_taskset(const std::filesystem::path& path, const std::vector<SyntheticTask>& tasks);
std::vector<SyntheticTask> read_taskset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Environment

struct EnvState {
    std::string question_id;
    std::uint32_t revealed = 0;  ///< known items plus items revealed by calls
    int steps_taken = 0;
    int calls_made = 0;
    bool terminal = false;

    bool operator==(const EnvState&) const = default;
};

EnvState initial_state(const SyntheticTask& task);

struct Action {
    enum class Kind { Call, Answer };
    Kind kind = Kind::Answer;
    int evidence = -1;
    std::string candidate;

    static Action call(int evidence) { return Action{Kind::Call, evidence, {}}; }
    static Action answer(std::string candidate) { return Action{Kind::Answer, -1, std::move(candidate)}; }
};

struct StepOutcome {
    EnvState state;
    std::string observation;
    bool correct = false;           ///< only meaningful when state.terminal
    bool budget_exhausted = false;  ///< the call was rejected
};

/// One environment transition.
///
/// CALL(e) reveals e if it is needed, otherwise returns a miss payload; the
/// call counts either way. A CALL with no budget left is rejected: only
/// steps_taken advances. ANSWER ends the episode and is correct iff the
/// candidate matches and every needed item has been revealed.
StepOutcome step(const EnvState& state, const Action& action, const SyntheticTask& task, int max_calls);

/// The answer an agent can produce from what it has revealed: the truth when
/// fully evidenced, a distractor otherwise.
std::string candidate_answer(const SyntheticTask& task, const EnvState& state);

std::string observation_payload(const SyntheticTask& task, int evidence);

// ---------------------------------------------------------------------------
// Agent interface

/// Observable state: (evidence-set size, revealed bitmask, calls made).
struct StateKey {
    int evidence_count = 0;
    std::uint32_t revealed = 0;
    int calls_made = 0;

    auto operator<=>(const StateKey&) const = default;

    std::string to_string() const;
    static StateKey parse(std::string_view text);
};

StateKey state_key(const SyntheticTask& task, const EnvState& state);

/// Action indices: 0 is ANSWER, i in [1, C] is CALL(i - 1).
inline constexpr int kAnswerAction = 0;
inline int num_actions(int max_calls) { return max_calls + 1; }
Action to_action(int index, const SyntheticTask& task, const EnvState& state);

struct Choice {
    int action = kAnswerAction;
    double logprob = 0.0;
};

class AgentPolicy {
public:
    virtual ~AgentPolicy() = default;
    virtual Choice choose(const StateKey& state, Rng& rng) const = 0;
};

/// Calls each unknown needed item once (lowest slot first), then answers.
class OracleAgent final : public AgentPolicy {
public:
    Choice choose(const StateKey& state, Rng& rng) const override;
};

/// Answers immediately.
class AlwaysAnswerAgent final : public AgentPolicy {
public:
    Choice choose(const StateKey& state, Rng& rng) const override;
};

/// Fetches missing items first and then keeps calling until the budget
/// runs out, so every episode spends exactly C calls.
class MaxCallsAgent final : public AgentPolicy {
public:
    Choice choose(const StateKey& state, Rng& rng) const override;
};

struct RolloutLimits {
    int max_steps = 5;
    int max_calls = 4;
};

/// A sampled decision and the state it was taken in.
struct Decision {
    StateKey state;
    int action = kAnswerAction;
    double logprob = 0.0;
};

struct Episode {
    Trajectory trajectory;
    std::vector<Decision> decisions;
    /// Observable state before each trajectory step (one per step).
    std::vector<StateKey> step_states;
    bool correct = false;
    /// The answer was forced by the step limit or the exhausted budget and
    /// is not a policy decision.
    bool forced_answer = false;
};

/// Samples actions until ANSWER. When max_steps actions have been taken or
/// the call budget is spent, the agent's current candidate is submitted.
Episode rollout(const AgentPolicy& policy, const SyntheticTask& task, const RolloutLimits& limits, Rng& rng);

}  // namespace otc
