// SPDX-License-Identifier: Apache-2.0

#include "otc/envsim.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>

#include "otc/errors.hpp"

namespace otc {

namespace {

std::uint32_t bits_of(const std::vector<int>& ids) {
    std::uint32_t bits = 0;
    for (int e : ids) {
        bits |= std::uint32_t{1} << e;
    }
    return bits;
}

std::string random_token(Rng& rng, std::string_view prefix) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(prefix);
    for (int i = 0; i < 6; ++i) {
        out.push_back(kHex[rng.uniform_int(0, 15)]);
    }
    return out;
}

}  // namespace

int SyntheticTask::optimal_calls() const {
    return std::popcount(evidence_bits() & ~known_bits());
}

std::uint32_t SyntheticTask::evidence_bits() const { return bits_of(evidence_set); }

std::uint32_t SyntheticTask::known_bits() const { return bits_of(known_mask); }

TaskRecord SyntheticTask::record() const {
    return TaskRecord{question_id, answer, optimal_calls()};
}

void validate_task(const SyntheticTask& task, int max_calls) {
    const auto fail = [&task](const std::string& why) {
        throw ConfigError("task '" + task.question_id + "': " + why);
    };
    std::set<int> seen;
    for (int e : task.evidence_set) {
        if (e < 0 || e >= kMaxEvidenceSlots) fail("evidence id out of range");
        if (!seen.insert(e).second) fail("duplicate evidence id");
    }
    // Slots must be 0..E-1 so the observable state identifies what is missing.
    for (std::size_t i = 0; i < task.evidence_set.size(); ++i) {
        if (!seen.contains(static_cast<int>(i))) fail("evidence ids must be the slots 0..E-1");
    }
    for (int e : task.known_mask) {
        if (!seen.contains(e)) fail("known item is not in the evidence set");
    }
    if (static_cast<int>(task.evidence_set.size()) > max_calls) {
        fail("needs " + std::to_string(task.evidence_set.size()) + " evidence items, budget is " +
             std::to_string(max_calls));
    }
    if (task.answer.empty() || task.answer.find_first_of(" \t\n") != std::string::npos) {
        fail("answer must be a single non-empty token");
    }
    if (task.distractor_answers.empty()) fail("at least one distractor answer is required");
    for (const auto& d : task.distractor_answers) {
        if (d == task.answer) fail("distractor equals the answer");
    }
}

void TasksetParams::validate() const {
    if (count < 0) throw ConfigError("task count must be non-negative");
    if (max_calls < 1 || max_calls > kMaxEvidenceSlots) {
        throw ConfigError("max_calls must lie in [1, " + std::to_string(kMaxEvidenceSlots) + "]");
    }
    if (evidence_min > evidence_max) throw ConfigError("evidence range is empty");
    if (evidence_min < 0 || evidence_max > max_calls) {
        throw ConfigError("evidence range must lie within [0, max_calls]");
    }
    if (!(knowledge_prob >= 0.0 && knowledge_prob <= 1.0)) {
        throw ConfigError("knowledge_prob must lie in [0, 1]");
    }
}

std::vector<SyntheticTask> generate_taskset(const TasksetParams& params) {
    params.validate();
    Rng rng(derive_seed(params.seed, {0x7a5c}));
    std::vector<SyntheticTask> tasks;
    tasks.reserve(static_cast<std::size_t>(params.count));
    for (int i = 0; i < params.count; ++i) {
        SyntheticTask t;
        char qid[16];
        std::snprintf(qid, sizeof qid, "q%04d", i);
        t.question_id = qid;
        const int e_count = static_cast<int>(rng.uniform_int(params.evidence_min, params.evidence_max));
        for (int e = 0; e < e_count; ++e) {
            t.evidence_set.push_back(e);
            if (rng.bernoulli(params.knowledge_prob)) {
                t.known_mask.push_back(e);
            }
        }
        t.answer = random_token(rng, "ans-");
        while (t.distractor_answers.size() < 3) {
            auto d = random_token(rng, "ans-");
            if (d != t.answer &&
                std::find(t.distractor_answers.begin(), t.distractor_answers.end(), d) ==
                    t.distractor_answers.end()) {
                t.distractor_answers.push_back(std::move(d));
            }
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void to_json(nlohmann::json& j, const SyntheticTask& t) {
    j = nlohmann::json{
        {"question_id", t.question_id}, {"evidence_set", t.evidence_set}, {"known_mask", t.known_mask},
        {"answer", t.answer},           {"distractors", t.distractor_answers},
    };
}

void from_json(const nlohmann::json& j, SyntheticTask& t) {
    try {
        t.question_id = j.at("question_id").get<std::string>();
        t.evidence_set = j.at("evidence_set").get<std::vector<int>>();
        t.known_mask = j.at("known_mask").get<std::vector<int>>();
        t.answer = j.at("answer").get<std::string>();
        t.distractor_answers = j.at("distractors").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("malformed task record: ") + e.what());
    }
}

void write_taskset(const std::filesystem::path& path, const std::vector<SyntheticTask>& tasks) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write task set to " + path.string());
    }
    for (const auto& t : tasks) {
        out << nlohmann::json(t).dump() << '\n';
    }
}

std::vector<SyntheticTask> read_taskset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read task set " + path.string());
    }
    std::vector<SyntheticTask> tasks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            tasks.push_back(nlohmann::json::parse(line).get<SyntheticTask>());
        } catch (const nlohmann::json::parse_error& e) {
            throw StructuralError(path.string() + ": " + e.what());
        }
    }
    return tasks;
}

EnvState initial_state(const SyntheticTask& task) {
    EnvState s;
    s.question_id = task.question_id;
    s.revealed = task.known_bits();
    return s;
}

std::string observation_payload(const SyntheticTask& task, int evidence) {
    const auto needed = task.evidence_bits();
    if (evidence >= 0 && evidence < kMaxEvidenceSlots && (needed >> evidence) & 1U) {
        return "e" + std::to_string(evidence) + " : fact-" + task.question_id + "-" + std::to_string(evidence);
    }
    return "no result for e" + std::to_string(evidence);
}

std::string candidate_answer(const SyntheticTask& task, const EnvState& state) {
    const auto needed = task.evidence_bits();
    const auto missing = needed & ~state.revealed;
    if (missing == 0) {
        return task.answer;
    }
    const auto k = static_cast<std::size_t>(std::popcount(missing) - 1);
    return task.distractor_answers[k % task.distractor_answers.size()];
}

StepOutcome step(const EnvState& state, const Action& action, const SyntheticTask& task, int max_calls) {
    if (state.terminal) {
        throw UsageError("step called on a finished episode of '" + task.question_id + "'");
    }
    if (state.question_id != task.question_id) {
        throw UsageError("state belongs to '" + state.question_id + "', task is '" + task.question_id + "'");
    }
    StepOutcome out;
    out.state = state;
    out.state.steps_taken += 1;

    if (action.kind == Action::Kind::Answer) {
        out.state.terminal = true;
        const bool evidenced = (task.evidence_bits() & ~state.revealed) == 0;
        out.correct = evidenced && action.candidate == task.answer;
        return out;
    }

    if (action.evidence < 0 || action.evidence >= kMaxEvidenceSlots) {
        throw DomainError("CALL evidence id " + std::to_string(action.evidence) + " out of range");
    }
    if (state.calls_made >= max_calls) {
        out.budget_exhausted = true;
        out.observation = "budget exhausted";
        return out;
    }
    out.state.calls_made += 1;
    const std::uint32_t bit = std::uint32_t{1} << action.evidence;
    if (task.evidence_bits() & bit) {
        out.state.revealed |= bit;
    }
    out.observation = observation_payload(task, action.evidence);
    return out;
}

std::string StateKey::to_string() const {
    return std::to_string(evidence_count) + "|" + std::to_string(revealed) + "|" + std::to_string(calls_made);
}

StateKey StateKey::parse(std::string_view text) {
    StateKey k;
    const auto bar1 = text.find('|');
    const auto bar2 = bar1 == std::string_view::npos ? bar1 : text.find('|', bar1 + 1);
    if (bar2 == std::string_view::npos) {
        throw StructuralError("malformed state key '" + std::string(text) + "'");
    }
    const auto parse_field = [&text](std::string_view field, auto& value) {
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
        if (ec != std::errc{} || ptr != field.data() + field.size()) {
            throw StructuralError("malformed state key '" + std::string(text) + "'");
        }
    };
    parse_field(text.substr(0, bar1), k.evidence_count);
    parse_field(text.substr(bar1 + 1, bar2 - bar1 - 1), k.revealed);
    parse_field(text.substr(bar2 + 1), k.calls_made);
    return k;
}

StateKey state_key(const SyntheticTask& task, const EnvState& state) {
    return StateKey{static_cast<int>(task.evidence_set.size()), state.revealed, state.calls_made};
}

Action to_action(int index, const SyntheticTask& task, const EnvState& state) {
    if (index == kAnswerAction) {
        return Action::answer(candidate_answer(task, state));
    }
    if (index < 0) {
        throw DomainError("negative action index");
    }
    return Action::call(index - 1);
}

namespace {

int lowest_missing(const StateKey& s) {
    for (int e = 0; e < s.evidence_count; ++e) {
        if (((s.revealed >> e) & 1U) == 0) {
            return e;
        }
    }
    return -1;
}

}  // namespace

Choice OracleAgent::choose(const StateKey& state, Rng&) const {
    const int e = lowest_missing(state);
    return Choice{e < 0 ? kAnswerAction : e + 1, 0.0};
}

Choice AlwaysAnswerAgent::choose(const StateKey&, Rng&) const {
    return Choice{kAnswerAction, 0.0};
}

Choice MaxCallsAgent::choose(const StateKey& state, Rng&) const {
    const int e = lowest_missing(state);
    return Choice{e < 0 ? 1 : e + 1, 0.0};
}

Episode rollout(const AgentPolicy& policy, const SyntheticTask& task, const RolloutLimits& limits, Rng& rng) {
    if (limits.max_steps < 1) {
        throw ConfigError("rollout needs max_steps >= 1");
    }
    Episode ep;
    ep.trajectory.question_id = task.question_id;
    ep.trajectory.format_ok = true;
    EnvState state = initial_state(task);

    while (!state.terminal) {
        const bool out_of_steps = state.steps_taken >= limits.max_steps;
        const bool out_of_budget = state.calls_made >= limits.max_calls;
        int index = kAnswerAction;
        const StateKey key = state_key(task, state);
        ep.step_states.push_back(key);
        if (out_of_steps || out_of_budget) {
            ep.forced_answer = true;
        } else {
            const Choice c = policy.choose(key, rng);
            ep.decisions.push_back(Decision{key, c.action, c.logprob});
            index = c.action;
        }
        const Action action = to_action(index, task, state);
        const StepOutcome next = step(state, action, task, limits.max_calls);
        if (action.kind == Action::Kind::Call) {
            const std::string query = "e" + std::to_string(action.evidence);
            ep.trajectory.steps.push_back(
                Step{"lookup " + query, ToolCall{kSearchTool, query}, next.observation});
        } else {
            ep.trajectory.steps.push_back(Step{"conclude", std::nullopt, std::nullopt});
            ep.trajectory.final_answer = action.candidate;
            ep.correct = next.correct;
        }
        state = next.state;
    }
    return ep;
}

}  // namespace otc
