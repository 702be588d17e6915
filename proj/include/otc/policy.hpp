// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otc/envsim.hpp"
#include "otc/rng.hpp"

namespace otc {

/// Softmax policy over a fixed action set with one logit vector per state.
/// States never written to behave as all-zero (uniform) logits.
class TabularPolicy {
public:
    using Table = std::map<StateKey, std::vector<double>>;

    explicit TabularPolicy(int num_actions);

    int num_actions() const { return num_actions_; }
    const Table& table() const { return logits_; }

    /// Logits of a state; zeros for unseen states.
    std::vector<double> logits(const StateKey& state) const;
    std::vector<double> probabilities(const StateKey& state) const;
    std::vector<double> log_probabilities(const StateKey& state) const;
    double log_prob(const StateKey& state, int action) const;

    /// Writable logits, created as zeros on first access.
    std::vector<double>& mutable_logits(const StateKey& state);

    bool operator==(const TabularPolicy&) const = default;

    /// Checkpoint format: {"<state key>": [logits...]}.
    nlohmann::json to_json() const;
    /// Throws ConfigError if a stored vector does not have `num_actions` entries.
    static TabularPolicy from_json(const nlohmann::json& j, int num_actions);

private:
    int num_actions_;
    Table logits_;
};

void save_policy(const std::filesystem::path& path, const TabularPolicy& policy);
TabularPolicy load_policy(const std::filesystem::path& path, int num_actions);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// Samples an action index; the returned log-probability is that of the
/// sampled action under the softmax.
Choice act(const TabularPolicy& policy, const StateKey& state, Rng& rng);

/// Token-by-token greedy decoding of one decision: ANSWER when
/// P(answer) >= P(any call), otherwise the most likely call (lowest index on
/// ties). The returned log-probability is log pi(action | state).
Choice greedy_act(const TabularPolicy& policy, const StateKey& state);

/// A decision is emitted as up to two tokens: the gate marker (<call> or
/// <answer>) and, for calls, the query token.
enum class DecisionPart { Gate, Query };

/// Log-probability of the given part of `action`:
///   Gate:  log P(answer) for ANSWER, log P(any call) for a call
///   Query: log pi(action) - log P(any call); calls only.
/// Gate + Query of a call sum to log pi(action).
double part_log_prob(const TabularPolicy& policy, const StateKey& state, int action, DecisionPart part);

/// Read-only, shareable copy of a policy. Later updates to the source do not
/// show through.
class PolicySnapshot {
public:
    explicit PolicySnapshot(TabularPolicy policy)
        : policy_(std::make_shared<const TabularPolicy>(std::move(policy))) {}

    const TabularPolicy& policy() const { return *policy_; }
    const TabularPolicy* operator->() const { return policy_.get(); }

private:
    std::shared_ptr<const TabularPolicy> policy_;
};

PolicySnapshot snapshot(const TabularPolicy& policy);
inline PolicySnapshot snapshot(const PolicySnapshot& frozen) { return frozen; }

/// Samples from a tabular policy.
class SamplingAgent final : public AgentPolicy {
public:
    explicit SamplingAgent(const TabularPolicy& policy) : policy_(policy) {}
    Choice choose(const StateKey& state, Rng& rng) const override { return act(policy_, state, rng); }

private:
    const TabularPolicy& policy_;
};

/// Decodes with greedy_act. Used for evaluation.
class GreedyAgent final : public AgentPolicy {
public:
    explicit GreedyAgent(const TabularPolicy& policy) : policy_(policy) {}
    Choice choose(const StateKey& state, Rng&) const override { return greedy_act(policy_, state); }

private:
    const TabularPolicy& policy_;
};

/// Gradient with respect to the logits, keyed like the policy table.
using Gradients = std::map<StateKey, std::vector<double>>;

/// grads[state] += coeff * d log pi(action | state) / d logits
///              = coeff * (onehot(action) - pi(. | state)).
void accumulate_log_prob_gradient(Gradients& grads, const TabularPolicy& policy, const StateKey& state,
                                  int action, double coeff);

/// grads[state] += coeff * d part_log_prob(...) / d logits.
void accumulate_part_gradient(Gradients& grads, const TabularPolicy& policy, const StateKey& state, int action,
                              DecisionPart part, double coeff);

/// Exact KL(pi(.|s) || ref(.|s)) over the action set.
double kl_divergence(const TabularPolicy& policy, const TabularPolicy& reference, const StateKey& state);

/// grads[state] += coeff * d KL(pi || ref) / d logits of pi.
void accumulate_kl_gradient(Gradients& grads, const TabularPolicy& policy, const TabularPolicy& reference,
                            const StateKey& state, double coeff);

/// logits += learning_rate * grads. Throws NumericalError, leaving the policy
/// untouched, if any gradient entry is non-finite.
void apply_gradients(TabularPolicy& policy, const Gradients& grads, double learning_rate);

/// State values for GAE baselines; unseen states are worth 0.
class ValueTable {
public:
    double value(const StateKey& state) const;
    void set(const StateKey& state, double v) { values_[state] = v; }

    /// Moves each state's value toward the mean of its targets:
    /// V(s) += lr * (mean target - V(s)).
    void fit(std::span<const std::pair<StateKey, double>> targets, double learning_rate);

    const std::map<StateKey, double>& table() const { return values_; }
    nlohmann::json to_json() const;

private:
    std::map<StateKey, double> values_;
};

}  // namespace otc
