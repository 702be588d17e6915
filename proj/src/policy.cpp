// SPDX-License-Identifier: Apache-2.0

#include "otc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "otc/errors.hpp"

namespace otc {

TabularPolicy::TabularPolicy(int num_actions) : num_actions_(num_actions) {
    if (num_actions < 1) {
        throw ConfigError("a policy needs at least one action");
    }
}

std::vector<double> TabularPolicy::logits(const StateKey& state) const {
    if (auto it = logits_.find(state); it != logits_.end()) {
        return it->second;
    }
    return std::vector<double>(static_cast<std::size_t>(num_actions_), 0.0);
}

std::vector<double> TabularPolicy::probabilities(const StateKey& state) const {
    return softmax(logits(state));
}

std::vector<double> TabularPolicy::log_probabilities(const StateKey& state) const {
    return log_softmax(logits(state));
}

double TabularPolicy::log_prob(const StateKey& state, int action) const {
    if (action < 0 || action >= num_actions_) {
        throw DomainError("action index " + std::to_string(action) + " out of range");
    }
    return log_probabilities(state)[static_cast<std::size_t>(action)];
}

std::vector<double>& TabularPolicy::mutable_logits(const StateKey& state) {
    auto [it, inserted] = logits_.try_emplace(state);
    if (inserted) {
        it->second.assign(static_cast<std::size_t>(num_actions_), 0.0);
    }
    return it->second;
}

nlohmann::json TabularPolicy::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [state, z] : logits_) {
        j[state.to_string()] = z;
    }
    return j;
}

TabularPolicy TabularPolicy::from_json(const nlohmann::json& j, int num_actions) {
    if (!j.is_object()) {
        throw StructuralError("policy checkpoint must be a JSON object");
    }
    TabularPolicy p(num_actions);
    for (const auto& [key, value] : j.items()) {
        auto z = value.get<std::vector<double>>();
        if (static_cast<int>(z.size()) != num_actions) {
            throw ConfigError("policy checkpoint state " + key + " has " + std::to_string(z.size()) +
                              " logits, expected " + std::to_string(num_actions) +
                              " (tool budget mismatch?)");
        }
        p.logits_[StateKey::parse(key)] = std::move(z);
    }
    return p;
}

void save_policy(const std::filesystem::path& path, const TabularPolicy& policy) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write policy checkpoint " + path.string());
    }
    out << policy.to_json().dump(1) << '\n';
}

TabularPolicy load_policy(const std::filesystem::path& path, int num_actions) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read policy checkpoint " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw StructuralError(path.string() + ": " + e.what());
    }
    return TabularPolicy::from_json(j, num_actions);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - top);
    const double lse = top + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

Choice act(const TabularPolicy& policy, const StateKey& state, Rng& rng) {
    const auto logp = policy.log_probabilities(state);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = logp.size() - 1;
    for (std::size_t i = 0; i < logp.size(); ++i) {
        cumulative += std::exp(logp[i]);
        if (u < cumulative) {
            pick = i;
            break;
        }
    }
    return Choice{static_cast<int>(pick), logp[pick]};
}

namespace {

/// log P(any call) = logsumexp(call logits) - logsumexp(all logits).
double log_call_mass(const std::vector<double>& logp) {
    const double top = *std::max_element(logp.begin() + 1, logp.end());
    double sum = 0.0;
    for (auto it = logp.begin() + 1; it != logp.end(); ++it) sum += std::exp(*it - top);
    return top + std::log(sum);
}

}  // namespace

Choice greedy_act(const TabularPolicy& policy, const StateKey& state) {
    const auto logp = policy.log_probabilities(state);
    if (logp.size() == 1 || logp[kAnswerAction] >= log_call_mass(logp)) {
        return Choice{kAnswerAction, logp[kAnswerAction]};
    }
    const auto best = static_cast<std::size_t>(std::max_element(logp.begin() + 1, logp.end()) - logp.begin());
    return Choice{static_cast<int>(best), logp[best]};
}

double part_log_prob(const TabularPolicy& policy, const StateKey& state, int action, DecisionPart part) {
    if (action < 0 || action >= policy.num_actions()) {
        throw DomainError("action index " + std::to_string(action) + " out of range");
    }
    const auto logp = policy.log_probabilities(state);
    if (action == kAnswerAction) {
        if (part == DecisionPart::Query) {
            throw UsageError("ANSWER has no query token");
        }
        return logp[kAnswerAction];
    }
    const double calls = log_call_mass(logp);
    return part == DecisionPart::Gate ? calls : logp[static_cast<std::size_t>(action)] - calls;
}

PolicySnapshot snapshot(const TabularPolicy& policy) {
    return PolicySnapshot(policy);
}

namespace {

std::vector<double>& grad_row(Gradients& grads, const StateKey& state, int num_actions) {
    auto [it, inserted] = grads.try_emplace(state);
    if (inserted) {
        it->second.assign(static_cast<std::size_t>(num_actions), 0.0);
    }
    return it->second;
}

}  // namespace

void accumulate_log_prob_gradient(Gradients& grads, const TabularPolicy& policy, const StateKey& state,
                                  int action, double coeff) {
    if (coeff == 0.0) {
        return;
    }
    const auto p = policy.probabilities(state);
    auto& row = grad_row(grads, state, policy.num_actions());
    for (std::size_t j = 0; j < p.size(); ++j) {
        row[j] -= coeff * p[j];
    }
    row[static_cast<std::size_t>(action)] += coeff;
}

void accumulate_part_gradient(Gradients& grads, const TabularPolicy& policy, const StateKey& state, int action,
                              DecisionPart part, double coeff) {
    if (coeff == 0.0) {
        return;
    }
    if (action == kAnswerAction && part == DecisionPart::Query) {
        throw UsageError("ANSWER has no query token");
    }
    const auto p = policy.probabilities(state);
    double call_mass = 0.0;
    for (std::size_t j = 1; j < p.size(); ++j) call_mass += p[j];
    auto& row = grad_row(grads, state, policy.num_actions());
    const auto a = static_cast<std::size_t>(action);
    if (part == DecisionPart::Gate) {
        // d log P(S) / dz_j = [j in S] p_j / P(S) - p_j
        const bool answer = action == kAnswerAction;
        const double mass = answer ? p[0] : call_mass;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const bool in_subset = answer ? j == 0 : j != 0;
            row[j] += coeff * ((in_subset ? p[j] / mass : 0.0) - p[j]);
        }
        return;
    }
    // d [log p_a - log P(calls)] / dz_j = [j = a] - [j is a call] p_j / P(calls)
    for (std::size_t j = 1; j < p.size(); ++j) {
        row[j] -= coeff * p[j] / call_mass;
    }
    row[a] += coeff;
}

double kl_divergence(const TabularPolicy& policy, const TabularPolicy& reference, const StateKey& state) {
    const auto lp = policy.log_probabilities(state);
    const auto lq = reference.log_probabilities(state);
    double kl = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
        kl += std::exp(lp[j]) * (lp[j] - lq[j]);
    }
    return std::max(kl, 0.0);
}

void accumulate_kl_gradient(Gradients& grads, const TabularPolicy& policy, const TabularPolicy& reference,
                            const StateKey& state, double coeff) {
    if (coeff == 0.0) {
        return;
    }
    const auto lp = policy.log_probabilities(state);
    const auto lq = reference.log_probabilities(state);
    double kl = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
        kl += std::exp(lp[j]) * (lp[j] - lq[j]);
    }
    // dKL/dz_j = p_j * (log p_j - log q_j - KL)
    auto& row = grad_row(grads, state, policy.num_actions());
    for (std::size_t j = 0; j < lp.size(); ++j) {
        row[j] += coeff * std::exp(lp[j]) * (lp[j] - lq[j] - kl);
    }
}

void apply_gradients(TabularPolicy& policy, const Gradients& grads, double learning_rate) {
    for (const auto& [state, g] : grads) {
        if (static_cast<int>(g.size()) != policy.num_actions()) {
            throw StructuralError("gradient for state " + state.to_string() + " has the wrong width");
        }
        for (double v : g) {
            if (!std::isfinite(v)) {
                throw NumericalError("non-finite gradient at state " + state.to_string());
            }
        }
    }
    if (!std::isfinite(learning_rate)) {
        throw NumericalError("non-finite learning rate");
    }
    if (learning_rate == 0.0) {
        return;
    }
    for (const auto& [state, g] : grads) {
        auto& z = policy.mutable_logits(state);
        for (std::size_t j = 0; j < g.size(); ++j) {
            z[j] += learning_rate * g[j];
        }
    }
}

double ValueTable::value(const StateKey& state) const {
    if (auto it = values_.find(state); it != values_.end()) {
        return it->second;
    }
    return 0.0;
}

void ValueTable::fit(std::span<const std::pair<StateKey, double>> targets, double learning_rate) {
    std::map<StateKey, std::pair<double, int>> sums;
    for (const auto& [state, target] : targets) {
        auto& acc = sums[state];
        acc.first += target;
        acc.second += 1;
    }
    for (const auto& [state, acc] : sums) {
        const double mean = acc.first / acc.second;
        const double v = value(state);
        values_[state] = v + learning_rate * (mean - v);
    }
}

nlohmann::json ValueTable::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [state, v] : values_) {
        j[state.to_string()] = v;
    }
    return j;
}

}  // namespace otc
