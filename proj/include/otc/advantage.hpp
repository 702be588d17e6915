// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "otc/trajectory.hpp"

namespace otc {

struct GaeConfig {
    double gamma = 1.0;
    double lambda = 1.0;
    double clip_epsilon = 0.2;
    double kl_beta = 0.001;

    void validate() const;
};

/// Generalized advantage estimation with a zero bootstrap after the last step:
///   delta_t = r_t + gamma * V_{t+1} - V_t,   A_t = delta_t + gamma * lambda * A_{t+1}.
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   const GaeConfig& cfg);

/// GAE over the policy tokens of a sequence only. Environment tokens are
/// skipped (they are not decisions) and receive advantage 0.
std::vector<double> masked_gae(std::span<const double> rewards, std::span<const double> values,
                               const TokenMask& mask, const GaeConfig& cfg);

/// Per-token rewards for a trajectory-level reward: everything on the last
/// policy token, 0 elsewhere.
std::vector<double> terminal_token_rewards(const TokenMask& mask, double reward);

/// Group-relative advantages (r_i - mean) / std with the population std. A
/// group whose std is below 1e-8 gets all-zero advantages. Needs G >= 2.
std::vector<double> group_advantages(std::span<const double> rewards);

inline constexpr double kGroupStdFloor = 1e-8;

/// Token-level data of one sampled trajectory.
struct TokenSequence {
    std::vector<double> old_logprobs;
    std::vector<double> new_logprobs;
    TokenMask mask;
    std::vector<double> advantages;
    /// Value estimates per token (PPO only; empty otherwise).
    std::vector<double> values;
    /// KL(pi_theta || pi_ref) at each token (GRPO with beta > 0).
    std::optional<std::vector<double>> ref_kl;
    double reward = 0.0;
};

struct EpisodeBatch {
    std::vector<TokenSequence> sequences;
};

struct LossDiagnostics {
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
    double kl = 0.0;
    double mean_advantage = 0.0;
    std::size_t policy_tokens = 0;
};

struct LossResult {
    double loss = 0.0;
    /// d loss / d new_logprob, per sequence and token.
    std::vector<std::vector<double>> d_logprob;
    /// d loss / d ref_kl, per sequence and token (empty without a KL term).
    std::vector<std::vector<double>> d_kl;
    LossDiagnostics diagnostics;
};

/// Negated clipped surrogate, averaged over each trajectory's policy tokens
/// and then over trajectories. Environment tokens contribute nothing.
/// Throws StructuralError on length mismatch or a sequence without policy tokens.
LossResult ppo_surrogate_loss(const EpisodeBatch& batch, const GaeConfig& cfg);

/// Clipped surrogate plus beta * KL(pi_theta || pi_ref), where the KL is
/// averaged the same way over policy tokens. Throws ConfigError when beta > 0
/// and a sequence carries no reference KL.
LossResult grpo_loss(const EpisodeBatch& batch, const GaeConfig& cfg);

}  // namespace otc
