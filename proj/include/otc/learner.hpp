// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "otc/advantage.hpp"
#include "otc/envsim.hpp"
#include "otc/policy.hpp"

namespace otc {

enum class Algorithm { Ppo, Grpo };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(std::string_view name);

/// Token-level view of a sampled episode.
///
/// Each sampled decision spans two tokens: the opening <call>/<answer> marker
/// carries the gate (call or answer), and for calls the first query token
/// carries which slot. A forced answer carries nothing. Every other policy
/// token is a deterministic function of the decisions, so it has
/// log-probability 0 under any policy.
struct TokenDecision {
    std::size_t index;  ///< into EpisodeTokens::decisions
    DecisionPart part;
};

struct EpisodeTokens {
    std::vector<Token> tokens;
    TokenMask mask;
    std::vector<std::optional<TokenDecision>> decision;
    /// Observable state in which each token was emitted.
    std::vector<StateKey> states;
    std::vector<Decision> decisions;
};

EpisodeTokens tokenize_episode(const Episode& episode);

/// Episodes plus the per-token arrays fed to the losses.
struct LearnerBatch {
    std::vector<EpisodeTokens> episodes;
    EpisodeBatch batch;
};

/// Builds the batch: old_logprobs under the behaviour policy that sampled the
/// episodes, and the given per-token advantages (one vector per episode).
LearnerBatch make_learner_batch(std::vector<EpisodeTokens> episodes, std::vector<std::vector<double>> advantages,
                                std::vector<double> rewards, const TabularPolicy& behaviour);

/// Recomputes new_logprobs under `policy` and, when `reference` is given, the
/// exact KL to it on each gate token.
void refresh_log_probs(LearnerBatch& lb, const TabularPolicy& policy, const TabularPolicy* reference);

/// Loss for the algorithm (PPO: clipped surrogate; GRPO: surrogate + beta KL)
/// after refreshing log-probabilities under `policy`.
LossResult compute_loss(LearnerBatch& lb, const TabularPolicy& policy, const TabularPolicy* reference,
                        const GaeConfig& cfg, Algorithm algorithm);

/// Chain rule from per-token loss derivatives to d loss / d logits.
Gradients loss_gradient(const LearnerBatch& lb, const LossResult& loss, const TabularPolicy& policy,
                        const TabularPolicy* reference);

struct UpdateStats {
    double first_loss = 0.0;
    double last_loss = 0.0;
    LossDiagnostics diagnostics;  ///< from the first iteration
};

/// Runs `iterations` gradient steps descending the loss (ascending the
/// objective). Throws NumericalError on a non-finite loss.
UpdateStats optimize(LearnerBatch& lb, TabularPolicy& policy, const TabularPolicy* reference,
                     const GaeConfig& cfg, Algorithm algorithm, double learning_rate, int iterations);

}  // namespace otc
