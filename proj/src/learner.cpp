// SPDX-License-Identifier: Apache-2.0

#include "otc/learner.hpp"

#include <cmath>

#include "otc/errors.hpp"

namespace otc {

std::string to_string(Algorithm algorithm) {
    return algorithm == Algorithm::Ppo ? "ppo" : "grpo";
}

Algorithm algorithm_from_string(std::string_view name) {
    if (name == "ppo") return Algorithm::Ppo;
    if (name == "grpo") return Algorithm::Grpo;
    throw ConfigError("unknown algorithm '" + std::string(name) + "' (expected ppo or grpo)");
}

EpisodeTokens tokenize_episode(const Episode& episode) {
    const Trajectory& t = episode.trajectory;
    if (episode.step_states.size() != t.steps.size()) {
        throw StructuralError("episode '" + t.question_id + "' has " + std::to_string(t.steps.size()) +
                              " steps but " + std::to_string(episode.step_states.size()) + " step states");
    }
    const int m = tool_call_count(t);
    const std::size_t expected = static_cast<std::size_t>(m) + (episode.forced_answer ? 0 : 1);
    if (episode.decisions.size() != expected || !is_canonical(t)) {
        throw StructuralError("episode '" + t.question_id + "' decisions do not line up with its steps");
    }

    EpisodeTokens view;
    view.tokens = serialize(t);
    view.mask = build_token_mask(t, view.tokens);
    view.decisions = episode.decisions;
    view.decision.assign(view.tokens.size(), std::nullopt);
    view.states.resize(view.tokens.size());

    std::size_t next_decision = 0;
    for (std::size_t i = 0; i < view.tokens.size(); ++i) {
        const Token& tok = view.tokens[i];
        const std::size_t step = std::min(tok.step, t.steps.size() - 1);
        view.states[i] = episode.step_states[step];
        const bool call_open = tok.role == TokenRole::CallMarker && tok.text == kCallOpen;
        const bool answer_open = tok.role == TokenRole::AnswerMarker && tok.text == kAnswerOpen;
        const bool first_query = tok.role == TokenRole::CallQuery && view.tokens[i - 1].role == TokenRole::CallTool;
        if (call_open || (answer_open && !episode.forced_answer)) {
            view.decision[i] = TokenDecision{next_decision, DecisionPart::Gate};
        } else if (first_query) {
            view.decision[i] = TokenDecision{next_decision++, DecisionPart::Query};
        }
        if (answer_open && !episode.forced_answer) {
            ++next_decision;
        }
    }
    if (next_decision != view.decisions.size()) {
        throw StructuralError("episode '" + t.question_id + "': could not place every decision on a token");
    }
    return view;
}

LearnerBatch make_learner_batch(std::vector<EpisodeTokens> episodes, std::vector<std::vector<double>> advantages,
                                std::vector<double> rewards, const TabularPolicy& behaviour) {
    if (advantages.size() != episodes.size() || rewards.size() != episodes.size()) {
        throw StructuralError("make_learner_batch: episodes, advantages and rewards differ in count");
    }
    LearnerBatch lb;
    lb.batch.sequences.reserve(episodes.size());
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const EpisodeTokens& e = episodes[i];
        TokenSequence s;
        s.mask = e.mask;
        s.old_logprobs.assign(e.tokens.size(), 0.0);
        for (std::size_t t = 0; t < e.tokens.size(); ++t) {
            if (const auto& td = e.decision[t]) {
                const Decision& d = e.decisions[td->index];
                s.old_logprobs[t] = part_log_prob(behaviour, d.state, d.action, td->part);
            }
        }
        s.new_logprobs = s.old_logprobs;
        s.advantages = std::move(advantages[i]);
        s.reward = rewards[i];
        lb.batch.sequences.push_back(std::move(s));
    }
    lb.episodes = std::move(episodes);
    return lb;
}

void refresh_log_probs(LearnerBatch& lb, const TabularPolicy& policy, const TabularPolicy* reference) {
    for (std::size_t i = 0; i < lb.episodes.size(); ++i) {
        const EpisodeTokens& e = lb.episodes[i];
        TokenSequence& s = lb.batch.sequences[i];
        if (reference) {
            s.ref_kl.emplace(e.tokens.size(), 0.0);
        } else {
            s.ref_kl.reset();
        }
        for (std::size_t t = 0; t < e.tokens.size(); ++t) {
            const auto& td = e.decision[t];
            if (!td) {
                continue;
            }
            const Decision& d = e.decisions[td->index];
            s.new_logprobs[t] = part_log_prob(policy, d.state, d.action, td->part);
            if (reference && td->part == DecisionPart::Gate) {
                (*s.ref_kl)[t] = kl_divergence(policy, *reference, d.state);
            }
        }
    }
}

LossResult compute_loss(LearnerBatch& lb, const TabularPolicy& policy, const TabularPolicy* reference,
                        const GaeConfig& cfg, Algorithm algorithm) {
    if (algorithm == Algorithm::Ppo) {
        refresh_log_probs(lb, policy, nullptr);
        return ppo_surrogate_loss(lb.batch, cfg);
    }
    refresh_log_probs(lb, policy, cfg.kl_beta > 0.0 ? reference : nullptr);
    return grpo_loss(lb.batch, cfg);
}

Gradients loss_gradient(const LearnerBatch& lb, const LossResult& loss, const TabularPolicy& policy,
                        const TabularPolicy* reference) {
    Gradients grads;
    for (std::size_t i = 0; i < lb.episodes.size(); ++i) {
        const EpisodeTokens& e = lb.episodes[i];
        for (std::size_t t = 0; t < e.tokens.size(); ++t) {
            const auto& td = e.decision[t];
            if (!td) {
                continue;
            }
            const Decision& d = e.decisions[td->index];
            accumulate_part_gradient(grads, policy, d.state, d.action, td->part, loss.d_logprob[i][t]);
            if (!loss.d_kl.empty() && reference && td->part == DecisionPart::Gate) {
                accumulate_kl_gradient(grads, policy, *reference, d.state, loss.d_kl[i][t]);
            }
        }
    }
    return grads;
}

UpdateStats optimize(LearnerBatch& lb, TabularPolicy& policy, const TabularPolicy* reference,
                     const GaeConfig& cfg, Algorithm algorithm, double learning_rate, int iterations) {
    UpdateStats stats;
    for (int it = 0; it < iterations; ++it) {
        const LossResult loss = compute_loss(lb, policy, reference, cfg, algorithm);
        if (!std::isfinite(loss.loss)) {
            throw NumericalError("non-finite loss at update iteration " + std::to_string(it));
        }
        if (it == 0) {
            stats.first_loss = loss.loss;
            stats.diagnostics = loss.diagnostics;
        }
        stats.last_loss = loss.loss;
        Gradients grads = loss_gradient(lb, loss, policy, reference);
        apply_gradients(policy, grads, -learning_rate);
    }
    return stats;
}

}  // namespace otc
