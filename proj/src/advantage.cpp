// SPDX-License-Identifier: Apache-2.0

#include "otc/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "otc/errors.hpp"

namespace otc {

void GaeConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be positive");
    if (!(kl_beta >= 0.0)) throw ConfigError("kl_beta must be non-negative");
}

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   const GaeConfig& cfg) {
    if (rewards.size() != values.size()) {
        throw StructuralError("gae_advantages: " + std::to_string(rewards.size()) + " rewards vs " +
                              std::to_string(values.size()) + " values");
    }
    const std::size_t n = rewards.size();
    std::vector<double> adv(n, 0.0);
    double next_value = 0.0;
    double next_adv = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        const double delta = rewards[k] + cfg.gamma * next_value - values[k];
        adv[k] = delta + cfg.gamma * cfg.lambda * next_adv;
        next_value = values[k];
        next_adv = adv[k];
    }
    return adv;
}

std::vector<double> masked_gae(std::span<const double> rewards, std::span<const double> values,
                               const TokenMask& mask, const GaeConfig& cfg) {
    if (rewards.size() != mask.size() || values.size() != mask.size()) {
        throw StructuralError("masked_gae: rewards, values and mask differ in length");
    }
    std::vector<double> r;
    std::vector<double> v;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            r.push_back(rewards[i]);
            v.push_back(values[i]);
            index.push_back(i);
        }
    }
    const auto compact = gae_advantages(r, v, cfg);
    std::vector<double> out(mask.size(), 0.0);
    for (std::size_t k = 0; k < index.size(); ++k) {
        out[index[k]] = compact[k];
    }
    return out;
}

std::vector<double> terminal_token_rewards(const TokenMask& mask, double reward) {
    std::vector<double> out(mask.size(), 0.0);
    for (std::size_t i = mask.size(); i-- > 0;) {
        if (mask[i]) {
            out[i] = reward;
            return out;
        }
    }
    throw StructuralError("terminal_token_rewards: sequence has no policy tokens");
}

std::vector<double> group_advantages(std::span<const double> rewards) {
    const std::size_t g = rewards.size();
    if (g < 2) {
        throw UsageError("group_advantages needs a group of at least 2, got " + std::to_string(g));
    }
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / static_cast<double>(g));

    std::vector<double> adv(g, 0.0);
    if (sd < kGroupStdFloor) {
        return adv;
    }
    for (std::size_t i = 0; i < g; ++i) {
        adv[i] = (rewards[i] - mean) / sd;
    }
    return adv;
}

namespace {

void check_shapes(const TokenSequence& s, std::size_t index) {
    const std::size_t n = s.mask.size();
    if (s.old_logprobs.size() != n || s.new_logprobs.size() != n || s.advantages.size() != n ||
        (!s.values.empty() && s.values.size() != n) || (s.ref_kl && s.ref_kl->size() != n)) {
        throw StructuralError("sequence " + std::to_string(index) + ": per-token arrays differ in length");
    }
}

std::size_t policy_token_count(const TokenSequence& s) {
    return static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), true));
}

}  // namespace

LossResult ppo_surrogate_loss(const EpisodeBatch& batch, const GaeConfig& cfg) {
    if (batch.sequences.empty()) {
        throw StructuralError("surrogate loss of an empty batch");
    }
    const double eps = cfg.clip_epsilon;
    const double inv_batch = 1.0 / static_cast<double>(batch.sequences.size());

    LossResult out;
    out.d_logprob.resize(batch.sequences.size());
    double ratio_sum = 0.0;
    double adv_sum = 0.0;
    std::size_t clipped = 0;
    std::size_t tokens = 0;

    for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
        const TokenSequence& s = batch.sequences[i];
        check_shapes(s, i);
        const std::size_t count = policy_token_count(s);
        if (count == 0) {
            throw StructuralError("sequence " + std::to_string(i) + " has no policy tokens");
        }
        const double weight = inv_batch / static_cast<double>(count);
        auto& grad = out.d_logprob[i];
        grad.assign(s.mask.size(), 0.0);
        double seq_sum = 0.0;
        for (std::size_t t = 0; t < s.mask.size(); ++t) {
            if (!s.mask[t]) {
                continue;
            }
            const double a = s.advantages[t];
            const double ratio = std::exp(s.new_logprobs[t] - s.old_logprobs[t]);
            const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
            const double unclipped_term = ratio * a;
            const double clipped_term = clipped_ratio * a;
            seq_sum += std::min(unclipped_term, clipped_term);
            // The min selects the clipped constant exactly when the ratio has
            // left the trust region in the direction the advantage favours.
            const bool active = (a > 0.0 && ratio >= 1.0 + eps) || (a < 0.0 && ratio <= 1.0 - eps);
            if (active) {
                ++clipped;
            } else {
                grad[t] = -weight * unclipped_term;
            }
            ratio_sum += ratio;
            adv_sum += a;
            ++tokens;
        }
        out.loss -= weight * seq_sum;
    }
    out.diagnostics.policy_tokens = tokens;
    out.diagnostics.mean_ratio = ratio_sum / static_cast<double>(tokens);
    out.diagnostics.mean_advantage = adv_sum / static_cast<double>(tokens);
    out.diagnostics.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
    return out;
}

LossResult grpo_loss(const EpisodeBatch& batch, const GaeConfig& cfg) {
    LossResult out = ppo_surrogate_loss(batch, cfg);
    const double inv_batch = 1.0 / static_cast<double>(batch.sequences.size());
    const bool any_kl = std::any_of(batch.sequences.begin(), batch.sequences.end(),
                                    [](const TokenSequence& s) { return s.ref_kl.has_value(); });
    if (cfg.kl_beta == 0.0 && !any_kl) {
        return out;
    }

    double kl_total = 0.0;
    out.d_kl.resize(batch.sequences.size());
    for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
        const TokenSequence& s = batch.sequences[i];
        if (!s.ref_kl) {
            throw ConfigError("grpo_loss: kl_beta > 0 but sequence " + std::to_string(i) +
                              " has no reference-policy KL");
        }
        const double weight = inv_batch / static_cast<double>(policy_token_count(s));
        auto& grad = out.d_kl[i];
        grad.assign(s.mask.size(), 0.0);
        double seq_kl = 0.0;
        for (std::size_t t = 0; t < s.mask.size(); ++t) {
            if (s.mask[t]) {
                seq_kl += (*s.ref_kl)[t];
                grad[t] = cfg.kl_beta * weight;
            }
        }
        kl_total += weight * seq_kl;
    }
    out.loss += cfg.kl_beta * kl_total;
    out.diagnostics.kl = kl_total;
    return out;
}

}  // namespace otc
