// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "otc/advantage.hpp"
#include "otc/errors.hpp"
#include "otc/rng.hpp"

using namespace otc;

namespace {

// Direct evaluation of the clipped surrogate objective, negated.
double surrogate_oracle(const EpisodeBatch& batch, double eps) {
    double total = 0.0;
    for (const auto& s : batch.sequences) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t t = 0; t < s.mask.size(); ++t) {
            if (!s.mask[t]) continue;
            const double ratio = std::exp(s.new_logprobs[t] - s.old_logprobs[t]);
            const double a = s.advantages[t];
            sum += std::min(ratio * a, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a);
            ++count;
        }
        total += sum / count;
    }
    return -total / static_cast<double>(batch.sequences.size());
}

TokenSequence random_sequence(Rng& rng, std::size_t len) {
    TokenSequence s;
    for (std::size_t t = 0; t < len; ++t) {
        s.mask.push_back(t == 0 || rng.bernoulli(0.7));
        s.old_logprobs.push_back(-rng.uniform() * 2.0);
        s.new_logprobs.push_back(s.old_logprobs.back() + (rng.uniform() - 0.5) * 0.8);
        s.advantages.push_back(rng.uniform() * 4.0 - 2.0);
    }
    return s;
}

EpisodeBatch random_batch(Rng& rng) {
    EpisodeBatch b;
    const auto n = rng.uniform_int(1, 4);
    for (int i = 0; i < n; ++i) b.sequences.push_back(random_sequence(rng, static_cast<std::size_t>(rng.uniform_int(1, 8))));
    return b;
}

}  // namespace

TEST(Gae, TerminalRewardPropagatesWithUnitDiscount) {
    const std::vector<double> r{0.0, 1.0};
    const std::vector<double> v{0.0, 0.0};
    EXPECT_EQ(gae_advantages(r, v, GaeConfig{}), (std::vector<double>{1.0, 1.0}));
}

TEST(Gae, MatchesTdResidualRecursion) {
    Rng rng(1);
    GaeConfig cfg;
    cfg.gamma = 0.9;
    cfg.lambda = 0.8;
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
        std::vector<double> r(n);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = rng.uniform() - 0.5;
            v[i] = rng.uniform() - 0.5;
        }
        const auto a = gae_advantages(r, v, cfg);
        for (std::size_t t = 0; t < n; ++t) {
            double expected = 0.0;
            double w = 1.0;
            for (std::size_t k = t; k < n; ++k) {
                const double next = k + 1 < n ? v[k + 1] : 0.0;
                expected += w * (r[k] + cfg.gamma * next - v[k]);
                w *= cfg.gamma * cfg.lambda;
            }
            EXPECT_NEAR(a[t], expected, 1e-12);
        }
    }
}

TEST(Gae, LengthMismatchThrows) {
    const std::vector<double> r{1.0};
    const std::vector<double> v{0.0, 0.0};
    EXPECT_THROW(gae_advantages(r, v, GaeConfig{}), StructuralError);
}

TEST(Gae, MaskedSkipsEnvironmentTokens) {
    const TokenMask mask{true, false, false, true};
    const std::vector<double> r{0.0, 5.0, 5.0, 1.0};
    const std::vector<double> v{0.25, 9.0, 9.0, 0.5};
    const auto a = masked_gae(r, v, mask, GaeConfig{});
    ASSERT_EQ(a.size(), 4u);
    EXPECT_EQ(a[1], 0.0);
    EXPECT_EQ(a[2], 0.0);
    EXPECT_NEAR(a[3], 1.0 - 0.5, 1e-12);
    EXPECT_NEAR(a[0], 0.0 + 0.5 - 0.25 + a[3], 1e-12);
}

TEST(Gae, TerminalTokenRewards) {
    EXPECT_EQ(terminal_token_rewards(TokenMask{true, true, false}, 2.0), (std::vector<double>{0.0, 2.0, 0.0}));
    EXPECT_THROW(terminal_token_rewards(TokenMask{false, false}, 1.0), StructuralError);
}

TEST(GroupAdvantages, KnownValues) {
    const auto three = group_advantages(std::vector<double>{1.0, 0.5, 0.0});
    EXPECT_NEAR(three[0], 1.224745, 1e-6);
    EXPECT_NEAR(three[1], 0.0, 1e-12);
    EXPECT_NEAR(three[2], -1.224745, 1e-6);
    const auto two = group_advantages(std::vector<double>{1.0, 0.0});
    EXPECT_NEAR(two[0], 1.0, 1e-12);
    EXPECT_NEAR(two[1], -1.0, 1e-12);
}

TEST(GroupAdvantages, ConstantGroupIsZero) {
    EXPECT_EQ(group_advantages(std::vector<double>(8, 0.7)), std::vector<double>(8, 0.0));
}

TEST(GroupAdvantages, NeedsTwoMembers) {
    EXPECT_THROW(group_advantages(std::vector<double>{1.0}), UsageError);
}

TEST(GroupAdvantages, ZeroMeanUnitVariance) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> r(static_cast<std::size_t>(rng.uniform_int(2, 16)));
        for (auto& x : r) x = rng.uniform();
        const auto a = group_advantages(r);
        double mean = 0.0;
        double sq = 0.0;
        for (double x : a) mean += x;
        mean /= static_cast<double>(a.size());
        for (double x : a) sq += (x - mean) * (x - mean);
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(sq / static_cast<double>(a.size()), 1.0, 1e-9);
    }
}

TEST(Surrogate, MatchesDirectFormula) {
    Rng rng(8);
    GaeConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
        const EpisodeBatch b = random_batch(rng);
        EXPECT_NEAR(ppo_surrogate_loss(b, cfg).loss, surrogate_oracle(b, cfg.clip_epsilon), 1e-12);
    }
}

TEST(Surrogate, OnPolicyLossIsMinusMeanAdvantage) {
    TokenSequence s;
    s.mask = {true, false, true};
    s.old_logprobs = {-1.0, 0.0, -2.0};
    s.new_logprobs = s.old_logprobs;
    s.advantages = {1.0, 100.0, 3.0};
    EpisodeBatch b{{s}};
    const auto r = ppo_surrogate_loss(b, GaeConfig{});
    EXPECT_NEAR(r.loss, -2.0, 1e-12);
    EXPECT_NEAR(r.diagnostics.mean_ratio, 1.0, 1e-12);
    EXPECT_EQ(r.diagnostics.policy_tokens, 2u);
}

TEST(Surrogate, ClippingFreezesGradient) {
    TokenSequence s;
    s.mask = {true, true};
    s.old_logprobs = {0.0, 0.0};
    s.new_logprobs = {std::log(1.5), std::log(0.5)};
    s.advantages = {1.0, -1.0};
    EpisodeBatch b{{s}};
    const auto r = ppo_surrogate_loss(b, GaeConfig{});
    EXPECT_EQ(r.d_logprob[0][0], 0.0);
    EXPECT_EQ(r.d_logprob[0][1], 0.0);
    EXPECT_NEAR(r.loss, -(1.2 - 0.8) / 2.0, 1e-12);
    EXPECT_NEAR(r.diagnostics.clip_fraction, 1.0, 1e-12);
}

TEST(Surrogate, MaskedTokensDoNotMatter) {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        EpisodeBatch a = random_batch(rng);
        EpisodeBatch b = a;
        for (auto& s : b.sequences) {
            for (std::size_t t = 0; t < s.mask.size(); ++t) {
                if (s.mask[t]) continue;
                s.new_logprobs[t] += 3.0;
                s.old_logprobs[t] -= 1.0;
                s.advantages[t] = 1e6;
            }
        }
        const auto la = ppo_surrogate_loss(a, GaeConfig{});
        const auto lb = ppo_surrogate_loss(b, GaeConfig{});
        EXPECT_EQ(la.loss, lb.loss);
        for (std::size_t i = 0; i < a.sequences.size(); ++i) {
            for (std::size_t t = 0; t < a.sequences[i].mask.size(); ++t) {
                if (!a.sequences[i].mask[t]) EXPECT_EQ(lb.d_logprob[i][t], 0.0);
            }
        }
    }
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
    Rng rng(21);
    const GaeConfig cfg;
    const double h = 1e-6;
    for (int trial = 0; trial < 50; ++trial) {
        EpisodeBatch b = random_batch(rng);
        const auto r = ppo_surrogate_loss(b, cfg);
        for (std::size_t i = 0; i < b.sequences.size(); ++i) {
            for (std::size_t t = 0; t < b.sequences[i].mask.size(); ++t) {
                const double ratio = std::exp(b.sequences[i].new_logprobs[t] - b.sequences[i].old_logprobs[t]);
                if (std::abs(ratio - 1.2) < 1e-4 || std::abs(ratio - 0.8) < 1e-4) continue;
                EpisodeBatch up = b;
                EpisodeBatch down = b;
                up.sequences[i].new_logprobs[t] += h;
                down.sequences[i].new_logprobs[t] -= h;
                const double fd = (surrogate_oracle(up, cfg.clip_epsilon) - surrogate_oracle(down, cfg.clip_epsilon)) / (2 * h);
                EXPECT_NEAR(r.d_logprob[i][t], fd, 1e-6);
            }
        }
    }
}

TEST(Surrogate, RejectsBadShapes) {
    TokenSequence s;
    s.mask = {true, true};
    s.old_logprobs = {0.0};
    s.new_logprobs = {0.0, 0.0};
    s.advantages = {0.0, 0.0};
    EXPECT_THROW(ppo_surrogate_loss(EpisodeBatch{{s}}, GaeConfig{}), StructuralError);
    TokenSequence hidden;
    hidden.mask = {false};
    hidden.old_logprobs = hidden.new_logprobs = hidden.advantages = {0.0};
    EXPECT_THROW(ppo_surrogate_loss(EpisodeBatch{{hidden}}, GaeConfig{}), StructuralError);
}

TEST(Grpo, AddsWeightedKl) {
    Rng rng(30);
    GaeConfig cfg;
    cfg.kl_beta = 0.1;
    EpisodeBatch b = random_batch(rng);
    double kl = 0.0;
    for (auto& s : b.sequences) {
        s.ref_kl.emplace();
        double seq = 0.0;
        int count = 0;
        for (std::size_t t = 0; t < s.mask.size(); ++t) {
            s.ref_kl->push_back(rng.uniform());
            if (s.mask[t]) {
                seq += s.ref_kl->back();
                ++count;
            }
        }
        kl += seq / count;
    }
    kl /= static_cast<double>(b.sequences.size());
    const auto r = grpo_loss(b, cfg);
    EXPECT_NEAR(r.loss, surrogate_oracle(b, cfg.clip_epsilon) + 0.1 * kl, 1e-12);
    EXPECT_NEAR(r.diagnostics.kl, kl, 1e-12);
}

TEST(Grpo, MissingReferenceKl) {
    Rng rng(31);
    const EpisodeBatch b = random_batch(rng);
    GaeConfig cfg;
    EXPECT_THROW(grpo_loss(b, cfg), ConfigError);
    cfg.kl_beta = 0.0;
    EXPECT_NEAR(grpo_loss(b, cfg).loss, ppo_surrogate_loss(b, cfg).loss, 1e-15);
}

TEST(GaeConfigTest, Validation) {
    GaeConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.gamma = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = GaeConfig{};
    cfg.clip_epsilon = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = GaeConfig{};
    cfg.kl_beta = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
