// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "otc/advantage.hpp"
#include "otc/harness.hpp"
#include "otc/learner.hpp"
#include "otc/metrics.hpp"
#include "otc/rewards.hpp"
#include "otc/rng.hpp"

using namespace otc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

void fail(Outcome& o, const std::string& why) {
    if (o.pass) o.detail = why;
    o.pass = false;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("otc_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

// ---------------------------------------------------------------- criterion 1

Outcome reward_identities() {
    Outcome o;
    const double tol = 1e-9;
    for (int c = 1; c <= 8; ++c) {
        if (std::abs(tool_reward_ppo(0, c) - 1.0) > tol) fail(o, "ppo(0, c) != 1 at c=" + std::to_string(c));
        for (int m = 1; m <= 64; ++m) {
            if (!(tool_reward_ppo(m, c) < tool_reward_ppo(m - 1, c))) {
                fail(o, "ppo not strictly decreasing at m=" + std::to_string(m));
            }
            if (std::abs(tool_reward_grpo(m, 0, c) - tool_reward_ppo(m, c)) > tol) {
                fail(o, "grpo(m, 0) != ppo(m) at m=" + std::to_string(m));
            }
        }
        for (int n = 1; n <= 8; ++n) {
            const double peak = tool_reward_grpo(n, n, c);
            if (std::abs(peak - 1.0) > tol) fail(o, "grpo(n, n) != 1 at n=" + std::to_string(n));
            for (int m = 0; m <= 4 * n; ++m) {
                if (m != n && !(tool_reward_grpo(m, n, c) < peak - tol)) {
                    fail(o, "grpo maximum not unique at n=" + std::to_string(n) + ", m=" + std::to_string(m));
                }
            }
        }
    }
    if (o.pass) o.detail = "c in 1..8, m in 0..64, n in 1..8";
    return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome published_tp() {
    Outcome o;
    const double a = tool_productivity_from_rates(0.446, 1.040);
    const double b = tool_productivity_from_rates(0.449, 3.282);
    if (std::abs(a - 0.429) > 1e-3) fail(o, fmt("(0.446, 1.040) -> %.4f", a));
    if (std::abs(b - 0.136) > 1e-3) fail(o, fmt("(0.449, 3.282) -> %.4f", b));
    // The record-level path must agree with the aggregate one.
    std::vector<EvalRecord> records;
    for (int i = 0; i < 1000; ++i) records.push_back(EvalRecord{"q" + std::to_string(i), i < 446, i < 1040 - 1000 ? 2 : 1, ""});
    const auto tp = tool_productivity(records);
    if (std::abs(tp.value - tool_productivity_from_rates(exact_match_rate(records), mean_tool_calls(records))) > 1e-12) {
        fail(o, "record-level TP disagrees with EM/TC");
    }
    if (o.pass) o.detail = fmt("0.446/1.040 -> %.4f, 0.449/3.282 -> %.4f", a, b);
    return o;
}

// ---------------------------------------------------------------- criterion 3

// Fewest calls over every action sequence (any slot, any order) within the
// step limit that ends in a correct answer; -1 if none.
int exhaustive_min_calls(const SyntheticTask& task, const EnvState& s, int max_calls, int max_steps) {
    int best = -1;
    const auto done = step(s, Action::answer(candidate_answer(task, s)), task, max_calls);
    if (done.correct) best = s.calls_made;
    if (s.steps_taken + 1 >= max_steps) return best;
    for (int e = 0; e < max_calls; ++e) {
        const auto next = step(s, Action::call(e), task, max_calls);
        if (next.budget_exhausted) continue;
        const int sub = exhaustive_min_calls(task, next.state, max_calls, max_steps);
        if (sub >= 0 && (best < 0 || sub < best)) best = sub;
    }
    return best;
}

Outcome oracle_equivalence() {
    Outcome o;
    Rng rng(2718);
    GaeConfig cfg;
    double gae_err = 0.0;
    for (int ep = 0; ep < 1000; ++ep) {
        const auto len = static_cast<std::size_t>(rng.uniform_int(1, 40));
        std::vector<double> r(len);
        for (auto& x : r) x = rng.uniform() * 2.0 - 1.0;
        const std::vector<double> v(len, 0.0);
        const auto a = gae_advantages(r, v, cfg);
        double suffix = 0.0;
        for (std::size_t t = len; t-- > 0;) {
            suffix += r[t];
            gae_err = std::max(gae_err, std::abs(a[t] - suffix));
        }
    }
    if (!(gae_err < 1e-9)) fail(o, fmt("GAE max error %.3g", gae_err));

    double grp_err = 0.0;
    for (int g = 0; g < 1000; ++g) {
        const auto size = static_cast<std::size_t>(rng.uniform_int(2, 16));
        std::vector<double> r(size);
        for (auto& x : r) x = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
        long double mean = 0.0L;
        for (double x : r) mean += x;
        mean /= static_cast<long double>(size);
        long double var = 0.0L;
        for (double x : r) var += (x - mean) * (x - mean);
        const long double sd = std::sqrt(var / static_cast<long double>(size));
        const auto a = group_advantages(r);
        for (std::size_t i = 0; i < size; ++i) {
            const double expect = sd < kGroupStdFloor ? 0.0 : static_cast<double>((r[i] - mean) / sd);
            grp_err = std::max(grp_err, std::abs(a[i] - expect));
        }
    }
    if (!(grp_err < 1e-9)) fail(o, fmt("group advantage max error %.3g", grp_err));

    std::vector<SyntheticTask> tasks;
    for (int e = 0; e <= 3; ++e) {
        for (std::uint32_t known = 0; known < (1U << e); ++known) {
            SyntheticTask t;
            t.question_id = "x" + std::to_string(e) + "-" + std::to_string(known);
            for (int i = 0; i < e; ++i) {
                t.evidence_set.push_back(i);
                if ((known >> i) & 1U) t.known_mask.push_back(i);
            }
            t.answer = "ans-x";
            t.distractor_answers = {"ans-a", "ans-b", "ans-c"};
            tasks.push_back(t);
        }
    }
    TasksetParams p;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        p.seed = seed;
        for (auto& t : generate_taskset(p)) tasks.push_back(std::move(t));
    }
    int mismatches = 0;
    for (const auto& t : tasks) {
        if (exhaustive_min_calls(t, initial_state(t), 4, 5) != t.optimal_calls()) ++mismatches;
    }
    if (mismatches > 0) fail(o, std::to_string(mismatches) + " tasks where search disagrees with |E \\ K|");
    if (o.pass) {
        o.detail = fmt("GAE err %.2g, group err %.2g, ", gae_err, grp_err) + std::to_string(tasks.size()) +
                   " tasks searched";
    }
    return o;
}

// ---------------------------------------------------------------- criterion 4

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

SyntheticTask fixed_task(int evidence) {
    SyntheticTask t;
    t.question_id = "g" + std::to_string(evidence);
    for (int i = 0; i < evidence; ++i) t.evidence_set.push_back(i);
    t.answer = "ans-x";
    t.distractor_answers = {"ans-a", "ans-b"};
    return t;
}

Outcome gradient_checks() {
    Outcome o;
    Rng rng(31337);
    const double h = 1e-6;
    double worst = 0.0;
    std::size_t checked = 0;
    for (int b = 0; b < 100; ++b) {
        TabularPolicy behaviour(5);
        for (int e = 0; e <= 3; ++e) {
            for (std::uint32_t r = 0; r < 8; ++r) {
                for (int c = 0; c <= 4; ++c) {
                    for (auto& z : behaviour.mutable_logits(StateKey{e, r, c})) z = rng.uniform() * 2.0 - 1.0;
                }
            }
        }
        TabularPolicy current = behaviour;
        for (const auto& [s, row] : behaviour.table()) {
            for (auto& z : current.mutable_logits(s)) z += (rng.uniform() - 0.5) * 0.2;
        }
        TabularPolicy reference(5);

        std::vector<EpisodeTokens> views;
        std::vector<std::vector<double>> adv;
        std::vector<double> rewards;
        const SamplingAgent agent(behaviour);
        const auto n = rng.uniform_int(1, 4);
        for (int i = 0; i < n; ++i) {
            const Episode ep = rollout(agent, fixed_task(static_cast<int>(rng.uniform_int(0, 3))), RolloutLimits{}, rng);
            views.push_back(tokenize_episode(ep));
            std::vector<double> a(views.back().tokens.size());
            for (auto& x : a) x = rng.uniform() * 2.0 - 1.0;
            adv.push_back(std::move(a));
            rewards.push_back(ep.correct ? 1.0 : 0.0);
        }
        LearnerBatch lb = make_learner_batch(std::move(views), std::move(adv), std::move(rewards), behaviour);
        GaeConfig cfg;
        cfg.kl_beta = 0.05;
        const Algorithm alg = b % 2 == 0 ? Algorithm::Grpo : Algorithm::Ppo;

        // Surrogate gradient with respect to per-token log-probabilities.
        const LossResult loss = compute_loss(lb, current, &reference, cfg, alg);
        for (std::size_t i = 0; i < lb.batch.sequences.size(); ++i) {
            const TokenSequence& s = lb.batch.sequences[i];
            for (std::size_t t = 0; t < s.mask.size(); ++t) {
                if (!s.mask[t]) continue;
                const double ratio = std::exp(s.new_logprobs[t] - s.old_logprobs[t]);
                if (std::abs(ratio - (1.0 + cfg.clip_epsilon)) < 1e-4 || std::abs(ratio - (1.0 - cfg.clip_epsilon)) < 1e-4) {
                    continue;
                }
                EpisodeBatch up = lb.batch;
                EpisodeBatch down = lb.batch;
                up.sequences[i].new_logprobs[t] += h;
                down.sequences[i].new_logprobs[t] -= h;
                const double fd = (ppo_surrogate_loss(up, cfg).loss - ppo_surrogate_loss(down, cfg).loss) / (2 * h);
                worst = std::max(worst, rel_err(ppo_surrogate_loss(lb.batch, cfg).d_logprob[i][t], fd));
                ++checked;
            }
        }

        // Full loss gradient with respect to the policy logits.
        const Gradients g = loss_gradient(lb, loss, current, &reference);
        for (const auto& [state, row] : g) {
            for (std::size_t j = 0; j < row.size(); ++j) {
                TabularPolicy up = current;
                TabularPolicy down = current;
                up.mutable_logits(state)[j] += h;
                down.mutable_logits(state)[j] -= h;
                const double fd =
                    (compute_loss(lb, up, &reference, cfg, alg).loss - compute_loss(lb, down, &reference, cfg, alg).loss) /
                    (2 * h);
                worst = std::max(worst, rel_err(row[j], fd));
                ++checked;
            }
        }

        // Log-probability gradients of single actions.
        const StateKey s{3, static_cast<std::uint32_t>(rng.uniform_int(0, 7)), static_cast<int>(rng.uniform_int(0, 3))};
        const int a = static_cast<int>(rng.uniform_int(0, 4));
        Gradients lg;
        accumulate_log_prob_gradient(lg, current, s, a, 1.0);
        for (std::size_t j = 0; j < 5; ++j) {
            TabularPolicy up = current;
            TabularPolicy down = current;
            up.mutable_logits(s)[j] += h;
            down.mutable_logits(s)[j] -= h;
            const double fd = (up.log_prob(s, a) - down.log_prob(s, a)) / (2 * h);
            worst = std::max(worst, rel_err(lg[s][j], fd));
            ++checked;
        }
    }
    if (!(worst < 1e-4)) fail(o, fmt("worst relative error %.3g", worst));
    if (o.pass) o.detail = fmt("%.0f partials, worst relative error %.2g", static_cast<double>(checked), worst);
    return o;
}

// ---------------------------------------------------------------- criterion 5/6

struct ArmRun {
    MetricReport report;
    fs::path dir;
};

ExperimentConfig behaviour_config(RewardMode mode, std::uint64_t seed, const fs::path& dir) {
    ExperimentConfig c;
    c.seed = seed;
    c.task_count = 200;
    c.evidence_min = 0;
    c.evidence_max = 3;
    c.knowledge_prob = 0.5;
    c.max_calls = 4;
    c.group_size = 8;
    c.epochs = 300;
    c.mode = mode;
    c.output_dir = dir.string();
    c.trajectory_log = TrajectoryLog::None;
    return c;
}

ArmRun run_arm(RewardMode mode, std::uint64_t seed) {
    const fs::path dir = scratch(to_string(mode) + "_" + std::to_string(seed));
    const ExperimentConfig c = behaviour_config(mode, seed, dir);
    const TrainResult r = train(c);
    const EvalResult e = evaluate(r.policy, r.tasks, c.rollout_limits());
    return ArmRun{e.report, dir};
}

std::vector<fs::path> g_tracker_runs;

Outcome behaviour_claim() {
    Outcome o;
    double otc_tc = 0.0;
    double base_tc = 0.0;
    double otc_em = 0.0;
    double base_em = 0.0;
    int tp_wins = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ArmRun otc = run_arm(RewardMode::OtcGrpo, seed);
        const ArmRun base = run_arm(RewardMode::CorrectnessOnly, seed);
        g_tracker_runs.push_back(otc.dir);
        g_tracker_runs.push_back(base.dir);
        otc_tc += otc.report.tc / 5.0;
        base_tc += base.report.tc / 5.0;
        otc_em += otc.report.em / 5.0;
        base_em += base.report.em / 5.0;
        if (otc.report.tp.value > base.report.tp.value) ++tp_wins;
        std::printf("  seed %llu: otc EM %.3f TC %.3f TP %.3f | baseline EM %.3f TC %.3f TP %.3f\n",
                    static_cast<unsigned long long>(seed), otc.report.em, otc.report.tc, otc.report.tp.value,
                    base.report.em, base.report.tc, base.report.tp.value);
        std::fflush(stdout);
    }
    if (!(otc_tc <= 0.7 * base_tc)) fail(o, fmt("(a) TC %.3f > 0.7 x %.3f", otc_tc, base_tc));
    if (!(std::abs(otc_em - base_em) <= 0.05)) fail(o, fmt("(b) EM %.3f vs %.3f", otc_em, base_em));
    if (tp_wins < 4) fail(o, "(c) TP higher on only " + std::to_string(tp_wins) + " of 5 seeds");
    if (o.pass) {
        o.detail = fmt("TC %.3f vs %.3f, EM %.3f", otc_tc, base_tc, otc_em) + fmt(" vs %.3f, TP wins ", base_em) +
                   std::to_string(tp_wins) + "/5";
    }
    return o;
}

Outcome tracker_monotone() {
    Outcome o;
    std::size_t checkpoints = 0;
    if (g_tracker_runs.empty()) {
        const fs::path dir = scratch("tracker");
        ExperimentConfig c = behaviour_config(RewardMode::OtcGrpo, 1, dir);
        c.epochs = 40;
        train(c);
        g_tracker_runs.push_back(dir);
    }
    for (const auto& dir : g_tracker_runs) {
        std::ifstream in(dir / "tracker_history.jsonl");
        if (!in) {
            fail(o, "missing " + (dir / "tracker_history.jsonl").string());
            continue;
        }
        std::map<std::string, int> last;
        std::string line;
        int prev_epoch = 0;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            const int epoch = j.at("epoch").get<int>();
            if (epoch != prev_epoch + 1) fail(o, "checkpoint epochs out of order in " + dir.string());
            prev_epoch = epoch;
            const auto& best = j.at("best_n");
            for (const auto& [q, n] : last) {
                if (!best.contains(q)) {
                    fail(o, "entry '" + q + "' disappeared at epoch " + std::to_string(epoch));
                } else if (best.at(q).get<int>() > n) {
                    fail(o, "entry '" + q + "' increased at epoch " + std::to_string(epoch));
                }
            }
            for (const auto& [q, n] : best.items()) last[q] = n.get<int>();
            ++checkpoints;
        }
    }
    if (o.pass) o.detail = std::to_string(checkpoints) + " checkpoints over " + std::to_string(g_tracker_runs.size()) + " runs";
    return o;
}

// ---------------------------------------------------------------- criterion 7

Outcome wrong_answers_get_nothing() {
    Outcome o;
    Rng rng(4242);
    const RewardMode modes[] = {RewardMode::OtcPpo, RewardMode::OtcGrpo, RewardMode::CorrectnessOnly};
    for (int i = 0; i < 10000; ++i) {
        const RewardMode mode = modes[i % 3];
        RewardConfig cfg = RewardConfig::for_budget(static_cast<int>(rng.uniform_int(1, 8)), mode);
        cfg.alpha = 0.1 + rng.uniform() * 5.0;
        Trajectory t;
        t.question_id = "f" + std::to_string(i);
        const auto m = rng.uniform_int(0, cfg.max_calls);
        for (int k = 0; k < m; ++k) t.steps.push_back(Step{"r", ToolCall{"search", "e" + std::to_string(k)}, "obs"});
        t.steps.push_back(Step{"conclude", std::nullopt, std::nullopt});
        t.format_ok = rng.bernoulli(0.5);
        const std::string truth = "ans-" + std::to_string(rng.next_u64() % 1000);
        t.final_answer = rng.bernoulli(0.1) ? "" : truth + "x";
        std::optional<int> n;
        bool none_correct = false;
        if (rng.bernoulli(0.3)) {
            none_correct = true;
        } else {
            n = static_cast<int>(rng.uniform_int(0, cfg.max_calls));
        }
        const auto r = combined_reward(t, truth, n, cfg, none_correct);
        if (r.r_total != 0.0 || r.r_correct != 0) {
            fail(o, "trajectory " + std::to_string(i) + " earned " + fmt("%.6g", r.r_total));
            break;
        }
    }
    if (o.pass) o.detail = "10000 wrong-answer trajectories, all r_total = 0";
    return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome deterministic_curves() {
    Outcome o;
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    train(behaviour_config(RewardMode::OtcGrpo, 7, a));
    train(behaviour_config(RewardMode::OtcGrpo, 7, b));
    const std::string ca = slurp(a / "curve.csv");
    const std::string cb = slurp(b / "curve.csv");
    if (ca.empty()) fail(o, "empty curve");
    if (ca != cb) fail(o, "curve CSVs differ");
    if (o.pass) o.detail = std::to_string(ca.size()) + " identical bytes";
    fs::remove_all(a);
    fs::remove_all(b);
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "reward identities", reward_identities},
        {2, "tool productivity from published EM/TC", published_tp},
        {3, "oracle equivalence", oracle_equivalence},
        {4, "gradient checks", gradient_checks},
        {5, "desk-scale behaviour (5 seeds)", behaviour_claim},
        {6, "tracker monotonicity", tracker_monotone},
        {7, "wrong answers earn zero", wrong_answers_get_nothing},
        {8, "deterministic training curves", deterministic_curves},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %d: %s (%s; %.2fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    for (const auto& dir : g_tracker_runs) fs::remove_all(dir);
    return failures;
}
