// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "otc/advantage.hpp"
#include "otc/envsim.hpp"
#include "otc/learner.hpp"
#include "otc/metrics.hpp"
#include "otc/policy.hpp"
#include "otc/rewards.hpp"
#include "otc/tracker.hpp"

namespace otc {

enum class TrajectoryLog { None, Last, All };

/// Everything a training run depends on. The tool budget C lives in one
/// place (max_calls) and feeds both the environment and the reward.
///
/// Config-file keys (JSON object, all optional):
///   seed, max_calls, task_count, evidence_min, evidence_max, knowledge_prob,
///   taskset_seed, taskset_path, mode, algorithm, alpha, smoothing_c,
///   use_format_reward, format_reward_value, gamma, lambda, clip_epsilon,
///   kl_beta, group_size, learning_rate, value_learning_rate, epochs,
///   rollouts_per_epoch, update_iters, max_steps, tracker_scope, output_dir,
///   trajectory_log
struct ExperimentConfig {
    std::uint64_t seed = 1;
    int max_calls = 4;

    int task_count = 200;
    int evidence_min = 0;
    int evidence_max = 3;
    double knowledge_prob = 0.5;
    /// Defaults to `seed`.
    std::optional<std::uint64_t> taskset_seed;
    /// When set, tasks are read from this JSONL file instead of generated.
    std::string taskset_path;

    RewardMode mode = RewardMode::OtcGrpo;
    /// Defaults to PPO for otc_ppo and GRPO otherwise.
    std::optional<Algorithm> algorithm;
    double alpha = 1.0;
    /// Defaults to max_calls.
    std::optional<double> smoothing_c;
    bool use_format_reward = false;
    double format_reward_value = 0.0;

    GaeConfig gae;
    int group_size = 8;
    double learning_rate = 4.0;
    double value_learning_rate = 0.5;
    int epochs = 300;
    int rollouts_per_epoch = 128;
    int update_iters = 4;
    /// Sampled actions per episode; defaults to max_calls + 1.
    std::optional<int> max_steps;
    TrackerScope tracker_scope = TrackerScope::Global;

    std::string output_dir;
    TrajectoryLog trajectory_log = TrajectoryLog::Last;

    Algorithm resolved_algorithm() const;
    RewardConfig reward_config() const;
    TasksetParams taskset_params() const;
    RolloutLimits rollout_limits() const;

    /// Throws ConfigError.
    void validate() const;

    nlohmann::json to_json() const;
    /// Overlays the keys present in `j`; unknown keys are a ConfigError.
    void apply_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
};

struct TrainingCurvePoint {
    int epoch = 0;
    double mean_reward = 0.0;
    double mean_tc = 0.0;
    double train_em = 0.0;
    double tracker_coverage = 0.0;
};

std::string curve_csv_header();
std::string curve_csv_row(const TrainingCurvePoint& p);

struct TrainResult {
    std::vector<SyntheticTask> tasks;
    TabularPolicy policy{1};
    ValueTable values;
    OptimalCallTracker tracker;
    std::vector<TrainingCurvePoint> curve;
    /// Tracker state after each epoch.
    std::vector<OptimalCallTracker> tracker_history;
};

/// Trains a tabular policy with the configured reward and algorithm.
///
/// Per epoch: freeze the policy, roll out groups (GRPO) or single episodes
/// (PPO), score them against a tracker snapshot taken at batch start plus the
/// group minimum, merge the tracker, then take update_iters clipped gradient
/// steps. When output_dir is set the run writes config.json, tasks.jsonl,
/// policy.json, tracker.json, tracker_history.jsonl, curve.csv and
/// trajectories.jsonl there. Throws NumericalError (after writing
/// failure.json) on a non-finite loss.
TrainResult train(const ExperimentConfig& config);

/// Loads the task set a config refers to (file or generator).
std::vector<SyntheticTask> load_tasks(const ExperimentConfig& config);

struct EvalResult {
    MetricReport report;
    std::vector<EvalRecord> records;
    std::vector<Episode> episodes;
};

/// Rolls out `agent` once per task and scores the episodes. Throws
/// ConfigError when a task does not fit the budget.
EvalResult evaluate(const AgentPolicy& agent, const std::vector<SyntheticTask>& tasks, const RolloutLimits& limits,
                    const std::string& dataset = "synthetic", std::uint64_t seed = 0);

/// Greedy (greedy_act) evaluation of a tabular policy.
EvalResult evaluate(const TabularPolicy& policy, const std::vector<SyntheticTask>& tasks,
                    const RolloutLimits& limits, const std::string& dataset = "synthetic");

/// Behaviour comparison of run `ours` against `baseline` on the same tasks.
/// The report's EM/TC/TP columns describe `ours`. Throws UsageError when the
/// runs cover different questions.
MetricReport compare(std::span<const EvalRecord> ours, std::span<const EvalRecord> baseline,
                     const std::string& dataset = "synthetic");

struct RewardSurfacePoint {
    int m = 0;
    int n = 0;
    double r_tool = 0.0;
};

/// Grid of r_tool over n in `n_values` and m in [0, m_max].
std::vector<RewardSurfacePoint> dump_reward_surface(RewardMode mode, const std::vector<int>& n_values, int m_max,
                                                    double c);
std::string reward_surface_csv(const std::vector<RewardSurfacePoint>& points);

}  // namespace otc
