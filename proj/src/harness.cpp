// SPDX-License-Identifier: Apache-2.0

#include "otc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "otc/errors.hpp"

namespace otc {

namespace fs = std::filesystem;

namespace {

std::string to_string(TrajectoryLog log) {
    switch (log) {
        case TrajectoryLog::None: return "none";
        case TrajectoryLog::Last: return "last";
        case TrajectoryLog::All: return "all";
    }
    return "last";
}

TrajectoryLog trajectory_log_from_string(const std::string& s) {
    if (s == "none") return TrajectoryLog::None;
    if (s == "last") return TrajectoryLog::Last;
    if (s == "all") return TrajectoryLog::All;
    throw ConfigError("trajectory_log must be none, last or all");
}

}  // namespace

Algorithm ExperimentConfig::resolved_algorithm() const {
    if (algorithm) {
        return *algorithm;
    }
    return mode == RewardMode::OtcPpo ? Algorithm::Ppo : Algorithm::Grpo;
}

RewardConfig ExperimentConfig::reward_config() const {
    RewardConfig r = RewardConfig::for_budget(max_calls, mode);
    r.alpha = alpha;
    r.smoothing_c = smoothing_c.value_or(static_cast<double>(max_calls));
    r.use_format_reward = use_format_reward;
    r.format_reward_value = format_reward_value;
    return r;
}

TasksetParams ExperimentConfig::taskset_params() const {
    TasksetParams p;
    p.count = task_count;
    p.evidence_min = evidence_min;
    p.evidence_max = evidence_max;
    p.knowledge_prob = knowledge_prob;
    p.seed = taskset_seed.value_or(seed);
    p.max_calls = max_calls;
    return p;
}

RolloutLimits ExperimentConfig::rollout_limits() const {
    return RolloutLimits{max_steps.value_or(max_calls + 1), max_calls};
}

void ExperimentConfig::validate() const {
    if (max_calls < 1 || max_calls > kMaxEvidenceSlots) {
        throw ConfigError("max_calls must lie in [1, " + std::to_string(kMaxEvidenceSlots) + "]");
    }
    reward_config().validate();
    gae.validate();
    if (taskset_path.empty()) {
        taskset_params().validate();
    }
    if (resolved_algorithm() == Algorithm::Grpo && group_size < 2) {
        throw ConfigError("GRPO needs group_size >= 2");
    }
    if (mode == RewardMode::OtcGrpo && resolved_algorithm() != Algorithm::Grpo) {
        throw ConfigError("otc_grpo rewards need the grpo algorithm (groups estimate n)");
    }
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (rollouts_per_epoch < 1) throw ConfigError("rollouts_per_epoch must be positive");
    if (update_iters < 1) throw ConfigError("update_iters must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be a non-negative finite number");
    }
    if (!(value_learning_rate >= 0.0 && value_learning_rate <= 1.0)) {
        throw ConfigError("value_learning_rate must lie in [0, 1]");
    }
    if (max_steps && *max_steps < 1) throw ConfigError("max_steps must be at least 1");
}

nlohmann::json ExperimentConfig::to_json() const {
    return nlohmann::json{
        {"seed", seed},
        {"max_calls", max_calls},
        {"task_count", task_count},
        {"evidence_min", evidence_min},
        {"evidence_max", evidence_max},
        {"knowledge_prob", knowledge_prob},
        {"taskset_seed", taskset_seed.value_or(seed)},
        {"taskset_path", taskset_path},
        {"mode", otc::to_string(mode)},
        {"algorithm", otc::to_string(resolved_algorithm())},
        {"alpha", alpha},
        {"smoothing_c", smoothing_c.value_or(static_cast<double>(max_calls))},
        {"use_format_reward", use_format_reward},
        {"format_reward_value", format_reward_value},
        {"gamma", gae.gamma},
        {"lambda", gae.lambda},
        {"clip_epsilon", gae.clip_epsilon},
        {"kl_beta", gae.kl_beta},
        {"group_size", group_size},
        {"learning_rate", learning_rate},
        {"value_learning_rate", value_learning_rate},
        {"epochs", epochs},
        {"rollouts_per_epoch", rollouts_per_epoch},
        {"update_iters", update_iters},
        {"max_steps", max_steps.value_or(max_calls + 1)},
        {"tracker_scope", otc::to_string(tracker_scope)},
        {"output_dir", output_dir},
        {"trajectory_log", to_string(trajectory_log)},
    };
}

void ExperimentConfig::apply_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") seed = v.get<std::uint64_t>();
            else if (key == "max_calls") max_calls = v.get<int>();
            else if (key == "task_count") task_count = v.get<int>();
            else if (key == "evidence_min") evidence_min = v.get<int>();
            else if (key == "evidence_max") evidence_max = v.get<int>();
            else if (key == "knowledge_prob") knowledge_prob = v.get<double>();
            else if (key == "taskset_seed") taskset_seed = v.get<std::uint64_t>();
            else if (key == "taskset_path") taskset_path = v.get<std::string>();
            else if (key == "mode") mode = reward_mode_from_string(v.get<std::string>());
            else if (key == "algorithm") algorithm = algorithm_from_string(v.get<std::string>());
            else if (key == "alpha") alpha = v.get<double>();
            else if (key == "smoothing_c") smoothing_c = v.get<double>();
            else if (key == "use_format_reward") use_format_reward = v.get<bool>();
            else if (key == "format_reward_value") format_reward_value = v.get<double>();
            else if (key == "gamma") gae.gamma = v.get<double>();
            else if (key == "lambda") gae.lambda = v.get<double>();
            else if (key == "clip_epsilon") gae.clip_epsilon = v.get<double>();
            else if (key == "kl_beta") gae.kl_beta = v.get<double>();
            else if (key == "group_size") group_size = v.get<int>();
            else if (key == "learning_rate") learning_rate = v.get<double>();
            else if (key == "value_learning_rate") value_learning_rate = v.get<double>();
            else if (key == "epochs") epochs = v.get<int>();
            else if (key == "rollouts_per_epoch") rollouts_per_epoch = v.get<int>();
            else if (key == "update_iters") update_iters = v.get<int>();
            else if (key == "max_steps") max_steps = v.get<int>();
            else if (key == "tracker_scope") tracker_scope = tracker_scope_from_string(v.get<std::string>());
            else if (key == "output_dir") output_dir = v.get<std::string>();
            else if (key == "trajectory_log") trajectory_log = trajectory_log_from_string(v.get<std::string>());
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    cfg.apply_json(j);
    return cfg;
}

std::string curve_csv_header() {
    return "epoch,mean_reward,mean_tc,train_em,tracker_coverage";
}

std::string curve_csv_row(const TrainingCurvePoint& p) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f", p.epoch, p.mean_reward, p.mean_tc, p.train_em,
                  p.tracker_coverage);
    return buf;
}

std::vector<SyntheticTask> load_tasks(const ExperimentConfig& config) {
    auto tasks = config.taskset_path.empty() ? generate_taskset(config.taskset_params())
                                             : read_taskset(config.taskset_path);
    for (const auto& t : tasks) {
        validate_task(t, config.max_calls);
    }
    return tasks;
}

namespace {

/// Cycles through the task set in reshuffled passes so every question is
/// visited once per pass.
class TaskScheduler {
public:
    TaskScheduler(std::size_t count, std::uint64_t seed) : order_(count), rng_(derive_seed(seed, {0x5c4ed})) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        shuffle();
    }

    std::size_t next() {
        if (pos_ == order_.size()) {
            shuffle();
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    void shuffle() {
        for (std::size_t i = order_.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order_[i - 1], order_[j]);
        }
    }

    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

struct Scored {
    Episode episode;
    RewardBreakdown reward;
};

/// Scores one group of episodes for the same question. `tracked` is the
/// batch-start tracker snapshot.
std::vector<Scored> score_group(std::vector<Episode> episodes, const SyntheticTask& task,
                                const OptimalCallTracker& tracked, const RewardConfig& rcfg,
                                std::optional<int>* group_minimum) {
    std::vector<GradedTrajectory> graded;
    graded.reserve(episodes.size());
    for (const auto& e : episodes) {
        graded.push_back(GradedTrajectory{e.trajectory, e.correct});
    }
    const std::optional<int> gm = group_min(graded);
    *group_minimum = gm;
    std::optional<int> n;
    if (rcfg.mode == RewardMode::OtcGrpo) {
        n = effective_n(tracked, task.question_id, gm);
    }
    std::vector<Scored> out;
    out.reserve(episodes.size());
    for (auto& e : episodes) {
        RewardBreakdown r = combined_reward(e.trajectory, task.answer, n, rcfg, !gm.has_value());
        out.push_back(Scored{std::move(e), r});
    }
    return out;
}

class RunWriter {
public:
    explicit RunWriter(const ExperimentConfig& cfg) {
        if (cfg.output_dir.empty()) {
            return;
        }
        dir_ = cfg.output_dir;
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) {
            throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
        }
        std::ofstream(dir_ / "config.json") << cfg.to_json().dump(2) << '\n';
        curve_.open(dir_ / "curve.csv");
        tracker_history_.open(dir_ / "tracker_history.jsonl");
        trajectories_.open(dir_ / "trajectories.jsonl");
        if (!curve_ || !tracker_history_ || !trajectories_) {
            throw ConfigError("cannot open run artifacts in " + dir_.string());
        }
        curve_ << curve_csv_header() << '\n';
    }

    bool enabled() const { return !dir_.empty(); }
    const fs::path& dir() const { return dir_; }

    void tasks(const std::vector<SyntheticTask>& tasks) {
        if (enabled()) write_taskset(dir_ / "tasks.jsonl", tasks);
    }

    void epoch(const TrainingCurvePoint& p, const OptimalCallTracker& tracker) {
        if (!enabled()) return;
        curve_ << curve_csv_row(p) << '\n';
        tracker_history_ << nlohmann::json{{"epoch", p.epoch}, {"best_n", tracker.to_json()}}.dump() << '\n';
    }

    void trajectories(const std::vector<Scored>& scored) {
        if (!enabled()) return;
        for (const auto& s : scored) {
            trajectories_ << to_jsonl_line(s.episode.trajectory) << '\n';
        }
    }

    void finish(const TrainResult& result) {
        if (!enabled()) return;
        save_policy(dir_ / "policy.json", result.policy);
        std::ofstream(dir_ / "tracker.json") << result.tracker.to_json().dump(1) << '\n';
        if (!result.values.table().empty()) {
            std::ofstream(dir_ / "values.json") << result.values.to_json().dump(1) << '\n';
        }
    }

    void failure(int epoch, const std::string& what, const TabularPolicy& policy) {
        if (!enabled()) return;
        curve_.flush();
        std::ofstream(dir_ / "failure.json")
            << nlohmann::json{{"epoch", epoch}, {"error", what}, {"policy", policy.to_json()}}.dump(1) << '\n';
    }

private:
    fs::path dir_;
    std::ofstream curve_;
    std::ofstream tracker_history_;
    std::ofstream trajectories_;
};

}  // namespace

TrainResult train(const ExperimentConfig& config) {
    config.validate();
    const RewardConfig rcfg = config.reward_config();
    const Algorithm algorithm = config.resolved_algorithm();
    const RolloutLimits limits = config.rollout_limits();

    TrainResult result;
    result.tasks = load_tasks(config);
    if (result.tasks.empty()) {
        throw ConfigError("task set is empty");
    }
    result.policy = TabularPolicy(num_actions(config.max_calls));
    result.tracker = OptimalCallTracker(config.tracker_scope);
    const PolicySnapshot reference = snapshot(result.policy);

    RunWriter writer(config);
    writer.tasks(result.tasks);

    TaskScheduler scheduler(result.tasks.size(), config.seed);
    const bool grpo = algorithm == Algorithm::Grpo;
    const int group = grpo ? config.group_size : 1;
    const int groups_per_epoch = std::max(1, (config.rollouts_per_epoch + group - 1) / group);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const PolicySnapshot old = snapshot(result.policy);
        const OptimalCallTracker tracked_at_start = result.tracker;
        const SamplingAgent agent(old.policy());

        std::vector<Scored> scored;
        std::vector<std::size_t> group_of;
        for (int g = 0; g < groups_per_epoch; ++g) {
            const SyntheticTask& task = result.tasks[scheduler.next()];
            std::vector<Episode> episodes;
            episodes.reserve(static_cast<std::size_t>(group));
            for (int i = 0; i < group; ++i) {
                Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(g),
                                                  static_cast<std::uint64_t>(i)}));
                episodes.push_back(rollout(agent, task, limits, rng));
            }
            std::optional<int> gm;
            auto group_scored = score_group(std::move(episodes), task, tracked_at_start, rcfg, &gm);
            if (gm) {
                result.tracker.merge_update(task.question_id, *gm);
            }
            for (auto& s : group_scored) {
                scored.push_back(std::move(s));
                group_of.push_back(static_cast<std::size_t>(g));
            }
        }

        std::vector<EpisodeTokens> views;
        std::vector<std::vector<double>> advantages;
        std::vector<double> rewards;
        std::vector<std::pair<StateKey, double>> value_targets;
        views.reserve(scored.size());
        for (const auto& s : scored) {
            views.push_back(tokenize_episode(s.episode));
            rewards.push_back(s.reward.r_total);
        }
        if (grpo) {
            for (std::size_t start = 0; start < scored.size(); start += static_cast<std::size_t>(group)) {
                const auto adv = group_advantages(std::span<const double>(rewards).subspan(start, group));
                for (std::size_t k = 0; k < adv.size(); ++k) {
                    const TokenMask& mask = views[start + k].mask;
                    std::vector<double> per_token(mask.size(), 0.0);
                    for (std::size_t t = 0; t < mask.size(); ++t) {
                        if (mask[t]) per_token[t] = adv[k];
                    }
                    advantages.push_back(std::move(per_token));
                }
            }
        } else {
            for (std::size_t i = 0; i < views.size(); ++i) {
                const EpisodeTokens& v = views[i];
                std::vector<double> values(v.tokens.size(), 0.0);
                for (std::size_t t = 0; t < values.size(); ++t) {
                    values[t] = result.values.value(v.states[t]);
                }
                auto adv = masked_gae(terminal_token_rewards(v.mask, rewards[i]), values, v.mask, config.gae);
                for (std::size_t t = 0; t < values.size(); ++t) {
                    if (v.mask[t]) value_targets.emplace_back(v.states[t], adv[t] + values[t]);
                }
                advantages.push_back(std::move(adv));
            }
        }

        LearnerBatch lb = make_learner_batch(std::move(views), std::move(advantages), rewards, old.policy());
        try {
            optimize(lb, result.policy, grpo ? &reference.policy() : nullptr, config.gae, algorithm,
                     config.learning_rate, config.update_iters);
        } catch (const NumericalError& e) {
            writer.failure(epoch, e.what(), result.policy);
            throw;
        }
        if (!grpo) {
            result.values.fit(value_targets, config.value_learning_rate);
        }

        TrainingCurvePoint p;
        p.epoch = epoch;
        double calls = 0.0;
        double correct = 0.0;
        for (const auto& s : scored) {
            p.mean_reward += s.reward.r_total;
            calls += tool_call_count(s.episode.trajectory);
            correct += s.episode.correct ? 1.0 : 0.0;
        }
        const double count = static_cast<double>(scored.size());
        p.mean_reward /= count;
        p.mean_tc = calls / count;
        p.train_em = correct / count;
        p.tracker_coverage = static_cast<double>(result.tracker.size()) / static_cast<double>(result.tasks.size());
        result.curve.push_back(p);
        result.tracker_history.push_back(result.tracker);
        writer.epoch(p, result.tracker);

        const bool log_now = config.trajectory_log == TrajectoryLog::All ||
                             (config.trajectory_log == TrajectoryLog::Last && epoch == config.epochs);
        if (log_now) {
            writer.trajectories(scored);
        }
    }

    writer.finish(result);
    return result;
}

EvalResult evaluate(const AgentPolicy& agent, const std::vector<SyntheticTask>& tasks, const RolloutLimits& limits,
                    const std::string& dataset, std::uint64_t seed) {
    if (tasks.empty()) {
        throw UsageError("evaluate: empty task set");
    }
    for (const auto& t : tasks) {
        validate_task(t, limits.max_calls);
    }
    EvalResult out;
    out.records.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        Rng rng(derive_seed(seed, {0xe7a1, i}));
        Episode ep = rollout(agent, tasks[i], limits, rng);
        out.records.push_back(EvalRecord{tasks[i].question_id, ep.correct, tool_call_count(ep.trajectory),
                                         ep.trajectory.final_answer});
        out.episodes.push_back(std::move(ep));
    }
    out.report = summarize(dataset, out.records);
    return out;
}

EvalResult evaluate(const TabularPolicy& policy, const std::vector<SyntheticTask>& tasks,
                    const RolloutLimits& limits, const std::string& dataset) {
    if (policy.num_actions() != num_actions(limits.max_calls)) {
        throw ConfigError("policy has " + std::to_string(policy.num_actions()) + " actions but the budget C = " +
                          std::to_string(limits.max_calls) + " needs " +
                          std::to_string(num_actions(limits.max_calls)));
    }
    return evaluate(GreedyAgent(policy), tasks, limits, dataset);
}

MetricReport compare(std::span<const EvalRecord> ours, std::span<const EvalRecord> baseline,
                     const std::string& dataset) {
    MetricReport rep = summarize(dataset, ours);
    rep.behavior = behavior_report(ours, baseline);
    return rep;
}

std::vector<RewardSurfacePoint> dump_reward_surface(RewardMode mode, const std::vector<int>& n_values, int m_max,
                                                    double c) {
    if (m_max < 0) {
        throw ConfigError("m range must be non-negative");
    }
    std::vector<RewardSurfacePoint> out;
    for (int n : n_values) {
        if (n < 0) throw ConfigError("n values must be non-negative");
        for (int m = 0; m <= m_max; ++m) {
            out.push_back(RewardSurfacePoint{m, n, tool_reward(mode, m, n, c)});
        }
    }
    return out;
}

std::string reward_surface_csv(const std::vector<RewardSurfacePoint>& points) {
    std::ostringstream out;
    out << "m,n,r_tool\n";
    char buf[64];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.9f\n", p.m, p.n, p.r_tool);
        out << buf;
    }
    return out.str();
}

}  // namespace otc
