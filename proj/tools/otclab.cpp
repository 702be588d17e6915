// SPDX-License-Identifier: Apache-2.0

// otclab: generate task sets, train, evaluate, compare runs and dump reward
// surfaces. Exit codes: 0 success, 1 configuration/usage error, 2 numerical
// failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otc/errors.hpp"
#include "otc/harness.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

/// Registers a flag whose value, when given, lands in `overrides[key]`.
template <typename T>
void override_flag(CLI::App* app, json& overrides, std::vector<std::function<void()>>& commits,
                   const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    commits.push_back([opt, value, &overrides, key] {
        if (opt->count() > 0) overrides[key] = *value;
    });
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw otc::ConfigError("not an integer list: '" + text + "'");
        }
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw otc::ConfigError("cannot write " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tool-call-efficiency RL lab on synthetic tool-use tasks"};
    app.require_subcommand(1);

    // gen-tasks
    auto* gen = app.add_subcommand("gen-tasks", "Generate a synthetic task set (JSONL)");
    otc::TasksetParams tp;
    std::string gen_out = "tasks.jsonl";
    gen->add_option("--count", tp.count, "Number of tasks")->capture_default_str();
    gen->add_option("--evidence-min", tp.evidence_min, "Smallest evidence-set size")->capture_default_str();
    gen->add_option("--evidence-max", tp.evidence_max, "Largest evidence-set size")->capture_default_str();
    gen->add_option("--knowledge-prob", tp.knowledge_prob, "Probability an item is already known")
        ->capture_default_str();
    gen->add_option("--seed", tp.seed, "Generator seed")->capture_default_str();
    gen->add_option("--max-calls", tp.max_calls, "Tool budget C")->capture_default_str();
    gen->add_option("-o,--out", gen_out, "Output JSONL path")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Train a policy; writes run artifacts to --out");
    std::string config_path;
    json overrides = json::object();
    std::vector<std::function<void()>> commits;
    train->add_option("-c,--config", config_path, "JSON config file (flags override it)");
    override_flag<std::uint64_t>(train, overrides, commits, "--seed", "seed", "Run seed");
    override_flag<int>(train, overrides, commits, "--max-calls", "max_calls", "Tool budget C");
    override_flag<int>(train, overrides, commits, "--task-count", "task_count", "Generated task count");
    override_flag<int>(train, overrides, commits, "--evidence-min", "evidence_min", "Smallest evidence-set size");
    override_flag<int>(train, overrides, commits, "--evidence-max", "evidence_max", "Largest evidence-set size");
    override_flag<double>(train, overrides, commits, "--knowledge-prob", "knowledge_prob", "Prior knowledge rate");
    override_flag<std::uint64_t>(train, overrides, commits, "--taskset-seed", "taskset_seed", "Task generator seed");
    override_flag<std::string>(train, overrides, commits, "--tasks", "taskset_path", "Task set JSONL to train on");
    override_flag<std::string>(train, overrides, commits, "--mode", "mode", "otc_ppo | otc_grpo | correctness_only");
    override_flag<std::string>(train, overrides, commits, "--algorithm", "algorithm", "ppo | grpo");
    override_flag<double>(train, overrides, commits, "--alpha", "alpha", "Reward scale alpha");
    override_flag<double>(train, overrides, commits, "--smoothing-c", "smoothing_c", "Smoothing constant c");
    override_flag<bool>(train, overrides, commits, "--use-format-reward", "use_format_reward", "Add r_format");
    override_flag<double>(train, overrides, commits, "--format-reward", "format_reward_value", "r_format value");
    override_flag<double>(train, overrides, commits, "--gamma", "gamma", "GAE discount");
    override_flag<double>(train, overrides, commits, "--lambda", "lambda", "GAE lambda");
    override_flag<double>(train, overrides, commits, "--clip-epsilon", "clip_epsilon", "Clip range epsilon");
    override_flag<double>(train, overrides, commits, "--kl-beta", "kl_beta", "KL weight beta");
    override_flag<int>(train, overrides, commits, "--group-size", "group_size", "GRPO group size G");
    override_flag<double>(train, overrides, commits, "--learning-rate", "learning_rate", "Policy step size");
    override_flag<double>(train, overrides, commits, "--value-learning-rate", "value_learning_rate",
                          "Value table step size");
    override_flag<int>(train, overrides, commits, "--epochs", "epochs", "Training epochs");
    override_flag<int>(train, overrides, commits, "--rollouts-per-epoch", "rollouts_per_epoch",
                       "Episodes sampled per epoch");
    override_flag<int>(train, overrides, commits, "--update-iters", "update_iters", "Gradient steps per epoch");
    override_flag<int>(train, overrides, commits, "--max-steps", "max_steps", "Sampled actions per episode");
    override_flag<std::string>(train, overrides, commits, "--tracker-scope", "tracker_scope", "local | global");
    override_flag<std::string>(train, overrides, commits, "-o,--out", "output_dir", "Run output directory");
    override_flag<std::string>(train, overrides, commits, "--trajectory-log", "trajectory_log", "none | last | all");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Greedy evaluation of a policy checkpoint or a scripted agent");
    std::string eval_policy;
    std::string eval_agent;
    std::string eval_tasks;
    int eval_max_calls = 4;
    int eval_max_steps = 0;
    std::string eval_records = "records.jsonl";
    std::string eval_report;
    std::string eval_dataset = "synthetic";
    auto* policy_opt = eval->add_option("--policy", eval_policy, "Policy checkpoint (policy.json)");
    eval->add_option("--agent", eval_agent, "Scripted agent instead of a checkpoint: oracle | always-answer | max-calls")
        ->excludes(policy_opt);
    eval->add_option("--tasks", eval_tasks, "Task set JSONL")->required();
    eval->add_option("--max-calls", eval_max_calls, "Tool budget C")->capture_default_str();
    eval->add_option("--max-steps", eval_max_steps, "Sampled actions per episode (default C + 1)");
    eval->add_option("--records", eval_records, "Per-question records JSONL output")->capture_default_str();
    eval->add_option("--report", eval_report, "Report CSV output (default: stdout)");
    eval->add_option("--dataset", eval_dataset, "Dataset label for the report")->capture_default_str();

    // compare
    auto* cmp = app.add_subcommand("compare", "Pairwise behaviour comparison of two evaluation runs");
    std::string cmp_ours;
    std::string cmp_base;
    std::string cmp_report;
    std::string cmp_dataset = "synthetic";
    cmp->add_option("--ours", cmp_ours, "Records JSONL of the system under study")->required();
    cmp->add_option("--baseline", cmp_base, "Records JSONL of the baseline")->required();
    cmp->add_option("--report", cmp_report, "Report CSV output (default: stdout)");
    cmp->add_option("--dataset", cmp_dataset, "Dataset label")->capture_default_str();

    // dump-rewards
    auto* dump = app.add_subcommand("dump-rewards", "Write the r_tool surface as CSV (m, n, r_tool)");
    std::string dump_mode = "otc_grpo";
    std::string dump_n = "0,1,2,3,4";
    int dump_m_max = 8;
    double dump_c = 4.0;
    std::string dump_out;
    dump->add_option("--mode", dump_mode, "otc_ppo | otc_grpo | correctness_only")->capture_default_str();
    dump->add_option("--n", dump_n, "Comma-separated n values")->capture_default_str();
    dump->add_option("--m-max", dump_m_max, "Largest m")->capture_default_str();
    dump->add_option("--c", dump_c, "Smoothing constant c")->capture_default_str();
    dump->add_option("-o,--out", dump_out, "Output CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) {
            const auto tasks = otc::generate_taskset(tp);
            otc::write_taskset(gen_out, tasks);
            std::cerr << "wrote " << tasks.size() << " tasks to " << gen_out << '\n';
        } else if (*train) {
            otc::ExperimentConfig cfg;
            if (!config_path.empty()) {
                cfg = otc::ExperimentConfig::from_file(config_path);
            }
            for (auto& commit : commits) commit();
            cfg.apply_json(overrides);
            const auto result = otc::train(cfg);
            if (!result.curve.empty()) {
                const auto& last = result.curve.back();
                std::cerr << "epoch " << last.epoch << ": mean_reward " << last.mean_reward << ", mean_tc "
                          << last.mean_tc << ", train_em " << last.train_em << ", coverage "
                          << last.tracker_coverage << '\n';
            }
            const auto limits = cfg.rollout_limits();
            const auto eval_result = otc::evaluate(result.policy, result.tasks, limits, "train");
            std::cout << otc::report_csv_header() << '\n' << otc::report_csv_row(eval_result.report) << '\n';
        } else if (*eval) {
            const auto tasks = otc::read_taskset(eval_tasks);
            otc::RolloutLimits limits{eval_max_steps > 0 ? eval_max_steps : eval_max_calls + 1, eval_max_calls};
            otc::EvalResult result;
            if (!eval_agent.empty()) {
                if (eval_agent == "oracle") {
                    result = otc::evaluate(otc::OracleAgent{}, tasks, limits, eval_dataset);
                } else if (eval_agent == "always-answer") {
                    result = otc::evaluate(otc::AlwaysAnswerAgent{}, tasks, limits, eval_dataset);
                } else if (eval_agent == "max-calls") {
                    result = otc::evaluate(otc::MaxCallsAgent{}, tasks, limits, eval_dataset);
                } else {
                    throw otc::ConfigError("unknown agent '" + eval_agent + "'");
                }
            } else {
                if (eval_policy.empty()) throw otc::ConfigError("evaluate needs --policy or --agent");
                const auto policy = otc::load_policy(eval_policy, otc::num_actions(eval_max_calls));
                result = otc::evaluate(policy, tasks, limits, eval_dataset);
            }
            otc::write_eval_records(eval_records, result.records);
            write_text(eval_report, otc::report_csv_header() + "\n" + otc::report_csv_row(result.report) + "\n");
        } else if (*cmp) {
            const auto ours = otc::read_eval_records(cmp_ours);
            const auto base = otc::read_eval_records(cmp_base);
            const auto report = otc::compare(ours, base, cmp_dataset);
            write_text(cmp_report, otc::report_csv_header() + "\n" + otc::report_csv_row(report) + "\n");
        } else if (*dump) {
            const auto mode = otc::reward_mode_from_string(dump_mode);
            const auto points = otc::dump_reward_surface(mode, parse_int_list(dump_n), dump_m_max, dump_c);
            write_text(dump_out, otc::reward_surface_csv(points));
        }
    } catch (const otc::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
