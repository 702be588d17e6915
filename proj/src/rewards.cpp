// SPDX-License-Identifier: Apache-2.0

#include "otc/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "otc/errors.hpp"

namespace otc {

std::string to_string(RewardMode mode) {
    switch (mode) {
        case RewardMode::OtcPpo:
            return "otc_ppo";
        case RewardMode::OtcGrpo:
            return "otc_grpo";
        case RewardMode::CorrectnessOnly:
            return "correctness_only";
    }
    return "unknown";
}

RewardMode reward_mode_from_string(std::string_view name) {
    if (name == "otc_ppo") return RewardMode::OtcPpo;
    if (name == "otc_grpo") return RewardMode::OtcGrpo;
    if (name == "correctness_only") return RewardMode::CorrectnessOnly;
    throw ConfigError("unknown reward mode '" + std::string(name) +
                      "' (expected otc_ppo, otc_grpo or correctness_only)");
}

RewardConfig RewardConfig::for_budget(int max_calls, RewardMode mode) {
    RewardConfig cfg;
    cfg.max_calls = max_calls;
    cfg.smoothing_c = static_cast<double>(max_calls);
    cfg.alpha = 1.0;
    cfg.mode = mode;
    return cfg;
}

void RewardConfig::validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("alpha must be a positive finite number");
    }
    if (!(smoothing_c > 0.0) || !std::isfinite(smoothing_c)) {
        throw ConfigError("smoothing constant c must be a positive finite number");
    }
    if (max_calls < 1) {
        throw ConfigError("max_calls must be at least 1");
    }
    if (!(format_reward_value >= 0.0)) {
        throw ConfigError("format_reward_value must be non-negative");
    }
}

void to_json(nlohmann::json& j, const RewardBreakdown& r) {
    j = nlohmann::json{
        {"r_correct", r.r_correct}, {"r_format", r.r_format}, {"r_phi", r.r_phi},
        {"r_tool", r.r_tool},       {"r_total", r.r_total},
    };
}

void from_json(const nlohmann::json& j, RewardBreakdown& r) {
    r.r_correct = j.at("r_correct").get<int>();
    r.r_format = j.at("r_format").get<double>();
    r.r_phi = j.at("r_phi").get<double>();
    r.r_tool = j.at("r_tool").get<double>();
    r.r_total = j.at("r_total").get<double>();
}

std::string normalize_answer(std::string_view s) {
    const auto is_space = [](unsigned char ch) { return std::isspace(ch) != 0; };
    auto begin = std::find_if_not(s.begin(), s.end(), is_space);
    auto end = std::find_if_not(s.rbegin(), std::string_view::reverse_iterator(begin), is_space).base();
    std::string out(begin, end);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return out;
}

int correctness_reward(std::string_view answer, std::string_view truth) {
    return normalize_answer(answer) == normalize_answer(truth) ? 1 : 0;
}

double format_reward(bool format_ok, const RewardConfig& cfg) {
    if (!cfg.use_format_reward || !format_ok) {
        return 0.0;
    }
    return cfg.format_reward_value;
}

double tool_reward_ppo(int m, double c) {
    if (m < 0) {
        throw DomainError("tool_reward_ppo: negative tool-call count " + std::to_string(m));
    }
    if (!(c > 0.0)) {
        throw DomainError("tool_reward_ppo: smoothing constant must be positive");
    }
    const double md = static_cast<double>(m);
    return std::cos(md * std::numbers::pi / (2.0 * md + c));
}

double remap_f(int m, int n) {
    if (m < 0 || n < 0) {
        throw DomainError("remap_f: negative argument");
    }
    if (n == 0) {
        return static_cast<double>(m);  // includes m = n = 0 -> 0
    }
    const double md = m;
    const double nd = n;
    return 2.0 * nd * md / (md + nd);
}

double tool_reward_grpo(int m, int n, double c) {
    if (m < 0 || n < 0) {
        throw DomainError("tool_reward_grpo: negative argument");
    }
    const double f = remap_f(m, n);
    if (n == 0) {
        // The f = n = 0 branch wins over the cosine branch.
        if (f == 0.0) {
            return 1.0;
        }
        return tool_reward_ppo(m, c);
    }
    return std::sin(f * std::numbers::pi / (2.0 * static_cast<double>(n)));
}

double tool_reward(RewardMode mode, int m, std::optional<int> n, double c) {
    switch (mode) {
        case RewardMode::OtcPpo:
            return tool_reward_ppo(m, c);
        case RewardMode::OtcGrpo:
            if (!n) {
                throw ConfigError("otc_grpo reward needs an optimal tool-call estimate n");
            }
            return tool_reward_grpo(m, *n, c);
        case RewardMode::CorrectnessOnly:
            return 1.0;
    }
    return 1.0;
}

RewardBreakdown combined_reward(const Trajectory& t, std::string_view truth, std::optional<int> n,
                                const RewardConfig& cfg, bool no_correct_in_group) {
    validate(t, cfg.max_calls);
    const int m = tool_call_count(t);

    RewardBreakdown r;
    r.r_correct = correctness_reward(t.final_answer, truth);
    r.r_format = format_reward(t.format_ok, cfg);
    r.r_phi = static_cast<double>(r.r_correct) + r.r_format;

    if (cfg.mode == RewardMode::OtcGrpo && !n) {
        if (!no_correct_in_group || r.r_correct == 1) {
            throw ConfigError("otc_grpo reward for '" + t.question_id +
                              "' has no optimal tool-call estimate n");
        }
        r.r_tool = 1.0;
    } else {
        r.r_tool = tool_reward(cfg.mode, m, n, cfg.smoothing_c);
    }
    r.r_total = cfg.alpha * r.r_tool * r.r_phi;
    return r;
}

}  // namespace otc
