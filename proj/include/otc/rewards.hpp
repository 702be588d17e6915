// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "otc/trajectory.hpp"

namespace otc {

enum class RewardMode {
    OtcPpo,           ///< cosine decay in the number of calls
    OtcGrpo,          ///< sine peak at the tracked optimal call count
    CorrectnessOnly,  ///< r_tool fixed to 1 (baseline arm)
};

std::string to_string(RewardMode mode);
RewardMode reward_mode_from_string(std::string_view name);

struct RewardConfig {
    double alpha = 1.0;
    /// Smoothing constant c of the cosine reward. Defaults to the tool budget.
    double smoothing_c = 4.0;
    int max_calls = 4;
    RewardMode mode = RewardMode::OtcGrpo;
    bool use_format_reward = false;
    double format_reward_value = 0.0;

    /// Defaults tied to a tool budget: c = C, alpha = 1.
    static RewardConfig for_budget(int max_calls, RewardMode mode);

    /// Throws ConfigError on alpha <= 0, c <= 0, C < 1 or a negative format reward.
    void validate() const;
};

struct RewardBreakdown {
    int r_correct = 0;
    double r_format = 0.0;
    double r_phi = 0.0;
    double r_tool = 1.0;
    double r_total = 0.0;
};

void to_json(nlohmann::json& j, const RewardBreakdown& r);
void from_json(const nlohmann::json& j, RewardBreakdown& r);

/// Lower-cased, whitespace-trimmed form used for exact match.
std::string normalize_answer(std::string_view s);

/// 1 iff the normalized answer equals the normalized truth.
int correctness_reward(std::string_view answer, std::string_view truth);

double format_reward(bool format_ok, const RewardConfig& cfg);

/// cos(m*pi / (2m + c)). Throws DomainError for m < 0 or c <= 0.
double tool_reward_ppo(int m, double c);

/// Maps m onto [0, 2n): 0 when m = n = 0, m when n = 0, else 2nm/(m+n).
double remap_f(int m, int n);

/// 1 when f(m,n) = n = 0; the cosine reward when n = 0; otherwise
/// sin(f(m,n)*pi / (2n)), which peaks at exactly 1 for m = n.
double tool_reward_grpo(int m, int n, double c);

/// r_tool for a given mode. `n` is only read in OtcGrpo mode.
double tool_reward(RewardMode mode, int m, std::optional<int> n, double c);

/// Multiplicative tool-integrated reward: r_total = alpha * r_tool * r_phi.
///
/// In OtcGrpo mode `n` must be present unless `no_correct_in_group` is set,
/// in which case r_tool falls back to 1 (the total is 0 anyway because the
/// trajectory is wrong). A correct trajectory never takes the fallback.
RewardBreakdown combined_reward(const Trajectory& t, std::string_view truth, std::optional<int> n,
                                const RewardConfig& cfg, bool no_correct_in_group = false);

}  // namespace otc
