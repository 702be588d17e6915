// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "otc/trajectory.hpp"

namespace otc {

enum class TrackerScope { Local, Global };

std::string to_string(TrackerScope scope);
TrackerScope tracker_scope_from_string(std::string_view name);

struct GradedTrajectory {
    Trajectory trajectory;
    bool correct = false;
};

/// Smallest tool-call count among the correct trajectories of one group, or
/// nullopt if none is correct. Throws UsageError on mixed question ids.
std::optional<int> group_min(std::span<const GradedTrajectory> group);

/// Best-known optimal tool-call count per question.
///
/// Stored values only decrease. An entry exists only once a correct
/// trajectory was observed. Updates are min-merges, so any order of
/// merge_update / merge calls from parallel workers gives the same map.
class OptimalCallTracker {
public:
    explicit OptimalCallTracker(TrackerScope scope = TrackerScope::Global) : scope_(scope) {}

    TrackerScope scope() const { return scope_; }

    /// best_n[qid] = min(existing, candidate_n). Returns true when the stored
    /// value was inserted or decreased.
    bool merge_update(const std::string& question_id, int candidate_n);

    /// Min-merge of every entry of `other`.
    void merge(const OptimalCallTracker& other);

    std::optional<int> lookup(std::string_view question_id) const;

    std::size_t size() const { return best_n_.size(); }
    const std::map<std::string, int, std::less<>>& entries() const { return best_n_; }

    nlohmann::json to_json() const;
    static OptimalCallTracker from_json(const nlohmann::json& j, TrackerScope scope = TrackerScope::Global);

    bool operator==(const OptimalCallTracker&) const = default;

private:
    TrackerScope scope_;
    std::map<std::string, int, std::less<>> best_n_;
};

/// min over whichever of {tracked, group_min} are present.
std::optional<int> effective_n(std::optional<int> tracked, std::optional<int> group_min);

/// Same, reading `tracked` from the tracker. A local-scope tracker only
/// records; its stored values are never consulted, so the estimate comes from
/// the current group alone.
std::optional<int> effective_n(const OptimalCallTracker& tracker, std::string_view question_id,
                               std::optional<int> group_min);

}  // namespace otc
