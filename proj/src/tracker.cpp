// SPDX-License-Identifier: Apache-2.0

#include "otc/tracker.hpp"

#include <algorithm>

#include "otc/errors.hpp"

namespace otc {

std::string to_string(TrackerScope scope) {
    return scope == TrackerScope::Local ? "local" : "global";
}

TrackerScope tracker_scope_from_string(std::string_view name) {
    if (name == "local") return TrackerScope::Local;
    if (name == "global") return TrackerScope::Global;
    throw ConfigError("unknown tracker scope '" + std::string(name) + "' (expected local or global)");
}

std::optional<int> group_min(std::span<const GradedTrajectory> group) {
    std::optional<int> best;
    if (group.empty()) {
        return best;
    }
    const std::string& qid = group.front().trajectory.question_id;
    for (const auto& g : group) {
        if (g.trajectory.question_id != qid) {
            throw UsageError("group_min: group mixes question ids '" + qid + "' and '" +
                             g.trajectory.question_id + "'");
        }
        if (!g.correct) {
            continue;
        }
        const int m = tool_call_count(g.trajectory);
        best = best ? std::min(*best, m) : m;
    }
    return best;
}

bool OptimalCallTracker::merge_update(const std::string& question_id, int candidate_n) {
    if (candidate_n < 0) {
        throw DomainError("merge_update: negative candidate n");
    }
    auto [it, inserted] = best_n_.try_emplace(question_id, candidate_n);
    if (inserted) {
        return true;
    }
    if (candidate_n < it->second) {
        it->second = candidate_n;
        return true;
    }
    return false;
}

void OptimalCallTracker::merge(const OptimalCallTracker& other) {
    for (const auto& [qid, n] : other.best_n_) {
        merge_update(qid, n);
    }
}

std::optional<int> OptimalCallTracker::lookup(std::string_view question_id) const {
    if (auto it = best_n_.find(question_id); it != best_n_.end()) {
        return it->second;
    }
    return std::nullopt;
}

nlohmann::json OptimalCallTracker::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [qid, n] : best_n_) {
        j[qid] = n;
    }
    return j;
}

OptimalCallTracker OptimalCallTracker::from_json(const nlohmann::json& j, TrackerScope scope) {
    if (!j.is_object()) {
        throw StructuralError("tracker checkpoint must be a JSON object {question_id: n}");
    }
    OptimalCallTracker t(scope);
    for (const auto& [qid, value] : j.items()) {
        if (!value.is_number_integer() || value.get<int>() < 0) {
            throw StructuralError("tracker checkpoint entry '" + qid + "' is not a non-negative integer");
        }
        t.merge_update(qid, value.get<int>());
    }
    return t;
}

std::optional<int> effective_n(std::optional<int> tracked, std::optional<int> group_min) {
    if (tracked && group_min) {
        return std::min(*tracked, *group_min);
    }
    return tracked ? tracked : group_min;
}

std::optional<int> effective_n(const OptimalCallTracker& tracker, std::string_view question_id,
                               std::optional<int> group_min) {
    if (tracker.scope() == TrackerScope::Local) {
        return group_min;
    }
    return effective_n(tracker.lookup(question_id), group_min);
}

}  // namespace otc
