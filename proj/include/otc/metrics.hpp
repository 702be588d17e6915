// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace otc {

struct EvalRecord {
    std::string question_id;
    bool correct = false;
    int tool_calls = 0;
    /// Final answer string, kept for the same-answer diagnostic.
    std::string answer;
};

/// Fraction of correct records. Throws UsageError on an empty set.
double exact_match_rate(std::span<const EvalRecord> records);

/// Mean tool calls per record (TC).
double mean_tool_calls(std::span<const EvalRecord> records);

/// Correct answers per tool call. With zero total calls the ratio is
/// undefined: `defined` is false, `value` is +inf and the counts are kept.
struct ToolProductivity {
    double value = 0.0;
    bool defined = true;
    std::int64_t correct = 0;
    std::int64_t total_calls = 0;
};

ToolProductivity tool_productivity(std::span<const EvalRecord> records);

/// TP from aggregate EM and mean TC (EM / TC), for published summary rows.
double tool_productivity_from_rates(double em, double mean_tc);

enum class BehaviorClass { ME, LE, MA, LA, AE, SameNeutral };

const char* to_string(BehaviorClass c);

/// Small set of behaviour classes (AE always comes with MA).
class BehaviorSet {
public:
    void insert(BehaviorClass c) { bits_ |= bit(c); }
    bool contains(BehaviorClass c) const { return (bits_ & bit(c)) != 0; }
    bool empty() const { return bits_ == 0; }
    std::vector<BehaviorClass> members() const;
    bool operator==(const BehaviorSet&) const = default;

private:
    static unsigned bit(BehaviorClass c) { return 1U << static_cast<unsigned>(c); }
    unsigned bits_ = 0;
};

/// Pairwise classification of one question, ours against a baseline:
///   ME/LE  same correctness outcome with fewer/more calls
///   MA/LA  only ours / only the baseline is correct
///   AE     MA with fewer calls than the baseline
///   SAME_NEUTRAL  same outcome, same number of calls
/// Throws UsageError when the question ids differ.
BehaviorSet classify_pair(const EvalRecord& ours, const EvalRecord& baseline);

/// Percentages (0-100) of questions in each class.
struct BehaviorReport {
    std::size_t questions = 0;
    double me = 0.0;
    double le = 0.0;
    double ma = 0.0;
    double la = 0.0;
    double ae = 0.0;
    double same_neutral = 0.0;
    /// Diagnostic: share of questions whose answer strings match exactly.
    double same_answer = 0.0;
};

/// Aligns both runs by question id. Throws UsageError when they do not cover
/// the same questions.
BehaviorReport behavior_report(std::span<const EvalRecord> ours, std::span<const EvalRecord> baseline);

struct MetricReport {
    std::string dataset;
    double em = 0.0;
    double tc = 0.0;
    ToolProductivity tp;
    std::optional<BehaviorReport> behavior;
};

MetricReport summarize(std::string dataset, std::span<const EvalRecord> records);

/// Report CSV: dataset,EM,TC,TP,ME,LE,MA,LA,AE followed by the diagnostic
/// columns SAME_NEUTRAL,SAME_ANSWER. Percentages use two decimals.
std::string report_csv_header();
std::string report_csv_row(const MetricReport& report);
void write_report_csv(const std::filesystem::path& path, std::span<const MetricReport> reports);

/// Per-question evaluation records as JSONL {question_id, correct, tool_calls, answer}.
void write_eval_records(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_eval_records(const std::filesystem::path& path);

}  // namespace otc
