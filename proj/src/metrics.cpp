// SPDX-License-Identifier: Apache-2.0

#include "otc/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "otc/errors.hpp"

namespace otc {

double exact_match_rate(std::span<const EvalRecord> records) {
    if (records.empty()) {
        throw UsageError("exact_match_rate of an empty record set");
    }
    std::size_t correct = 0;
    for (const auto& r : records) correct += r.correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

double mean_tool_calls(std::span<const EvalRecord> records) {
    if (records.empty()) {
        throw UsageError("mean_tool_calls of an empty record set");
    }
    std::int64_t calls = 0;
    for (const auto& r : records) calls += r.tool_calls;
    return static_cast<double>(calls) / static_cast<double>(records.size());
}

ToolProductivity tool_productivity(std::span<const EvalRecord> records) {
    ToolProductivity tp;
    for (const auto& r : records) {
        if (r.tool_calls < 0) {
            throw DomainError("negative tool-call count for '" + r.question_id + "'");
        }
        tp.correct += r.correct ? 1 : 0;
        tp.total_calls += r.tool_calls;
    }
    if (tp.total_calls == 0) {
        tp.defined = false;
        tp.value = std::numeric_limits<double>::infinity();
        return tp;
    }
    tp.value = static_cast<double>(tp.correct) / static_cast<double>(tp.total_calls);
    return tp;
}

double tool_productivity_from_rates(double em, double mean_tc) {
    if (!(mean_tc > 0.0)) {
        return std::numeric_limits<double>::infinity();
    }
    return em / mean_tc;
}

const char* to_string(BehaviorClass c) {
    switch (c) {
        case BehaviorClass::ME: return "ME";
        case BehaviorClass::LE: return "LE";
        case BehaviorClass::MA: return "MA";
        case BehaviorClass::LA: return "LA";
        case BehaviorClass::AE: return "AE";
        case BehaviorClass::SameNeutral: return "SAME_NEUTRAL";
    }
    return "?";
}

std::vector<BehaviorClass> BehaviorSet::members() const {
    std::vector<BehaviorClass> out;
    for (auto c : {BehaviorClass::ME, BehaviorClass::LE, BehaviorClass::MA, BehaviorClass::LA, BehaviorClass::AE,
                   BehaviorClass::SameNeutral}) {
        if (contains(c)) out.push_back(c);
    }
    return out;
}

BehaviorSet classify_pair(const EvalRecord& ours, const EvalRecord& baseline) {
    if (ours.question_id != baseline.question_id) {
        throw UsageError("classify_pair: '" + ours.question_id + "' vs '" + baseline.question_id + "'");
    }
    BehaviorSet s;
    if (ours.correct == baseline.correct) {
        if (ours.tool_calls < baseline.tool_calls) {
            s.insert(BehaviorClass::ME);
        } else if (ours.tool_calls > baseline.tool_calls) {
            s.insert(BehaviorClass::LE);
        } else {
            s.insert(BehaviorClass::SameNeutral);
        }
    } else if (ours.correct) {
        s.insert(BehaviorClass::MA);
        if (ours.tool_calls < baseline.tool_calls) {
            s.insert(BehaviorClass::AE);
        }
    } else {
        s.insert(BehaviorClass::LA);
    }
    return s;
}

BehaviorReport behavior_report(std::span<const EvalRecord> ours, std::span<const EvalRecord> baseline) {
    if (ours.size() != baseline.size()) {
        throw UsageError("behavior_report: runs cover different question sets");
    }
    std::map<std::string, const EvalRecord*> base_by_id;
    for (const auto& r : baseline) {
        if (!base_by_id.emplace(r.question_id, &r).second) {
            throw UsageError("behavior_report: duplicate question id '" + r.question_id + "'");
        }
    }
    BehaviorReport rep;
    rep.questions = ours.size();
    if (ours.empty()) {
        return rep;
    }
    std::size_t me = 0, le = 0, ma = 0, la = 0, ae = 0, neutral = 0, same_answer = 0;
    for (const auto& r : ours) {
        auto it = base_by_id.find(r.question_id);
        if (it == base_by_id.end()) {
            throw UsageError("behavior_report: '" + r.question_id + "' missing from the baseline run");
        }
        const BehaviorSet s = classify_pair(r, *it->second);
        me += s.contains(BehaviorClass::ME);
        le += s.contains(BehaviorClass::LE);
        ma += s.contains(BehaviorClass::MA);
        la += s.contains(BehaviorClass::LA);
        ae += s.contains(BehaviorClass::AE);
        neutral += s.contains(BehaviorClass::SameNeutral);
        same_answer += r.answer == it->second->answer;
    }
    const double scale = 100.0 / static_cast<double>(ours.size());
    rep.me = me * scale;
    rep.le = le * scale;
    rep.ma = ma * scale;
    rep.la = la * scale;
    rep.ae = ae * scale;
    rep.same_neutral = neutral * scale;
    rep.same_answer = same_answer * scale;
    return rep;
}

MetricReport summarize(std::string dataset, std::span<const EvalRecord> records) {
    MetricReport rep;
    rep.dataset = std::move(dataset);
    rep.em = exact_match_rate(records);
    rep.tc = mean_tool_calls(records);
    rep.tp = tool_productivity(records);
    return rep;
}

std::string report_csv_header() {
    return "dataset,EM,TC,TP,ME,LE,MA,LA,AE,SAME_NEUTRAL,SAME_ANSWER";
}

std::string report_csv_row(const MetricReport& r) {
    char buf[256];
    std::string tp = "undefined";
    if (r.tp.defined) {
        std::snprintf(buf, sizeof buf, "%.4f", r.tp.value);
        tp = buf;
    }
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,", r.em, r.tc);
    std::string row = r.dataset + "," + buf + tp;
    if (r.behavior) {
        const auto& b = *r.behavior;
        std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f", b.me, b.le, b.ma, b.la, b.ae,
                      b.same_neutral, b.same_answer);
        row += buf;
    } else {
        row += ",,,,,,,";
    }
    return row;
}

void write_report_csv(const std::filesystem::path& path, std::span<const MetricReport> reports) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write report " + path.string());
    }
    out << report_csv_header() << '\n';
    for (const auto& r : reports) {
        out << report_csv_row(r) << '\n';
    }
}

void write_eval_records(const std::filesystem::path& path, std::span<const EvalRecord> records) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write evaluation records " + path.string());
    }
    for (const auto& r : records) {
        out << nlohmann::json{{"question_id", r.question_id},
                              {"correct", r.correct},
                              {"tool_calls", r.tool_calls},
                              {"answer", r.answer}}
                   .dump()
            << '\n';
    }
}

std::vector<EvalRecord> read_eval_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read evaluation records " + path.string());
    }
    std::vector<EvalRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(EvalRecord{j.at("question_id").get<std::string>(), j.at("correct").get<bool>(),
                                     j.at("tool_calls").get<int>(), j.value("answer", std::string{})});
        } catch (const nlohmann::json::exception& e) {
            throw StructuralError(path.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace otc
