#pragma once
// Batch policy execution (the routing rule applied row-wise), combined
// system metrics, and the relative cost / latency model of the cascade.

#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/baselines.hpp"
#include "l2d/core.hpp"

namespace l2d {

// The base classifier runs on every instance (its probabilities feed the
// deferral features); the expert only on the deferred fraction. Costs are
// unitless ratios relative to base_cost.
struct CostModel {
    double base_cost = 1.0;
    double expert_cost = 50.0;
    double base_latency_ms = 12.0;
    double expert_latency_ms = 850.0;
};

struct SystemReport {
    std::string policy_tag;
    double f1 = 0.0;
    double accuracy = 0.0;
    double deferral_rate = 0.0;
    std::size_t n = 0;
    double relative_cost = 0.0;
    double avg_latency_ms = 0.0;
};

inline ClassIndex route(bool defer, ClassIndex base_pred, std::optional<ClassIndex> expert_pred) {
    if (!defer) return base_pred;
    if (!expert_pred) throw MissingExpertError("deferred row has no expert prediction");
    return *expert_pred;
}

inline double cascade_cost(double deferral_rate, const CostModel& cm) {
    if (deferral_rate < 0.0 || deferral_rate > 1.0) {
        throw std::invalid_argument("deferral rate must be in [0,1]");
    }
    return cm.base_cost + deferral_rate * cm.expert_cost;
}

inline double cascade_latency_ms(double deferral_rate, const CostModel& cm) {
    if (deferral_rate < 0.0 || deferral_rate > 1.0) {
        throw std::invalid_argument("deferral rate must be in [0,1]");
    }
    return cm.base_latency_ms + deferral_rate * cm.expert_latency_ms;
}

inline SystemReport evaluate_system(std::span<const PredictionRecord> records,
                                    const Policy& policy, const Objective& objective,
                                    const CostModel& cost_model = {}) {
    if (records.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
    std::vector<bool> mask = deferral_mask(policy, records);
    std::vector<ClassIndex> preds(records.size()), golds(records.size());
    std::size_t deferred = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        preds[i] = route(mask[i], base_prediction(records[i].base_probs),
                         records[i].expert_pred);
        golds[i] = records[i].gold;
        if (mask[i]) ++deferred;
    }
    SystemReport report;
    report.policy_tag = policy_tag(policy);
    report.f1 = objective(preds, golds);
    report.accuracy = accuracy(preds, golds);
    report.deferral_rate = static_cast<double>(deferred) / static_cast<double>(records.size());
    report.n = records.size();
    report.relative_cost = cascade_cost(report.deferral_rate, cost_model);
    report.avg_latency_ms = cascade_latency_ms(report.deferral_rate, cost_model);
    return report;
}

inline nlohmann::json report_to_json(const SystemReport& r) {
    return nlohmann::json{{"policy", r.policy_tag},
                          {"f1", r.f1},
                          {"accuracy", r.accuracy},
                          {"deferral_rate", r.deferral_rate},
                          {"n", r.n},
                          {"relative_cost", r.relative_cost},
                          {"avg_latency_ms", r.avg_latency_ms}};
}

inline nlohmann::json reports_to_json(std::span<const SystemReport> reports) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : reports) rows.push_back(report_to_json(r));
    return rows;
}

// Aligned-column table (Method | F1 | Acc | LLM% | Cost | Latency).
inline std::string render_table(std::span<const SystemReport> reports) {
    std::size_t method_width = 6;
    for (const auto& r : reports) method_width = std::max(method_width, r.policy_tag.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s  %6s  %6s  %6s  %7s  %11s\n",
                  static_cast<int>(method_width), "Method", "F1", "Acc", "LLM%", "Cost",
                  "Latency(ms)");
    out += line;
    out += std::string(method_width + 2 + 6 + 2 + 6 + 2 + 6 + 2 + 7 + 2 + 11, '-') + "\n";
    for (const auto& r : reports) {
        std::snprintf(line, sizeof(line), "%-*s  %6.3f  %6.3f  %5.1f%%  %6.1fx  %11.1f\n",
                      static_cast<int>(method_width), r.policy_tag.c_str(), r.f1, r.accuracy,
                      100.0 * r.deferral_rate, r.relative_cost, r.avg_latency_ms);
        out += line;
    }
    return out;
}

}  // namespace l2d
