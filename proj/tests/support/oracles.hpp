#pragma once
// Independent oracles used to freeze expected values. These deliberately
// re-derive results from definitions (brute-force grids, exhaustive sweeps,
// hand enumeration) and never call the code paths they check.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "l2d/core.hpp"

namespace oracles {

// The weighted BCE + ridge objective for a 2-feature logistic model,
// written out from the definition.
inline double weighted_bce_objective(std::span<const std::array<double, 2>> rows,
                                     std::span<const std::size_t> labels,
                                     std::span<const double> sample_weights, double c, double w1,
                                     double w2, double b) {
    double obj = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double z = w1 * rows[i][0] + w2 * rows[i][1] + b;
        double d = 1.0 / (1.0 + std::exp(-z));
        d = std::min(1.0 - 1e-15, std::max(1e-15, d));
        double e = static_cast<double>(labels[i]);
        obj += sample_weights[i] * (-e * std::log(d) - (1.0 - e) * std::log(1.0 - d));
    }
    obj += (0.5 / c) * (w1 * w1 + w2 * w2);
    return obj;
}

struct GridFit {
    std::array<double, 3> params{};  // w1, w2, intercept
    double objective = 0.0;
};

// Coarse-to-fine brute force over (w1, w2, b), refined down to step 1e-4.
inline GridFit grid_search_logistic(std::span<const std::array<double, 2>> rows,
                                    std::span<const std::size_t> labels,
                                    std::span<const double> sample_weights, double c) {
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double step = 0.1;
    double half_range = 4.0;
    GridFit best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int level = 0; level < 4; ++level) {
        auto steps = static_cast<long>(std::lround(half_range / step));
        for (long i = -steps; i <= steps; ++i) {
            for (long j = -steps; j <= steps; ++j) {
                for (long k = -steps; k <= steps; ++k) {
                    double w1 = center[0] + static_cast<double>(i) * step;
                    double w2 = center[1] + static_cast<double>(j) * step;
                    double b = center[2] + static_cast<double>(k) * step;
                    double obj = weighted_bce_objective(rows, labels, sample_weights, c, w1, w2, b);
                    if (obj < best.objective) {
                        best.objective = obj;
                        best.params = {w1, w2, b};
                    }
                }
            }
        }
        center = best.params;
        half_range = 2.0 * step;
        step /= 10.0;
    }
    return best;
}

// Best achievable objective over an exhaustive 0.001-step threshold grid.
inline double threshold_grid_best(std::span<const double> defer_probs,
                                  std::span<const l2d::ClassIndex> base_preds,
                                  std::span<const l2d::ClassIndex> expert_preds,
                                  std::span<const l2d::ClassIndex> golds,
                                  const l2d::Objective& objective) {
    double best = -1.0;
    std::vector<l2d::ClassIndex> preds(defer_probs.size());
    for (int t = 0; t <= 1000; ++t) {
        double tau = static_cast<double>(t) / 1000.0;
        for (std::size_t i = 0; i < defer_probs.size(); ++i) {
            preds[i] = defer_probs[i] >= tau ? expert_preds[i] : base_preds[i];
        }
        best = std::max(best, objective(preds, golds));
    }
    return best;
}

}  // namespace oracles
