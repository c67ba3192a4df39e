#pragma once
// The learned routing policy: z-score standardization, a weighted logistic
// regression trained on the base model's error indicator, deferral scoring,
// threshold tuning against the combined-system objective, and stratified
// out-of-fold probability estimation.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/features.hpp"
#include "l2d/random.hpp"

namespace l2d {

struct DegenerateLabelsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Standardizer {
    std::vector<double> means;
    std::vector<double> stds;

    FeatureVector apply(const FeatureVector& fv) const {
        if (fv.size() != means.size()) {
            throw std::invalid_argument("feature vector does not match standardizer width");
        }
        FeatureVector out(fv.size());
        for (std::size_t j = 0; j < fv.size(); ++j) {
            out[j] = (fv[j] - means[j]) / stds[j];
        }
        return out;
    }

    bool operator==(const Standardizer&) const = default;
};

// Per-dimension mean and population standard deviation over training rows.
// Zero-variance dimensions get std = 1 so constant features stay harmless.
inline Standardizer fit_standardizer(std::span<const FeatureVector> rows) {
    if (rows.size() < 2) {
        throw InsufficientDataError("standardizer needs at least 2 rows");
    }
    const std::size_t dims = rows[0].size();
    const double n = static_cast<double>(rows.size());
    Standardizer s;
    s.means.assign(dims, 0.0);
    s.stds.assign(dims, 0.0);
    for (const auto& row : rows) {
        if (row.size() != dims) throw std::invalid_argument("ragged feature rows");
        for (std::size_t j = 0; j < dims; ++j) s.means[j] += row[j];
    }
    for (std::size_t j = 0; j < dims; ++j) s.means[j] /= n;
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < dims; ++j) {
            double d = row[j] - s.means[j];
            s.stds[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < dims; ++j) {
        s.stds[j] = std::sqrt(s.stds[j] / n);
        if (s.stds[j] < 1e-12) s.stds[j] = 1.0;
    }
    return s;
}

enum class ClassWeighting { balanced, none };

struct TrainingConfig {
    double c = 1.0;             // inverse L2 strength; penalty is (1/(2c))·|w|^2
    int max_iterations = 1000;
    double tolerance = 1e-6;    // convergence on gradient max-norm
    ClassWeighting weighting = ClassWeighting::balanced;
    std::uint64_t seed = 42;
};

// w_c = n / (2·n_c), so the total weighted mass of each class is n/2.
inline std::pair<double, double> balanced_weights(std::span<const ClassIndex> error_labels) {
    std::size_t n0 = 0, n1 = 0;
    for (ClassIndex e : error_labels) {
        if (e == 0) {
            ++n0;
        } else if (e == 1) {
            ++n1;
        } else {
            throw std::invalid_argument("error label must be 0 or 1");
        }
    }
    if (n0 == 0 || n1 == 0) {
        throw DegenerateLabelsError("balanced weights need both error classes present");
    }
    const double n = static_cast<double>(n0 + n1);
    return {n / (2.0 * static_cast<double>(n0)), n / (2.0 * static_cast<double>(n1))};
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Clamp a probability strictly inside (0,1).
inline double clamp_unit_open(double p) {
    constexpr double eps = 1e-15;
    return std::min(1.0 - eps, std::max(eps, p));
}

// In-place Cholesky solve of the SPD system a·x = b (a is n x n row-major,
// overwritten). Returns false if the factorization breaks down.
inline bool cholesky_solve(std::vector<double>& a, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (sum <= 0.0 || !std::isfinite(sum)) return false;
                a[i * n + i] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * b[k];
        b[i] = sum / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double sum = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) sum -= a[k * n + ii] * b[k];
        b[ii] = sum / a[ii * n + ii];
    }
    return true;
}

}  // namespace detail

struct TrainResult {
    std::vector<double> weights;
    double intercept = 0.0;
    bool converged = false;
    int iterations = 0;
    double grad_max_norm = 0.0;
};

// Class-weighted binary cross-entropy with an L2 penalty of (1/(2c))·|w|^2 on
// the weights only (the intercept is unpenalized), for the error indicator
// target. Deterministic damped-Newton descent from the all-zeros start; the
// objective is strictly convex, so the minimizer is unique.
inline TrainResult train_error_model(std::span<const FeatureVector> rows,
                                     std::span<const ClassIndex> error_labels,
                                     const TrainingConfig& config) {
    if (rows.empty() || rows.size() != error_labels.size()) {
        throw std::invalid_argument("rows/labels must be aligned and nonempty");
    }
    if (config.c <= 0.0 || config.max_iterations <= 0 || config.tolerance <= 0.0) {
        throw std::invalid_argument("invalid training config");
    }
    const std::size_t n = rows.size();
    const std::size_t dims = rows[0].size();
    for (const auto& row : rows) {
        if (row.size() != dims) throw std::invalid_argument("ragged feature rows");
    }

    std::vector<double> sample_weight(n, 1.0);
    if (config.weighting == ClassWeighting::balanced) {
        auto [w0, w1] = balanced_weights(error_labels);
        for (std::size_t i = 0; i < n; ++i) sample_weight[i] = error_labels[i] ? w1 : w0;
    } else {
        bool saw0 = false, saw1 = false;
        for (ClassIndex e : error_labels) {
            if (e == 0) saw0 = true;
            else if (e == 1) saw1 = true;
            else throw std::invalid_argument("error label must be 0 or 1");
        }
        if (!saw0 || !saw1) {
            throw DegenerateLabelsError("training needs both error classes present");
        }
    }

    const double ridge = 1.0 / config.c;
    const std::size_t p = dims + 1;  // weights + intercept

    std::vector<double> theta(p, 0.0);
    std::vector<double> z(n), prob(n);

    auto objective = [&](const std::vector<double>& th) {
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double zi = th[dims];
            for (std::size_t j = 0; j < dims; ++j) zi += th[j] * rows[i][j];
            obj += sample_weight[i] *
                   (detail::softplus(zi) - static_cast<double>(error_labels[i]) * zi);
        }
        for (std::size_t j = 0; j < dims; ++j) obj += 0.5 * ridge * th[j] * th[j];
        return obj;
    };

    TrainResult result;
    double current_obj = objective(theta);
    std::vector<double> grad(p), hess(p * p), step(p), trial(p);

    int iter = 0;
    for (; iter < config.max_iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double zi = theta[dims];
            for (std::size_t j = 0; j < dims; ++j) zi += theta[j] * rows[i][j];
            z[i] = zi;
            prob[i] = sigmoid(zi);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double r = sample_weight[i] * (prob[i] - static_cast<double>(error_labels[i]));
            for (std::size_t j = 0; j < dims; ++j) grad[j] += r * rows[i][j];
            grad[dims] += r;
        }
        for (std::size_t j = 0; j < dims; ++j) grad[j] += ridge * theta[j];

        double gmax = 0.0;
        for (double g : grad) gmax = std::max(gmax, std::abs(g));
        result.grad_max_norm = gmax;
        if (gmax <= config.tolerance) {
            result.converged = true;
            break;
        }

        std::fill(hess.begin(), hess.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double curv = sample_weight[i] * prob[i] * (1.0 - prob[i]);
            if (curv <= 0.0) continue;
            for (std::size_t a = 0; a < dims; ++a) {
                double ca = curv * rows[i][a];
                for (std::size_t b = 0; b <= a; ++b) hess[a * p + b] += ca * rows[i][b];
                hess[dims * p + a] += ca;
            }
            hess[dims * p + dims] += curv;
        }
        for (std::size_t j = 0; j < dims; ++j) hess[j * p + j] += ridge;
        for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = a + 1; b < p; ++b) hess[a * p + b] = hess[b * p + a];
        }

        for (std::size_t j = 0; j < p; ++j) step[j] = -grad[j];
        std::vector<double> factor = hess;
        double jitter = 1e-10;
        while (!detail::cholesky_solve(factor, p, step)) {
            // curvature underflow near saturation; re-solve with a jitter
            factor = hess;
            for (std::size_t j = 0; j < p; ++j) {
                factor[j * p + j] += jitter;
                step[j] = -grad[j];
            }
            jitter *= 10.0;
            if (jitter > 1.0) {
                for (std::size_t j = 0; j < p; ++j) step[j] = -grad[j];
                break;
            }
        }

        double directional = 0.0;
        for (std::size_t j = 0; j < p; ++j) directional += grad[j] * step[j];
        if (directional >= 0.0) {
            for (std::size_t j = 0; j < p; ++j) step[j] = -grad[j];
            directional = 0.0;
            for (std::size_t j = 0; j < p; ++j) directional -= grad[j] * grad[j];
        }

        // Armijo backtracking on the damped Newton direction
        double t = 1.0;
        bool moved = false;
        while (t >= 1e-14) {
            for (std::size_t j = 0; j < p; ++j) trial[j] = theta[j] + t * step[j];
            double trial_obj = objective(trial);
            if (trial_obj <= current_obj + 1e-4 * t * directional) {
                theta = trial;
                current_obj = trial_obj;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;  // no representable improvement left
    }
    result.iterations = iter;
    result.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(dims));
    result.intercept = theta[dims];
    return result;
}

// The persisted routing policy.
struct DeferralModel {
    int format_version = 1;
    FeatureSchema schema;
    Standardizer standardizer;
    std::vector<double> weights;
    double intercept = 0.0;
    double threshold = 0.5;
    LabelSpace label_space;
    Lexicon lexicon;
};

// sigmoid(w·standardize(fv) + b), clamped strictly inside (0,1).
inline double deferral_probability(const DeferralModel& model, const FeatureVector& fv) {
    if (fv.size() != model.schema.size() || model.weights.size() != model.schema.size()) {
        throw std::invalid_argument("feature vector does not match model schema");
    }
    FeatureVector standardized = model.standardizer.apply(fv);
    double z = model.intercept;
    for (std::size_t j = 0; j < standardized.size(); ++j) {
        z += model.weights[j] * standardized[j];
    }
    return detail::clamp_unit_open(sigmoid(z));
}

inline double score_record(const DeferralModel& model, std::string_view text,
                           const ProbabilityDistribution& base_probs) {
    return deferral_probability(model, extract_features(text, base_probs, model.lexicon));
}

// The routing rule: defer exactly when the deferral score reaches the
// threshold (>=, taken literally).
inline bool defers(double score, double threshold) { return score >= threshold; }

struct ThresholdResult {
    double tau = 1.0;
    double objective_value = 0.0;
    double deferral_rate = 0.0;
};

// Sweeps candidate thresholds {0} ∪ {observed scores} ∪ {1} and returns the
// tau maximizing the combined-system objective. Scores are strictly below 1,
// so tau = 1 is the never-defer candidate. Ties prefer the lower deferral
// rate, then the larger tau.
inline ThresholdResult tune_threshold(std::span<const double> defer_probs,
                                      std::span<const ClassIndex> base_preds,
                                      std::span<const ClassIndex> expert_preds,
                                      std::span<const ClassIndex> golds,
                                      const Objective& objective) {
    const std::size_t n = defer_probs.size();
    if (n == 0 || base_preds.size() != n || expert_preds.size() != n || golds.size() != n) {
        throw std::invalid_argument("threshold tuning needs aligned nonempty inputs");
    }
    std::vector<double> candidates(defer_probs.begin(), defer_probs.end());
    candidates.push_back(0.0);
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    ThresholdResult best;
    bool have_best = false;
    std::vector<ClassIndex> preds(n);
    for (double tau : candidates) {
        std::size_t deferred = 0;
        for (std::size_t i = 0; i < n; ++i) {
            bool d = defers(defer_probs[i], tau);
            preds[i] = d ? expert_preds[i] : base_preds[i];
            if (d) ++deferred;
        }
        double value = objective(preds, golds);
        double rate = static_cast<double>(deferred) / static_cast<double>(n);
        bool better = !have_best || value > best.objective_value ||
                      (value == best.objective_value && rate < best.deferral_rate) ||
                      (value == best.objective_value && rate == best.deferral_rate &&
                       tau > best.tau);
        if (better) {
            best = {tau, value, rate};
            have_best = true;
        }
    }
    return best;
}

// Disjoint folds with per-class counts differing by at most one across
// folds. Deterministic given the seed.
inline std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const ClassIndex> labels,
                                                              std::size_t k,
                                                              std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("k must be at least 2");
    if (k > labels.size()) throw std::invalid_argument("k exceeds the number of rows");
    std::size_t num_classes = 0;
    for (ClassIndex c : labels) num_classes = std::max(num_classes, static_cast<std::size_t>(c) + 1);

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    for (auto& members : by_class) {
        shuffle_in_place(members, rng);
        for (std::size_t i = 0; i < members.size(); ++i) {
            folds[i % k].push_back(members[i]);
        }
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

inline std::vector<ClassIndex> error_labels_for(std::span<const PredictionRecord> records) {
    std::vector<ClassIndex> errors;
    errors.reserve(records.size());
    for (const auto& rec : records) {
        errors.push_back(base_prediction(rec.base_probs) != rec.gold ? 1 : 0);
    }
    return errors;
}

struct OutOfFoldResult {
    std::vector<double> defer_probs;            // aligned with the input records
    std::vector<std::size_t> fold_of;           // fold whose model scored each record
    std::vector<std::vector<std::size_t>> folds;
};

// For each fold, fits the standardizer and error model on the other k-1
// folds and scores the held-out rows, so no record is ever scored by a model
// that saw it. Folds are stratified on the error labels.
inline OutOfFoldResult out_of_fold_defer_probs(std::span<const PredictionRecord> records,
                                               const Lexicon& lexicon,
                                               const TrainingConfig& config, std::size_t k) {
    std::vector<ClassIndex> errors = error_labels_for(records);
    OutOfFoldResult result;
    result.folds = stratified_kfold(errors, k, sub_seed(config.seed, "folds"));
    result.defer_probs.assign(records.size(), 0.0);
    result.fold_of.assign(records.size(), 0);

    std::vector<FeatureVector> features;
    features.reserve(records.size());
    for (const auto& rec : records) {
        features.push_back(extract_features(rec.text, rec.base_probs, lexicon));
    }

    std::vector<char> held_out(records.size());
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        std::fill(held_out.begin(), held_out.end(), 0);
        for (std::size_t i : result.folds[f]) held_out[i] = 1;

        std::vector<FeatureVector> train_rows;
        std::vector<ClassIndex> train_errors;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!held_out[i]) {
                train_rows.push_back(features[i]);
                train_errors.push_back(errors[i]);
            }
        }
        bool saw0 = false, saw1 = false;
        for (ClassIndex e : train_errors) (e ? saw1 : saw0) = true;
        if (!saw0 || !saw1) {
            throw DegenerateLabelsError("training folds for fold " + std::to_string(f) +
                                        " contain a single error class");
        }

        Standardizer standardizer = fit_standardizer(train_rows);
        for (auto& row : train_rows) row = standardizer.apply(row);
        TrainResult fit = train_error_model(train_rows, train_errors, config);

        for (std::size_t i : result.folds[f]) {
            FeatureVector standardized = standardizer.apply(features[i]);
            double z = fit.intercept;
            for (std::size_t j = 0; j < standardized.size(); ++j) {
                z += fit.weights[j] * standardized[j];
            }
            result.defer_probs[i] = detail::clamp_unit_open(sigmoid(z));
            result.fold_of[i] = f;
        }
    }
    return result;
}

// Weights in schema order; positive coefficients increase the deferral
// probability.
inline std::vector<std::pair<std::string, double>> report_coefficients(
    const DeferralModel& model) {
    if (model.weights.size() != model.schema.size()) {
        throw std::invalid_argument("model weights do not match schema");
    }
    std::vector<std::pair<std::string, double>> out;
    out.reserve(model.weights.size());
    for (std::size_t j = 0; j < model.weights.size(); ++j) {
        out.emplace_back(model.schema.names[j], model.weights[j]);
    }
    return out;
}

}  // namespace l2d
