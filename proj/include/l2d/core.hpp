#pragma once
// Label spaces, probability distributions, prediction records, and the
// classification metrics shared by every other component. Everything here
// is an immutable value after construction; all operations are pure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace l2d {

using ClassIndex = std::size_t;

inline constexpr double kProbSumTolerance = 1e-6;

class LabelSpace {
public:
    LabelSpace(std::vector<std::string> class_names,
               std::optional<ClassIndex> positive_index = std::nullopt)
        : names_(std::move(class_names)), positive_(positive_index) {
        if (names_.size() < 2) {
            throw std::invalid_argument("label space needs at least 2 classes");
        }
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].empty()) {
                throw std::invalid_argument("label space contains an empty class name");
            }
            for (std::size_t j = i + 1; j < names_.size(); ++j) {
                if (names_[i] == names_[j]) {
                    throw std::invalid_argument("duplicate class name: " + names_[i]);
                }
            }
        }
        if (positive_ && *positive_ >= names_.size()) {
            throw std::invalid_argument("positive_index out of range");
        }
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(ClassIndex i) const { return names_.at(i); }
    std::optional<ClassIndex> positive_index() const { return positive_; }

    std::optional<ClassIndex> index_of(std::string_view class_name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == class_name) return i;
        }
        return std::nullopt;
    }

    // Positive class for binary F1: the designated index, or class 1 for an
    // undesignated binary space. Multi-class spaces must designate one.
    ClassIndex resolve_positive() const {
        if (positive_) return *positive_;
        if (names_.size() == 2) return 1;
        throw std::invalid_argument(
            "positive class must be designated for a multi-class label space");
    }

    bool operator==(const LabelSpace&) const = default;

private:
    std::vector<std::string> names_;
    std::optional<ClassIndex> positive_;
};

class ProbabilityDistribution {
public:
    explicit ProbabilityDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) {
            throw std::invalid_argument("probability distribution is empty");
        }
        double sum = 0.0;
        for (double p : probs_) {
            if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
                throw std::invalid_argument("probability entry outside [0,1]: " +
                                            std::to_string(p));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kProbSumTolerance) {
            throw std::invalid_argument("probabilities sum to " + std::to_string(sum) +
                                        ", expected 1 within " +
                                        std::to_string(kProbSumTolerance));
        }
    }

    std::size_t size() const { return probs_.size(); }
    const std::vector<double>& values() const { return probs_; }
    double operator[](std::size_t i) const { return probs_[i]; }

    bool operator==(const ProbabilityDistribution&) const = default;

private:
    std::vector<double> probs_;
};

// One labeled instance: the unit of training and evaluation data.
struct PredictionRecord {
    std::string id;
    std::string text;
    ClassIndex gold = 0;
    ProbabilityDistribution base_probs;
    std::optional<ClassIndex> expert_pred;
    std::optional<std::string> group_id;

    bool operator==(const PredictionRecord&) const = default;
};

inline ClassIndex argmax(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("argmax of empty input");
    // ties break to the lowest index
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] > xs[best]) best = i;
    }
    return best;
}

inline ClassIndex base_prediction(const ProbabilityDistribution& d) {
    return argmax(d.values());
}

// K x K counts, rows = gold, columns = predicted.
struct ConfusionCounts {
    std::size_t num_classes = 0;
    std::vector<std::size_t> cells;

    static ConfusionCounts from_predictions(std::span<const ClassIndex> preds,
                                            std::span<const ClassIndex> golds,
                                            std::size_t num_classes) {
        if (preds.size() != golds.size()) {
            throw std::invalid_argument("preds/golds length mismatch");
        }
        ConfusionCounts out;
        out.num_classes = num_classes;
        out.cells.assign(num_classes * num_classes, 0);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (golds[i] >= num_classes || preds[i] >= num_classes) {
                throw std::invalid_argument("class index out of range");
            }
            ++out.cells[golds[i] * num_classes + preds[i]];
        }
        return out;
    }

    std::size_t at(ClassIndex gold, ClassIndex pred) const {
        return cells.at(gold * num_classes + pred);
    }
    std::size_t total() const {
        std::size_t t = 0;
        for (auto c : cells) t += c;
        return t;
    }
    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < num_classes; ++i) t += at(i, i);
        return t;
    }
};

inline double class_precision(const ConfusionCounts& m, ClassIndex c) {
    std::size_t tp = m.at(c, c), predicted = 0;
    for (std::size_t g = 0; g < m.num_classes; ++g) predicted += m.at(g, c);
    return predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
}

inline double class_recall(const ConfusionCounts& m, ClassIndex c) {
    std::size_t tp = m.at(c, c), actual = 0;
    for (std::size_t p = 0; p < m.num_classes; ++p) actual += m.at(c, p);
    return actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
}

inline double class_f1(const ConfusionCounts& m, ClassIndex c) {
    if (m.at(c, c) == 0) return 0.0;
    double p = class_precision(m, c), r = class_recall(m, c);
    return 2.0 * p * r / (p + r);
}

namespace detail {
inline void check_aligned(std::span<const ClassIndex> preds, std::span<const ClassIndex> golds) {
    if (preds.empty()) throw std::invalid_argument("empty prediction list");
    if (preds.size() != golds.size()) {
        throw std::invalid_argument("preds/golds length mismatch");
    }
}
inline std::size_t max_class(std::span<const ClassIndex> a, std::span<const ClassIndex> b) {
    std::size_t m = 0;
    for (auto v : a) m = std::max(m, static_cast<std::size_t>(v));
    for (auto v : b) m = std::max(m, static_cast<std::size_t>(v));
    return m;
}
}  // namespace detail

inline double accuracy(std::span<const ClassIndex> preds, std::span<const ClassIndex> golds) {
    detail::check_aligned(preds, golds);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == golds[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// F1 of the positive class; 0 when there are no true positives.
inline double binary_f1(std::span<const ClassIndex> preds, std::span<const ClassIndex> golds,
                        ClassIndex positive) {
    detail::check_aligned(preds, golds);
    std::size_t k = std::max(detail::max_class(preds, golds), positive) + 1;
    auto m = ConfusionCounts::from_predictions(preds, golds, k);
    return class_f1(m, positive);
}

// Unweighted mean of per-class F1 over all K classes; a class absent from
// both preds and golds contributes F1 = 0.
inline double macro_f1(std::span<const ClassIndex> preds, std::span<const ClassIndex> golds,
                       std::size_t num_classes) {
    detail::check_aligned(preds, golds);
    auto m = ConfusionCounts::from_predictions(preds, golds, num_classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) sum += class_f1(m, c);
    return sum / static_cast<double>(num_classes);
}

// Metric a combined system is tuned and reported on.
struct Objective {
    enum class Kind { binary_f1, macro_f1 };
    Kind kind = Kind::binary_f1;
    ClassIndex positive_index = 1;
    std::size_t num_classes = 2;

    static Objective binary(ClassIndex positive) {
        return Objective{Kind::binary_f1, positive, 2};
    }
    static Objective macro(std::size_t num_classes) {
        return Objective{Kind::macro_f1, 0, num_classes};
    }
    // binary spaces report positive-class F1, multi-class spaces macro-F1
    static Objective for_label_space(const LabelSpace& space) {
        if (space.size() == 2) return binary(space.resolve_positive());
        return macro(space.size());
    }

    double operator()(std::span<const ClassIndex> preds,
                      std::span<const ClassIndex> golds) const {
        return kind == Kind::binary_f1 ? binary_f1(preds, golds, positive_index)
                                       : macro_f1(preds, golds, num_classes);
    }

    std::string name() const {
        return kind == Kind::binary_f1 ? "binary-f1" : "macro-f1";
    }
};

}  // namespace l2d
