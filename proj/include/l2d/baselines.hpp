#pragma once
// Comparison policies: fixed confidence threshold, random deferral at a
// matched rate, the oracle upper bound, and the never/always reductions.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/deferral.hpp"
#include "l2d/random.hpp"

namespace l2d {

struct MissingExpertError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NeverPolicy {};
struct AlwaysPolicy {};
struct LearnedPolicy {
    std::vector<double> defer_probs;  // aligned with the evaluated records
    double threshold = 0.5;
};
struct FixedThresholdPolicy {
    double theta = 0.95;
};
struct RandomPolicy {
    double rate = 0.0;
    std::uint64_t seed = 42;
};
struct OraclePolicy {};

using Policy = std::variant<NeverPolicy, AlwaysPolicy, LearnedPolicy, FixedThresholdPolicy,
                            RandomPolicy, OraclePolicy>;

// Defer when the base model's top softmax probability falls below theta
// (strictly: confidence exactly at theta stays with the base model).
inline bool fixed_threshold_defer(const ProbabilityDistribution& p, double theta) {
    return confidence(p) < theta;
}

// Exactly round(rate·n) deferrals, positions chosen by a seeded shuffle.
inline std::vector<bool> random_defer_mask(std::size_t n, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("rate must be in [0,1]");
    auto want = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
    if (want > n) want = n;
    std::vector<char> mask(n, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(want), 1);
    std::mt19937_64 rng(seed);
    shuffle_in_place(mask, rng);
    return std::vector<bool>(mask.begin(), mask.end());
}

// Defer exactly when only the expert is correct; when both are wrong the
// base prediction is kept, so this is the minimal rate achieving the
// oracle's accuracy.
inline bool oracle_defer(ClassIndex base_pred, ClassIndex expert_pred, ClassIndex gold) {
    return base_pred != gold && expert_pred == gold;
}

inline std::string policy_tag(const Policy& policy) {
    struct Tagger {
        std::string operator()(const NeverPolicy&) const { return "base-only"; }
        std::string operator()(const AlwaysPolicy&) const { return "expert-only"; }
        std::string operator()(const LearnedPolicy&) const { return "learned"; }
        std::string operator()(const FixedThresholdPolicy& p) const {
            std::string theta = std::to_string(p.theta);
            theta.erase(theta.find_last_not_of('0') + 1);
            if (!theta.empty() && theta.back() == '.') theta.pop_back();
            return "fixed(" + theta + ")";
        }
        std::string operator()(const RandomPolicy&) const { return "random"; }
        std::string operator()(const OraclePolicy&) const { return "oracle"; }
    };
    return std::visit(Tagger{}, policy);
}

// Per-row defer decisions for a policy. Policies that must consult the
// expert prediction to decide (always, oracle on base errors) fail fast on
// rows where it is missing.
inline std::vector<bool> deferral_mask(const Policy& policy,
                                       std::span<const PredictionRecord> records) {
    const std::size_t n = records.size();
    std::vector<bool> mask(n, false);
    if (std::holds_alternative<NeverPolicy>(policy)) {
        return mask;
    }
    if (std::holds_alternative<AlwaysPolicy>(policy)) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!records[i].expert_pred) {
                throw MissingExpertError("record " + records[i].id + " has no expert prediction");
            }
            mask[i] = true;
        }
        return mask;
    }
    if (const auto* learned = std::get_if<LearnedPolicy>(&policy)) {
        if (learned->defer_probs.size() != n) {
            throw std::invalid_argument("learned policy scores not aligned with records");
        }
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = defers(learned->defer_probs[i], learned->threshold);
        }
        return mask;
    }
    if (const auto* fixed = std::get_if<FixedThresholdPolicy>(&policy)) {
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = fixed_threshold_defer(records[i].base_probs, fixed->theta);
        }
        return mask;
    }
    if (const auto* random = std::get_if<RandomPolicy>(&policy)) {
        return random_defer_mask(n, random->rate, random->seed);
    }
    // oracle
    for (std::size_t i = 0; i < n; ++i) {
        ClassIndex base = base_prediction(records[i].base_probs);
        if (base == records[i].gold) continue;
        if (!records[i].expert_pred) {
            throw MissingExpertError("record " + records[i].id +
                                     " has no expert prediction for the oracle policy");
        }
        mask[i] = oracle_defer(base, *records[i].expert_pred, records[i].gold);
    }
    return mask;
}

}  // namespace l2d
