#pragma once
// Dataset generators for tests: the hedged-complementarity experiment (a
// base model that fails mostly on hedged, high-entropy text while the
// expert does better exactly there) and generic random datasets for
// property checks.

#include <random>
#include <string>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/deferral.hpp"
#include "l2d/ingestion.hpp"
#include "l2d/random.hpp"

namespace synthetic {

// Platform-independent uniform double in [0, 1).
inline double u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * u01(rng);
}

inline bool bernoulli(std::mt19937_64& rng, double p) { return u01(rng) < p; }

inline std::string pick(std::mt19937_64& rng, const std::vector<std::string>& pool) {
    return pool[l2d::draw_below(rng, pool.size())];
}

// Binary records with a hidden "hedged" flag. Hedged rows get high-entropy
// base probabilities and hedging text; clear rows get confident ones. The
// base model's per-row error probability is logistic in (entropy, top
// probability) with a positive entropy channel and a negative confidence
// channel, calibrated so the base model is correct at rate 0.96 on clear
// rows and 0.40 on hedged ones. The expert is correct with probability
// 0.89 on hedged and 0.80 on clear rows, so routing the hedged slice to
// the expert is the profitable policy.
inline l2d::DatasetManifest make_complementarity_dataset(std::size_t n, std::uint64_t seed) {
    const std::vector<std::string> drugs = {"amoxicillin", "cisplatin", "lisinopril",
                                            "metformin",   "warfarin",  "azithromycin"};
    const std::vector<std::string> clear_templates = {
        "Severe rash caused by DRUG",
        "Ototoxicity induced by intravenous DRUG",
        "Nausea and vomiting after taking DRUG",
        "Anaphylactic reaction following DRUG infusion",
        "DRUG was continued at the same dose with good effect",
        "Symptoms improved after switching to DRUG",
        "DRUG discontinued due to intolerance",
    };
    const std::vector<std::string> hedged_templates = {
        "Patient reported feeling unwell, possibly related to the new medication",
        "Some discomfort was noted which may be connected with DRUG",
        "It is unclear whether the symptoms are linked to DRUG",
        "The patient seemed somewhat better, though this might not reflect DRUG",
        "There was a vague sense of dizziness that could perhaps involve DRUG",
    };

    l2d::LabelSpace space({"NEG", "POS"}, 1);
    std::mt19937_64 rng(l2d::sub_seed(seed, "synthetic"));
    std::vector<l2d::PredictionRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        bool hedged = bernoulli(rng, 0.25);
        l2d::ClassIndex gold = bernoulli(rng, 0.5) ? 1 : 0;
        double top = hedged ? uniform(rng, 0.50, 0.70) : uniform(rng, 0.90, 0.97);
        double h = -(top * std::log(top) + (1.0 - top) * std::log(1.0 - top));
        double p_error = l2d::sigmoid(-0.29 + 5.11 * h - 4.47 * top);
        bool base_correct = !bernoulli(rng, p_error);
        l2d::ClassIndex base_pred = base_correct ? gold : 1 - gold;
        std::vector<double> probs(2, 1.0 - top);
        probs[base_pred] = top;
        bool expert_correct = bernoulli(rng, hedged ? 0.89 : 0.80);
        l2d::ClassIndex expert_pred = expert_correct ? gold : 1 - gold;

        std::string text = pick(rng, hedged ? hedged_templates : clear_templates);
        std::string drug = pick(rng, drugs);
        if (auto pos = text.find("DRUG"); pos != std::string::npos) {
            text.replace(pos, 4, drug);
        }
        text += " (case " + std::to_string(i) + ")";  // texts stay unique per record
        records.push_back(l2d::PredictionRecord{"r" + std::to_string(i), std::move(text), gold,
                                                l2d::ProbabilityDistribution(std::move(probs)),
                                                expert_pred, std::nullopt});
    }
    return l2d::DatasetManifest{space, std::move(records), "synthetic-complementarity"};
}

// Generic random dataset: arbitrary distributions, a mediocre base model,
// and an expert of a given skill. Suitable for property tests only.
inline std::vector<l2d::PredictionRecord> make_random_records(std::mt19937_64& rng,
                                                              std::size_t n, std::size_t k,
                                                              double expert_skill = 0.7) {
    const std::vector<std::string> words = {"severe", "reaction",  "after",   "improved",
                                            "stable", "treatment", "therapy", "dose",
                                            "note",   "follow",    "fatigue", "mild"};
    std::vector<l2d::PredictionRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        l2d::ClassIndex gold = l2d::draw_below(rng, k);
        std::vector<double> probs(k);
        double sum = 0.0;
        for (auto& p : probs) {
            p = -std::log(1.0 - u01(rng));
            sum += p;
        }
        for (auto& p : probs) p /= sum;
        // nudge the gold class sometimes so the base model beats chance
        if (bernoulli(rng, 0.5)) {
            for (auto& p : probs) p *= 0.4;
            probs[gold] += 0.6;
        }
        l2d::ClassIndex expert =
            bernoulli(rng, expert_skill) ? gold : l2d::draw_below(rng, k);
        std::string text;
        for (int w = 0; w < 6; ++w) {
            if (w) text += ' ';
            text += pick(rng, words);
        }
        records.push_back(l2d::PredictionRecord{"x" + std::to_string(i), std::move(text), gold,
                                                l2d::ProbabilityDistribution(std::move(probs)),
                                                expert, std::nullopt});
    }
    return records;
}

}  // namespace synthetic
