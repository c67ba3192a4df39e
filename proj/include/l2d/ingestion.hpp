#pragma once
// Dataset ingestion and splitting. Datasets are newline-delimited JSON: an
// optional header object declaring the label space, then one record per
// line. Validation rejects on the first malformed line, naming it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/core.hpp"
#include "l2d/model_io.hpp"
#include "l2d/random.hpp"

namespace l2d {

struct IngestionError : std::runtime_error {
    std::size_t line_number;
    IngestionError(std::size_t line, const std::string& message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message),
          line_number(line) {}
};

struct DatasetManifest {
    LabelSpace label_space;
    std::vector<PredictionRecord> records;
    std::string provenance;

    bool operator==(const DatasetManifest&) const = default;
};

namespace detail {

inline PredictionRecord record_from_json(const nlohmann::json& j, const LabelSpace& space,
                                         std::size_t line) {
    if (!j.is_object()) throw IngestionError(line, "record is not a JSON object");
    for (const char* key : {"id", "text", "gold", "base_probs"}) {
        if (!j.contains(key)) {
            throw IngestionError(line, std::string("missing required field '") + key + "'");
        }
    }
    std::string id = j.at("id").get<std::string>();
    if (id.empty()) throw IngestionError(line, "record id is empty");

    std::string gold_name = j.at("gold").get<std::string>();
    auto gold = space.index_of(gold_name);
    if (!gold) throw IngestionError(line, "unknown gold label '" + gold_name + "'");

    if (!j.at("base_probs").is_array()) {
        throw IngestionError(line, "base_probs must be an array of numbers");
    }
    std::vector<double> probs = j.at("base_probs").get<std::vector<double>>();
    if (probs.size() != space.size()) {
        throw IngestionError(line, "base_probs has " + std::to_string(probs.size()) +
                                       " entries, label space has " +
                                       std::to_string(space.size()));
    }

    std::optional<ClassIndex> expert;
    if (j.contains("expert_pred") && !j.at("expert_pred").is_null()) {
        std::string expert_name = j.at("expert_pred").get<std::string>();
        expert = space.index_of(expert_name);
        if (!expert) throw IngestionError(line, "unknown expert label '" + expert_name + "'");
    }
    std::optional<std::string> group;
    if (j.contains("group_id") && !j.at("group_id").is_null()) {
        group = j.at("group_id").get<std::string>();
    }

    try {
        return PredictionRecord{std::move(id), j.at("text").get<std::string>(),
                                *gold, ProbabilityDistribution(std::move(probs)),
                                expert, std::move(group)};
    } catch (const std::invalid_argument& e) {
        throw IngestionError(line, e.what());
    }
}

inline nlohmann::json record_to_json(const PredictionRecord& rec, const LabelSpace& space) {
    nlohmann::json j{{"id", rec.id},
                     {"text", rec.text},
                     {"gold", space.name(rec.gold)},
                     {"base_probs", rec.base_probs.values()}};
    if (rec.expert_pred) j["expert_pred"] = space.name(*rec.expert_pred);
    if (rec.group_id) j["group_id"] = *rec.group_id;
    return j;
}

}  // namespace detail

inline DatasetManifest load_dataset(const std::filesystem::path& path,
                                    std::optional<LabelSpace> external_space = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());

    std::optional<LabelSpace> space = std::move(external_space);
    std::string provenance;
    std::vector<PredictionRecord> records;
    std::map<std::string, std::size_t> seen_ids;

    std::string line;
    std::size_t line_number = 0;
    bool first_content_line = true;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError(line_number, std::string("malformed JSON: ") + e.what());
        }
        if (first_content_line && j.is_object() && j.contains("label_space")) {
            try {
                LabelSpace header_space = label_space_from_json(j.at("label_space"));
                if (space && *space != header_space) {
                    throw IngestionError(line_number,
                                         "header label space disagrees with the provided one");
                }
                space = std::move(header_space);
            } catch (const std::invalid_argument& e) {
                throw IngestionError(line_number, e.what());
            }
            if (j.contains("provenance")) provenance = j.at("provenance").get<std::string>();
            first_content_line = false;
            continue;
        }
        first_content_line = false;
        if (!space) {
            throw IngestionError(line_number,
                                 "no label space: add a header line or pass one explicitly");
        }
        try {
            PredictionRecord rec = detail::record_from_json(j, *space, line_number);
            auto [it, inserted] = seen_ids.emplace(rec.id, line_number);
            if (!inserted) {
                throw IngestionError(line_number, "duplicate id '" + rec.id +
                                                      "' (first seen at line " +
                                                      std::to_string(it->second) + ")");
            }
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError(line_number, std::string("bad field type: ") + e.what());
        }
    }
    if (records.empty()) {
        throw IngestionError(line_number, "empty dataset: " + path.string());
    }
    return DatasetManifest{std::move(*space), std::move(records), std::move(provenance)};
}

inline void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
    nlohmann::json header{{"label_space", label_space_to_json(manifest.label_space)},
                          {"provenance", manifest.provenance}};
    out << header.dump() << '\n';
    for (const auto& rec : manifest.records) {
        out << detail::record_to_json(rec, manifest.label_space).dump() << '\n';
    }
}

struct SplitResult {
    std::vector<PredictionRecord> train;
    std::vector<PredictionRecord> val;
    std::vector<PredictionRecord> test;
    std::vector<std::string> warnings;
};

namespace detail {

inline void check_fractions(const std::array<double, 3>& fractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split fractions must be nonnegative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1");
    }
}

// Largest-remainder allocation of per-class counts to the three splits,
// with remainders steered toward the split farthest below its overall
// target so split totals land on the exact proportional counts.
inline std::vector<std::array<std::size_t, 3>> allocate_counts(
    const std::vector<std::size_t>& class_sizes, const std::array<double, 3>& fractions) {
    const std::size_t total = [&] {
        std::size_t t = 0;
        for (auto s : class_sizes) t += s;
        return t;
    }();
    std::array<double, 3> deficit{};
    for (std::size_t s = 0; s < 3; ++s) {
        deficit[s] = fractions[s] * static_cast<double>(total);
    }
    std::vector<std::array<std::size_t, 3>> counts(class_sizes.size());
    std::vector<std::array<double, 3>> fractional(class_sizes.size());
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        for (std::size_t s = 0; s < 3; ++s) {
            double exact = fractions[s] * static_cast<double>(class_sizes[c]);
            counts[c][s] = static_cast<std::size_t>(exact);
            fractional[c][s] = exact - static_cast<double>(counts[c][s]);
            deficit[s] -= static_cast<double>(counts[c][s]);
        }
    }
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        std::size_t assigned = counts[c][0] + counts[c][1] + counts[c][2];
        for (std::size_t r = assigned; r < class_sizes[c]; ++r) {
            std::size_t pick = 0;
            for (std::size_t s = 1; s < 3; ++s) {
                if (deficit[s] > deficit[pick] + 1e-12 ||
                    (std::abs(deficit[s] - deficit[pick]) <= 1e-12 &&
                     fractional[c][s] > fractional[c][pick] + 1e-12)) {
                    pick = s;
                }
            }
            ++counts[c][pick];
            deficit[pick] -= 1.0;
        }
    }
    return counts;
}

}  // namespace detail

// Per-class proportions preserved within one record per class per split;
// the three splits partition the input exactly. Deterministic given seed.
inline SplitResult stratified_split(std::span<const PredictionRecord> records,
                                    const LabelSpace& space,
                                    const std::array<double, 3>& fractions, std::uint64_t seed) {
    detail::check_fractions(fractions);
    std::vector<std::vector<std::size_t>> by_class(space.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].gold >= space.size()) {
            throw std::invalid_argument("record gold label outside the label space");
        }
        by_class[records[i].gold].push_back(i);
    }
    std::size_t nonzero_splits = 0;
    for (double f : fractions) {
        if (f > 0.0) ++nonzero_splits;
    }

    SplitResult result;
    std::vector<std::size_t> class_sizes;
    class_sizes.reserve(by_class.size());
    for (const auto& members : by_class) class_sizes.push_back(members.size());
    auto counts = detail::allocate_counts(class_sizes, fractions);

    std::mt19937_64 rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (!members.empty() && members.size() < nonzero_splits) {
            result.warnings.push_back("class '" + space.name(c) + "' has only " +
                                      std::to_string(members.size()) +
                                      " records; assigned greedily");
        }
        shuffle_in_place(members, rng);
        std::size_t offset = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            auto* dest = s == 0 ? &result.train : (s == 1 ? &result.val : &result.test);
            for (std::size_t r = 0; r < counts[c][s]; ++r) {
                dest->push_back(records[members[offset + r]]);
            }
            offset += counts[c][s];
        }
    }
    return result;
}

// Whole groups land in one split; group order is a seeded shuffle and each
// group goes to the split with the largest remaining record deficit.
inline SplitResult group_split(std::span<const PredictionRecord> records,
                               const std::array<double, 3>& fractions, std::uint64_t seed) {
    detail::check_fractions(fractions);
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].group_id) {
            throw std::invalid_argument("record " + records[i].id + " has no group_id");
        }
        auto [it, inserted] = groups.try_emplace(*records[i].group_id);
        if (inserted) group_order.push_back(*records[i].group_id);
        it->second.push_back(i);
    }

    std::mt19937_64 rng(seed);
    shuffle_in_place(group_order, rng);

    std::array<double, 3> deficit{};
    for (std::size_t s = 0; s < 3; ++s) {
        deficit[s] = fractions[s] * static_cast<double>(records.size());
    }
    SplitResult result;
    for (const auto& group_id : group_order) {
        const auto& members = groups.at(group_id);
        std::size_t pick = 0;
        for (std::size_t s = 1; s < 3; ++s) {
            if (deficit[s] > deficit[pick] + 1e-12) pick = s;
        }
        auto* dest = pick == 0 ? &result.train : (pick == 1 ? &result.val : &result.test);
        for (std::size_t i : members) dest->push_back(records[i]);
        deficit[pick] -= static_cast<double>(members.size());
    }
    return result;
}

struct ConsensusPair {
    std::string id;
    std::string label_a;
    std::string label_b;
};

struct ConsensusKept {
    std::string id;
    std::string label;
};

struct ConsensusResult {
    std::vector<ConsensusKept> kept;
    double agreement_rate = 0.0;
};

// Keeps pairs where both annotators agree; rate = kept / total.
inline ConsensusResult consensus_filter(std::span<const ConsensusPair> pairs) {
    if (pairs.empty()) throw std::invalid_argument("consensus filter needs at least one pair");
    ConsensusResult result;
    for (const auto& pair : pairs) {
        if (pair.label_a == pair.label_b) {
            result.kept.push_back(ConsensusKept{pair.id, pair.label_a});
        }
    }
    result.agreement_rate =
        static_cast<double>(result.kept.size()) / static_cast<double>(pairs.size());
    return result;
}

inline std::vector<ConsensusPair> load_consensus_pairs(
    const std::filesystem::path& path, std::optional<LabelSpace> space = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open consensus file: " + path.string());
    std::vector<ConsensusPair> pairs;
    std::string line;
    std::size_t line_number = 0;
    auto label_of = [&](const nlohmann::json& v, std::size_t ln) -> std::string {
        if (v.is_string()) {
            std::string name = v.get<std::string>();
            if (space && !space->index_of(name)) {
                throw IngestionError(ln, "unknown label '" + name + "'");
            }
            return name;
        }
        if (v.is_number_integer()) {
            auto idx = v.get<long long>();
            if (space) {
                if (idx < 0 || static_cast<std::size_t>(idx) >= space->size()) {
                    throw IngestionError(ln, "label index " + std::to_string(idx) +
                                                 " out of range");
                }
                return space->name(static_cast<ClassIndex>(idx));
            }
            return std::to_string(idx);
        }
        throw IngestionError(ln, "labels must be strings or integers");
    };
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError(line_number, std::string("malformed JSON: ") + e.what());
        }
        for (const char* key : {"id", "label_a", "label_b"}) {
            if (!j.contains(key)) {
                throw IngestionError(line_number,
                                     std::string("missing required field '") + key + "'");
            }
        }
        pairs.push_back(ConsensusPair{j.at("id").get<std::string>(),
                                      label_of(j.at("label_a"), line_number),
                                      label_of(j.at("label_b"), line_number)});
    }
    return pairs;
}

}  // namespace l2d
