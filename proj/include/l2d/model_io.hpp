#pragma once
// Versioned JSON persistence for DeferralModel and the small shared JSON
// helpers (label spaces, lexicons). Doubles serialize with shortest
// round-trip representations, so save/load reproduces scores bit-for-bit.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "l2d/deferral.hpp"

namespace l2d {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json label_space_to_json(const LabelSpace& space) {
    nlohmann::json j;
    j["names"] = space.names();
    if (space.positive_index()) {
        j["positive"] = space.name(*space.positive_index());
    }
    return j;
}

inline LabelSpace label_space_from_json(const nlohmann::json& j) {
    std::vector<std::string> names = j.at("names").get<std::vector<std::string>>();
    std::optional<ClassIndex> positive;
    if (j.contains("positive") && !j.at("positive").is_null()) {
        std::string positive_name = j.at("positive").get<std::string>();
        LabelSpace tentative(names);
        positive = tentative.index_of(positive_name);
        if (!positive) {
            throw std::invalid_argument("positive label '" + positive_name +
                                        "' is not in the label space");
        }
    }
    return LabelSpace(std::move(names), positive);
}

inline nlohmann::json lexicon_to_json(const Lexicon& lex) {
    return nlohmann::json{{"causal_phrases", lex.causal_phrases},
                          {"severity_terms", lex.severity_terms},
                          {"ade_terms", lex.ade_terms},
                          {"outcome_terms", lex.outcome_terms}};
}

inline Lexicon lexicon_from_json(const nlohmann::json& j) {
    Lexicon lex;
    auto read = [&j](const char* key, std::vector<std::string>& out) {
        if (j.contains(key)) out = j.at(key).get<std::vector<std::string>>();
    };
    read("causal_phrases", lex.causal_phrases);
    read("severity_terms", lex.severity_terms);
    read("ade_terms", lex.ade_terms);
    read("outcome_terms", lex.outcome_terms);
    validate(lex);
    return lex;
}

inline Lexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon file: " + path.string());
    nlohmann::json j;
    in >> j;
    return lexicon_from_json(j);
}

inline nlohmann::json model_to_json(const DeferralModel& model) {
    return nlohmann::json{{"format_version", model.format_version},
                          {"schema", model.schema.names},
                          {"standardizer",
                           {{"means", model.standardizer.means}, {"stds", model.standardizer.stds}}},
                          {"weights", model.weights},
                          {"intercept", model.intercept},
                          {"threshold", model.threshold},
                          {"label_space", label_space_to_json(model.label_space)},
                          {"lexicon", lexicon_to_json(model.lexicon)}};
}

inline DeferralModel model_from_json(const nlohmann::json& j) {
    int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
        throw std::runtime_error("unsupported model format_version " + std::to_string(version));
    }
    DeferralModel model{
        version,
        FeatureSchema{j.at("schema").get<std::vector<std::string>>()},
        Standardizer{j.at("standardizer").at("means").get<std::vector<double>>(),
                     j.at("standardizer").at("stds").get<std::vector<double>>()},
        j.at("weights").get<std::vector<double>>(),
        j.at("intercept").get<double>(),
        j.at("threshold").get<double>(),
        label_space_from_json(j.at("label_space")),
        lexicon_from_json(j.at("lexicon")),
    };
    const std::size_t dims = model.schema.size();
    if (model.weights.size() != dims || model.standardizer.means.size() != dims ||
        model.standardizer.stds.size() != dims) {
        throw std::runtime_error("model fields disagree on feature count");
    }
    if (model.threshold < 0.0 || model.threshold > 1.0) {
        throw std::runtime_error("model threshold outside [0,1]");
    }
    if (build_schema(model.lexicon) != model.schema) {
        throw std::runtime_error("model schema does not match its lexicon");
    }
    return model;
}

inline void save_model(const DeferralModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path.string());
    out << model_to_json(model).dump(2) << '\n';
}

inline DeferralModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed model file " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace l2d
