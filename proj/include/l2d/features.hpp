#pragma once
// The deferral feature vector: 5 uncertainty statistics of the base
// model's softmax output plus 13 text features (lengths and clinical
// keyword indicators). With the default lexicon the vector has exactly
// 18 dimensions.

#include <cctype>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "l2d/core.hpp"

namespace l2d {

// Keyword groups for the indicator features. Matching is case-insensitive
// on word boundaries; multi-word phrases match contiguous word sequences.
struct Lexicon {
    std::vector<std::string> causal_phrases = {"induced", "caused by", "due to", "after",
                                               "following"};
    std::vector<std::string> severity_terms = {"severe", "fatal"};
    std::vector<std::string> ade_terms = {"toxicity", "reaction", "syndrome"};
    std::vector<std::string> outcome_terms = {"discontinued", "improved", "intolerance"};

    bool operator==(const Lexicon&) const = default;
};

struct FeatureSchema {
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }
    bool operator==(const FeatureSchema&) const = default;
};

using FeatureVector = std::vector<double>;

inline double confidence(const ProbabilityDistribution& p) {
    double best = p[0];
    for (double v : p.values()) best = std::max(best, v);
    return best;
}

// Natural-log entropy; zero-probability terms contribute 0.
inline double entropy(const ProbabilityDistribution& p) {
    double h = 0.0;
    for (double v : p.values()) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::max(h, 0.0);
}

namespace detail {
// The two largest entries, descending.
inline std::pair<double, double> top_two(const ProbabilityDistribution& p) {
    if (p.size() < 2) throw std::invalid_argument("need at least 2 classes");
    double first = -1.0, second = -1.0;
    for (double v : p.values()) {
        if (v > first) {
            second = first;
            first = v;
        } else if (v > second) {
            second = v;
        }
    }
    return {first, second};
}

inline std::string lowercase_ascii(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

// Words = maximal alphanumeric runs of the lowercased text. This is the
// boundary definition for keyword matching ("after" does not fire on
// "afterward", but "drug-induced" does contain the word "induced").
inline std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string lower = lowercase_ascii(text);
    std::string cur;
    for (char c : lower) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline std::size_t whitespace_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

inline bool contains_phrase(std::span<const std::string> tokens, std::string_view phrase) {
    std::vector<std::string> words = word_tokens(phrase);
    if (words.empty() || tokens.size() < words.size()) return false;
    for (std::size_t i = 0; i + words.size() <= tokens.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < words.size(); ++j) {
            if (tokens[i + j] != words[j]) {
                match = false;
                break;
            }
        }
        if (match) return true;
    }
    return false;
}

inline std::string indicator_name(std::string_view phrase) {
    std::string name = "has_";
    for (char c : phrase) name.push_back(c == ' ' ? '_' : c);
    return name;
}
}  // namespace detail

inline double margin(const ProbabilityDistribution& p) {
    auto [first, second] = detail::top_two(p);
    return first - second;
}

inline void validate(const Lexicon& lex) {
    auto check_group = [](const std::vector<std::string>& phrases, const char* group) {
        if (phrases.empty()) {
            throw std::invalid_argument(std::string(group) + " is empty");
        }
        for (const auto& phrase : phrases) {
            if (phrase.empty()) {
                throw std::invalid_argument(std::string(group) + " contains an empty phrase");
            }
            for (char c : phrase) {
                if (std::isupper(static_cast<unsigned char>(c))) {
                    throw std::invalid_argument("lexicon phrase must be lowercase: " + phrase);
                }
            }
        }
    };
    check_group(lex.causal_phrases, "causal_phrases");
    check_group(lex.severity_terms, "severity_terms");
    check_group(lex.ade_terms, "ade_terms");
    check_group(lex.outcome_terms, "outcome_terms");
}

// Feature order: [confidence, entropy, margin, normalized_entropy,
// second_prob, log_char_len, log_word_len, one indicator per causal phrase,
// one per severity term, one per ADE term, one grouped outcome indicator].
inline FeatureSchema build_schema(const Lexicon& lex) {
    validate(lex);
    FeatureSchema schema;
    schema.names = {"confidence", "entropy", "margin", "normalized_entropy", "second_prob",
                    "log_char_len", "log_word_len"};
    for (const auto& phrase : lex.causal_phrases) {
        schema.names.push_back(detail::indicator_name(phrase));
    }
    for (const auto& term : lex.severity_terms) {
        schema.names.push_back(detail::indicator_name(term));
    }
    for (const auto& term : lex.ade_terms) {
        schema.names.push_back(detail::indicator_name(term));
    }
    schema.names.push_back("has_outcome_term");
    for (std::size_t i = 0; i < schema.names.size(); ++i) {
        for (std::size_t j = i + 1; j < schema.names.size(); ++j) {
            if (schema.names[i] == schema.names[j]) {
                throw std::invalid_argument("duplicate feature name: " + schema.names[i]);
            }
        }
    }
    return schema;
}

inline FeatureVector extract_features(std::string_view text, const ProbabilityDistribution& p,
                                      const Lexicon& lex) {
    auto [top, second] = detail::top_two(p);
    double h = entropy(p);
    double log_k = std::log(static_cast<double>(p.size()));

    FeatureVector fv;
    fv.reserve(7 + lex.causal_phrases.size() + lex.severity_terms.size() + lex.ade_terms.size() +
               1);
    fv.push_back(top);
    fv.push_back(h);
    fv.push_back(top - second);
    fv.push_back(h / log_k);
    fv.push_back(second);
    fv.push_back(std::log(1.0 + static_cast<double>(text.size())));
    fv.push_back(std::log(1.0 + static_cast<double>(detail::whitespace_token_count(text))));

    std::vector<std::string> tokens = detail::word_tokens(text);
    for (const auto& phrase : lex.causal_phrases) {
        fv.push_back(detail::contains_phrase(tokens, phrase) ? 1.0 : 0.0);
    }
    for (const auto& term : lex.severity_terms) {
        fv.push_back(detail::contains_phrase(tokens, term) ? 1.0 : 0.0);
    }
    for (const auto& term : lex.ade_terms) {
        fv.push_back(detail::contains_phrase(tokens, term) ? 1.0 : 0.0);
    }
    bool any_outcome = false;
    for (const auto& term : lex.outcome_terms) {
        if (detail::contains_phrase(tokens, term)) {
            any_outcome = true;
            break;
        }
    }
    fv.push_back(any_outcome ? 1.0 : 0.0);
    return fv;
}

}  // namespace l2d
