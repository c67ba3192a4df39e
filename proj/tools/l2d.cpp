// Operator entry points: train a deferral model, evaluate routing policies,
// apply the consensus filter, tabulate the cost model, and run the live
// routing service. All randomness flows from --seed through named
// sub-streams so individual stages stay reproducible.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "l2d/core.hpp"
#include "l2d/deferral.hpp"
#include "l2d/evaluation.hpp"
#include "l2d/ingestion.hpp"
#include "l2d/model_io.hpp"
#include "l2d/service.hpp"

namespace {

using nlohmann::json;

std::optional<l2d::LabelSpace> load_label_space_file(const std::string& path) {
    if (path.empty()) return std::nullopt;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open label space file: " + path);
    json j;
    in >> j;
    return l2d::label_space_from_json(j.contains("label_space") ? j.at("label_space") : j);
}

l2d::Lexicon load_lexicon_or_default(const std::string& path) {
    if (path.empty()) return l2d::Lexicon{};
    return l2d::load_lexicon(path);
}

l2d::Objective parse_objective(const std::string& name, const l2d::LabelSpace& space) {
    if (name == "binary-f1") return l2d::Objective::binary(space.resolve_positive());
    if (name == "macro-f1") return l2d::Objective::macro(space.size());
    if (name.empty()) return l2d::Objective::for_label_space(space);
    throw std::runtime_error("unknown objective: " + name);
}

void write_output(const json& j, const std::string& out_path) {
    if (out_path.empty()) return;
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write output file: " + out_path);
    out << j.dump(2) << '\n';
}

void require_expert_predictions(const std::vector<l2d::PredictionRecord>& records,
                                const char* why) {
    for (const auto& rec : records) {
        if (!rec.expert_pred) {
            throw std::runtime_error("record '" + rec.id + "' has no expert prediction; " + why);
        }
    }
}

struct TrainOptions {
    std::string dataset, model_out, labels, lexicon, mode = "kfold", objective, format = "table",
                out;
    std::size_t k = 5;
    double c = 1.0;
    int max_iter = 1000;
    std::uint64_t seed = 42;
};

int cmd_train(const TrainOptions& opt) {
    auto manifest = l2d::load_dataset(opt.dataset, load_label_space_file(opt.labels));
    const auto& records = manifest.records;
    l2d::Lexicon lexicon = load_lexicon_or_default(opt.lexicon);
    l2d::FeatureSchema schema = l2d::build_schema(lexicon);

    require_expert_predictions(records, "threshold tuning needs one for every row");

    std::vector<l2d::ClassIndex> errors = l2d::error_labels_for(records);
    std::size_t error_count = 0;
    for (auto e : errors) error_count += e;
    if (error_count == 0) {
        throw l2d::DegenerateLabelsError(
            "the base model makes no errors on this dataset; the deferral target is the "
            "error indicator, so there is nothing to learn");
    }
    if (error_count == records.size()) {
        throw l2d::DegenerateLabelsError(
            "the base model is wrong on every record; the error indicator is constant");
    }

    l2d::TrainingConfig config;
    config.c = opt.c;
    config.max_iterations = opt.max_iter;
    config.seed = opt.seed;

    std::vector<l2d::FeatureVector> features;
    features.reserve(records.size());
    for (const auto& rec : records) {
        features.push_back(l2d::extract_features(rec.text, rec.base_probs, lexicon));
    }

    std::vector<double> defer_probs;
    if (opt.mode == "kfold") {
        auto oof = l2d::out_of_fold_defer_probs(records, lexicon, config, opt.k);
        defer_probs = std::move(oof.defer_probs);
    } else if (opt.mode == "single-fit") {
        defer_probs.resize(records.size());
    } else {
        throw std::runtime_error("unknown mode: " + opt.mode);
    }

    // Final model is fit on every row; in kfold mode the threshold is tuned
    // on the out-of-fold scores instead of these in-sample ones.
    l2d::Standardizer standardizer = l2d::fit_standardizer(features);
    std::vector<l2d::FeatureVector> standardized;
    standardized.reserve(features.size());
    for (const auto& fv : features) standardized.push_back(standardizer.apply(fv));
    l2d::TrainResult fit = l2d::train_error_model(standardized, errors, config);

    l2d::DeferralModel model{1,       schema,        standardizer,
                             fit.weights, fit.intercept, 1.0,
                             manifest.label_space, lexicon};
    if (opt.mode == "single-fit") {
        for (std::size_t i = 0; i < records.size(); ++i) {
            defer_probs[i] = l2d::deferral_probability(model, features[i]);
        }
    }

    l2d::Objective objective = parse_objective(opt.objective, manifest.label_space);
    std::vector<l2d::ClassIndex> base_preds, expert_preds, golds;
    for (const auto& rec : records) {
        base_preds.push_back(l2d::base_prediction(rec.base_probs));
        expert_preds.push_back(*rec.expert_pred);
        golds.push_back(rec.gold);
    }
    l2d::ThresholdResult tuned =
        l2d::tune_threshold(defer_probs, base_preds, expert_preds, golds, objective);
    model.threshold = tuned.tau;
    l2d::save_model(model, opt.model_out);

    // Error-prediction quality at the chosen threshold: does "defer" mean
    // "the base model is wrong"?
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        bool predicted_error = l2d::defers(defer_probs[i], tuned.tau);
        if (predicted_error && errors[i]) ++tp;
        if (predicted_error && !errors[i]) ++fp;
        if (!predicted_error && errors[i]) ++fn;
    }
    double error_precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double error_recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double base_value = objective(base_preds, golds);

    json coefficients = json::array();
    for (const auto& [name, weight] : l2d::report_coefficients(model)) {
        coefficients.push_back({{"feature", name}, {"weight", weight}});
    }
    json report{{"mode", opt.mode},
                {"n", records.size()},
                {"base_error_rate",
                 static_cast<double>(error_count) / static_cast<double>(records.size())},
                {"objective", objective.name()},
                {"tau", tuned.tau},
                {"system_objective", tuned.objective_value},
                {"base_objective", base_value},
                {"deferral_rate", tuned.deferral_rate},
                {"error_precision", error_precision},
                {"error_recall", error_recall},
                {"converged", fit.converged},
                {"iterations", fit.iterations},
                {"coefficients", coefficients},
                {"model_path", opt.model_out}};
    if (opt.mode == "kfold") report["k"] = opt.k;
    write_output(report, opt.out);

    if (opt.format == "json") {
        std::cout << report.dump(2) << '\n';
        return 0;
    }
    std::printf("trained deferral model on %zu records (%s mode)\n", records.size(),
                opt.mode.c_str());
    std::printf("  base error rate     %.4f\n", report["base_error_rate"].get<double>());
    std::printf("  tau                 %.6f\n", tuned.tau);
    std::printf("  %-10s system   %.4f (base %.4f)\n", objective.name().c_str(),
                tuned.objective_value, base_value);
    std::printf("  deferral rate       %.4f\n", tuned.deferral_rate);
    std::printf("  error prediction    precision %.4f, recall %.4f\n", error_precision,
                error_recall);
    std::printf("  converged           %s (%d iterations)\n", fit.converged ? "yes" : "no",
                fit.iterations);
    std::printf("  model written to    %s\n\n", opt.model_out.c_str());
    auto coeffs = l2d::report_coefficients(model);
    std::sort(coeffs.begin(), coeffs.end(), [](const auto& a, const auto& b) {
        return std::abs(a.second) > std::abs(b.second);
    });
    std::printf("%-20s %9s\n", "feature", "weight");
    for (const auto& [name, weight] : coeffs) {
        std::printf("%-20s %+9.4f\n", name.c_str(), weight);
    }
    return 0;
}

struct EvalOptions {
    std::string dataset, model, labels, format = "table", out;
    std::vector<std::string> policies = {"base", "expert", "fixed", "random", "learned",
                                         "oracle"};
    std::vector<double> theta_grid = {0.6, 0.7, 0.8, 0.9, 0.95};
    l2d::CostModel cost;
    std::uint64_t seed = 42;
};

int cmd_eval(const EvalOptions& opt) {
    l2d::DeferralModel model = l2d::load_model(opt.model);
    auto external = load_label_space_file(opt.labels);
    auto manifest = l2d::load_dataset(
        opt.dataset, external ? external : std::optional<l2d::LabelSpace>(model.label_space));
    if (manifest.label_space != model.label_space) {
        throw std::runtime_error("dataset label space does not match the model's");
    }
    const auto& records = manifest.records;
    l2d::Objective objective = l2d::Objective::for_label_space(model.label_space);

    std::vector<double> scores;
    scores.reserve(records.size());
    std::size_t deferred = 0;
    for (const auto& rec : records) {
        scores.push_back(l2d::score_record(model, rec.text, rec.base_probs));
        if (l2d::defers(scores.back(), model.threshold)) ++deferred;
    }
    double learned_rate = static_cast<double>(deferred) / static_cast<double>(records.size());

    auto wants = [&opt](const char* name) {
        return std::find(opt.policies.begin(), opt.policies.end(), name) != opt.policies.end();
    };
    std::vector<l2d::SystemReport> reports;
    if (wants("base")) {
        reports.push_back(l2d::evaluate_system(records, l2d::NeverPolicy{}, objective, opt.cost));
    }
    if (wants("expert")) {
        reports.push_back(
            l2d::evaluate_system(records, l2d::AlwaysPolicy{}, objective, opt.cost));
    }
    if (wants("fixed")) {
        for (double theta : opt.theta_grid) {
            reports.push_back(l2d::evaluate_system(records, l2d::FixedThresholdPolicy{theta},
                                                   objective, opt.cost));
        }
    }
    if (wants("random")) {
        // matched to the learned policy's rate
        reports.push_back(l2d::evaluate_system(
            records, l2d::RandomPolicy{learned_rate, l2d::sub_seed(opt.seed, "random-baseline")},
            objective, opt.cost));
    }
    if (wants("learned")) {
        reports.push_back(l2d::evaluate_system(
            records, l2d::LearnedPolicy{scores, model.threshold}, objective, opt.cost));
    }
    if (wants("oracle")) {
        reports.push_back(
            l2d::evaluate_system(records, l2d::OraclePolicy{}, objective, opt.cost));
    }

    json out = l2d::reports_to_json(reports);
    write_output(out, opt.out);
    if (opt.format == "json") {
        std::cout << out.dump(2) << '\n';
    } else {
        std::cout << l2d::render_table(reports);
    }
    return 0;
}

struct ConsensusOptions {
    std::string dataset, labels, format = "table", out;
};

int cmd_consensus(const ConsensusOptions& opt) {
    auto pairs = l2d::load_consensus_pairs(opt.dataset, load_label_space_file(opt.labels));
    l2d::ConsensusResult result = l2d::consensus_filter(pairs);
    if (!opt.out.empty()) {
        std::ofstream out(opt.out);
        if (!out) throw std::runtime_error("cannot write output file: " + opt.out);
        for (const auto& kept : result.kept) {
            out << json{{"id", kept.id}, {"label", kept.label}}.dump() << '\n';
        }
    }
    json report{{"total", pairs.size()},
                {"kept", result.kept.size()},
                {"agreement_rate", result.agreement_rate}};
    if (opt.format == "json") {
        std::cout << report.dump(2) << '\n';
    } else {
        std::printf("%zu of %zu pairs agree (agreement rate %.2f%%)\n", result.kept.size(),
                    pairs.size(), 100.0 * result.agreement_rate);
        if (!opt.out.empty()) std::printf("kept records written to %s\n", opt.out.c_str());
    }
    return 0;
}

struct CostOptions {
    std::string format = "table", out, from_report;
    std::vector<double> rates;
    l2d::CostModel cost;
};

int cmd_cost(const CostOptions& opt) {
    std::vector<std::pair<std::string, double>> rows;
    std::vector<double> rates = opt.rates;
    if (rates.empty()) {
        for (int i = 0; i <= 20; ++i) rates.push_back(static_cast<double>(i) / 20.0);
    }
    for (double rate : rates) rows.emplace_back("", rate);
    if (!opt.from_report.empty()) {
        std::ifstream in(opt.from_report);
        if (!in) throw std::runtime_error("cannot open report file: " + opt.from_report);
        json report;
        in >> report;
        for (const auto& row : report) {
            rows.emplace_back(row.at("policy").get<std::string>(),
                              row.at("deferral_rate").get<double>());
        }
    }
    json out = json::array();
    for (const auto& [tag, rate] : rows) {
        json row{{"deferral_rate", rate},
                 {"relative_cost", l2d::cascade_cost(rate, opt.cost)},
                 {"avg_latency_ms", l2d::cascade_latency_ms(rate, opt.cost)}};
        if (!tag.empty()) row["policy"] = tag;
        out.push_back(row);
    }
    write_output(out, opt.out);
    if (opt.format == "json") {
        std::cout << out.dump(2) << '\n';
        return 0;
    }
    std::printf("%-10s  %8s  %8s  %12s\n", "policy", "LLM%", "cost", "latency(ms)");
    for (const auto& row : out) {
        std::string tag = row.contains("policy") ? row.at("policy").get<std::string>() : "-";
        std::printf("%-10s  %7.1f%%  %7.1fx  %12.1f\n", tag.c_str(),
                    100.0 * row.at("deferral_rate").get<double>(),
                    row.at("relative_cost").get<double>(),
                    row.at("avg_latency_ms").get<double>());
    }
    return 0;
}

struct ServeOptions {
    std::string model, listen = "127.0.0.1:8080", expert_url;
    int expert_timeout_ms = 10000;
    int expert_retries = 1;
};

httplib::Server* g_server = nullptr;

extern "C" void handle_shutdown_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const ServeOptions& opt) {
    l2d::DeferralModel model = l2d::load_model(opt.model);

    std::optional<l2d::ExpertClientConfig> expert;
    if (!opt.expert_url.empty()) {
        l2d::ExpertClientConfig config;
        config.endpoint_url = opt.expert_url;
        config.timeout_ms = opt.expert_timeout_ms;
        config.max_retries = opt.expert_retries;
        if (const char* token = std::getenv("L2D_EXPERT_TOKEN")) {
            config.auth_token = std::string(token);
        }
        expert.emplace(std::move(config));
    }
    l2d::RouterApp app(std::move(model), std::move(expert));

    auto colon = opt.listen.rfind(':');
    if (colon == std::string::npos) {
        throw std::runtime_error("listen address must be host:port");
    }
    std::string host = opt.listen.substr(0, colon);
    int port = std::stoi(opt.listen.substr(colon + 1));

    httplib::Server server;
    l2d::register_routes(server, app);
    g_server = &server;
    std::signal(SIGINT, handle_shutdown_signal);
    std::signal(SIGTERM, handle_shutdown_signal);

    std::printf("listening on %s:%d (expert %s)\n", host.c_str(), port,
                app.expert_configured() ? "configured" : "disabled");
    std::fflush(stdout);
    if (!server.listen(host, port)) {
        std::fprintf(stderr, "error: failed to bind %s:%d\n", host.c_str(), port);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learning-to-defer routing toolkit"};
    app.require_subcommand(1);

    TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "train a deferral model and tune its threshold");
    train->add_option("--dataset", train_opt.dataset, "dataset (newline-delimited JSON)")
        ->required();
    train->add_option("--model", train_opt.model_out, "output model path")->required();
    train->add_option("--labels", train_opt.labels, "label space JSON (when no header line)");
    train->add_option("--lexicon", train_opt.lexicon, "lexicon JSON overriding the defaults");
    train->add_option("--mode", train_opt.mode, "kfold (out-of-fold tuning) or single-fit")
        ->check(CLI::IsMember({"kfold", "single-fit"}));
    train->add_option("--k", train_opt.k, "number of folds");
    train->add_option("--c", train_opt.c, "inverse L2 regularization strength");
    train->add_option("--max-iter", train_opt.max_iter, "solver iteration cap");
    train->add_option("--objective", train_opt.objective, "binary-f1 or macro-f1")
        ->check(CLI::IsMember({"binary-f1", "macro-f1"}));
    train->add_option("--seed", train_opt.seed, "master seed");
    train->add_option("--format", train_opt.format, "table or json")
        ->check(CLI::IsMember({"table", "json"}));
    train->add_option("--out", train_opt.out, "write the report JSON here");

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate routing policies on a dataset");
    eval->add_option("--dataset", eval_opt.dataset)->required();
    eval->add_option("--model", eval_opt.model)->required();
    eval->add_option("--labels", eval_opt.labels);
    eval->add_option("--policies", eval_opt.policies,
                     "subset of base,expert,fixed,random,learned,oracle")
        ->delimiter(',');
    eval->add_option("--theta-grid", eval_opt.theta_grid, "fixed-threshold grid")
        ->delimiter(',');
    eval->add_option("--cost-base", eval_opt.cost.base_cost);
    eval->add_option("--cost-expert", eval_opt.cost.expert_cost);
    eval->add_option("--lat-base-ms", eval_opt.cost.base_latency_ms);
    eval->add_option("--lat-expert-ms", eval_opt.cost.expert_latency_ms);
    eval->add_option("--seed", eval_opt.seed);
    eval->add_option("--format", eval_opt.format)->check(CLI::IsMember({"table", "json"}));
    eval->add_option("--out", eval_opt.out);

    ConsensusOptions consensus_opt;
    auto* consensus =
        app.add_subcommand("consensus", "filter annotator pairs to agreed labels");
    consensus->add_option("--dataset", consensus_opt.dataset, "consensus pair file")->required();
    consensus->add_option("--labels", consensus_opt.labels);
    consensus->add_option("--format", consensus_opt.format)
        ->check(CLI::IsMember({"table", "json"}));
    consensus->add_option("--out", consensus_opt.out, "write kept records here");

    CostOptions cost_opt;
    auto* cost = app.add_subcommand("cost", "cost/latency table over deferral rates");
    cost->add_option("--rates", cost_opt.rates, "deferral rates to tabulate")->delimiter(',');
    cost->add_option("--from-report", cost_opt.from_report,
                     "append the rates found in an eval report JSON");
    cost->add_option("--cost-base", cost_opt.cost.base_cost);
    cost->add_option("--cost-expert", cost_opt.cost.expert_cost);
    cost->add_option("--lat-base-ms", cost_opt.cost.base_latency_ms);
    cost->add_option("--lat-expert-ms", cost_opt.cost.expert_latency_ms);
    cost->add_option("--format", cost_opt.format)->check(CLI::IsMember({"table", "json"}));
    cost->add_option("--out", cost_opt.out);

    ServeOptions serve_opt;
    auto* serve = app.add_subcommand("serve", "run the live routing service");
    serve->add_option("--model", serve_opt.model)->envname("L2D_MODEL")->required();
    serve->add_option("--listen", serve_opt.listen, "host:port")->envname("L2D_LISTEN");
    serve->add_option("--expert-url", serve_opt.expert_url, "expert endpoint URL")
        ->envname("L2D_EXPERT_URL");
    serve->add_option("--expert-timeout-ms", serve_opt.expert_timeout_ms)
        ->envname("L2D_EXPERT_TIMEOUT_MS");
    serve->add_option("--expert-retries", serve_opt.expert_retries);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_opt);
        if (eval->parsed()) return cmd_eval(eval_opt);
        if (consensus->parsed()) return cmd_consensus(consensus_opt);
        if (cost->parsed()) return cmd_cost(cost_opt);
        if (serve->parsed()) return cmd_serve(serve_opt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
