#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <thread>

#include "l2d/evaluation.hpp"
#include "l2d/service.hpp"
#include "support/mock_expert.hpp"
#include "support/synthetic.hpp"

using namespace l2d;
using Catch::Approx;
using testing_support::MockExpertServer;

namespace {

// A model whose score is constant: sigmoid(intercept) for every input.
DeferralModel constant_score_model(double intercept, double threshold) {
    Lexicon lex;
    FeatureSchema schema = build_schema(lex);
    std::size_t dims = schema.size();
    return DeferralModel{1,
                         schema,
                         Standardizer{std::vector<double>(dims, 0.0),
                                      std::vector<double>(dims, 1.0)},
                         std::vector<double>(dims, 0.0),
                         intercept,
                         threshold,
                         LabelSpace({"NEG", "POS"}, 1),
                         lex};
}

double logit(double p) { return std::log(p / (1.0 - p)); }

ExpertClientConfig expert_config(const std::string& url, int timeout_ms = 2000,
                                 int retries = 0) {
    ExpertClientConfig config;
    config.endpoint_url = url;
    config.timeout_ms = timeout_ms;
    config.max_retries = retries;
    return config;
}

}  // namespace

TEST_CASE("low scores stay with the base prediction") {
    // d(x) = 0.12 < tau = 0.5
    RouterApp app(constant_score_model(logit(0.12), 0.5));
    RouteResponse response =
        app.handle_route(RouteRequest{"Symptoms improved after lisinopril", {0.9, 0.1}, "req1"});
    CHECK(response.source == "base");
    CHECK(response.prediction == "NEG");
    CHECK(response.deferral_score == Approx(0.12));
    CHECK(response.threshold == 0.5);
    CHECK(response.request_id == "req1");
    CHECK(response.latency_ms >= 0.0);
}

TEST_CASE("high scores defer to the expert") {
    // d(x) = 0.73 >= tau = 0.5
    MockExpertServer mock;
    mock.set_fallback_label("POS");
    RouterApp app(constant_score_model(logit(0.73), 0.5), expert_config(mock.url()));
    RouteResponse response =
        app.handle_route(RouteRequest{"Patient reported feeling dizzy", {0.55, 0.45}, {}});
    CHECK(response.source == "expert");
    CHECK(response.prediction == "POS");
    CHECK(response.deferral_score == Approx(0.73));
    CHECK(mock.calls() == 1);
}

TEST_CASE("expert failure degrades to the base prediction") {
    MockExpertServer mock;
    std::string url = mock.url();
    mock.stop();  // nobody listening any more
    RouterApp app(constant_score_model(logit(0.9), 0.5), expert_config(url, 500));
    RouteResponse response = app.handle_route(RouteRequest{"text", {0.2, 0.8}, {}});
    CHECK(response.source == "base_fallback");
    CHECK(response.prediction == "POS");  // argmax of base_probs
    CHECK(response.warning.has_value());
}

TEST_CASE("unconfigured expert means deferral is disabled") {
    RouterApp app(constant_score_model(logit(0.9), 0.5));
    RouteResponse response = app.handle_route(RouteRequest{"text", {0.7, 0.3}, {}});
    CHECK(response.source == "base_fallback");
    CHECK(response.prediction == "NEG");
    REQUIRE(response.warning.has_value());
    CHECK(response.warning->find("not configured") != std::string::npos);
    CHECK(app.health()["defer_disabled"] == true);
}

TEST_CASE("malformed requests fail with a field-level message") {
    RouterApp app(constant_score_model(0.0, 0.5));
    try {
        app.handle_route(RouteRequest{"text", {0.2, 0.3, 0.5}, {}});
        FAIL("expected BadRequestError");
    } catch (const BadRequestError& e) {
        CHECK(e.field == "base_probs");
    }
    try {
        app.handle_route(RouteRequest{"text", {0.9, 0.3}, {}});
        FAIL("expected BadRequestError");
    } catch (const BadRequestError& e) {
        CHECK(e.field == "base_probs");
        CHECK(std::string(e.what()).find("sum") != std::string::npos);
    }
}

TEST_CASE("expert client validates the returned label") {
    MockExpertServer mock;
    mock.set_fallback_label("MAYBE");
    ExpertClient client(expert_config(mock.url()));
    LabelSpace space({"NEG", "POS"}, 1);
    CHECK_THROWS_AS(client.call("text", space), ExpertUnavailableError);

    mock.set_fallback_label("POS");
    CHECK(client.call("text", space) == "POS");

    mock.set_garbage(true);
    CHECK_THROWS_AS(client.call("text", space), ExpertUnavailableError);
}

TEST_CASE("expert client enforces its timeout") {
    MockExpertServer mock;
    mock.set_delay_ms(1500);
    ExpertClient client(expert_config(mock.url(), 300, 0));
    LabelSpace space({"NEG", "POS"}, 1);
    auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(client.call("text", space), ExpertUnavailableError);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    CHECK(elapsed < 1200);  // timeout plus slack, well under the mock delay
    mock.set_delay_ms(0);
}

TEST_CASE("expert client spends its whole retry budget") {
    MockExpertServer mock;
    mock.set_garbage(true);
    ExpertClientConfig config = expert_config(mock.url());
    config.max_retries = 2;
    ExpertClient client(config);
    LabelSpace space({"NEG", "POS"}, 1);
    CHECK_THROWS_AS(client.call("text", space), ExpertUnavailableError);
    CHECK(mock.calls() == 3);  // first attempt plus two retries
}

TEST_CASE("auth token travels as a bearer header") {
    MockExpertServer mock;
    mock.set_fallback_label("NEG");
    auto config = expert_config(mock.url());
    config.auth_token = "sekrit";
    ExpertClient client(config);
    LabelSpace space({"NEG", "POS"}, 1);
    client.call("text", space);
    CHECK(mock.last_auth() == "Bearer sekrit");
}

TEST_CASE("routing is deterministic for identical requests") {
    MockExpertServer mock;
    mock.set_fallback_label("POS");
    RouterApp app(constant_score_model(logit(0.61), 0.6), expert_config(mock.url()));
    RouteRequest request{"same text", {0.5, 0.5}, {}};
    auto first = app.handle_route(request);
    auto second = app.handle_route(request);
    CHECK(first.deferral_score == second.deferral_score);
    CHECK(first.source == second.source);
    CHECK(first.prediction == second.prediction);
}

TEST_CASE("health reports model state") {
    RouterApp empty;
    CHECK(empty.health()["status"] == "degraded");
    CHECK(empty.health()["model_loaded"] == false);
    CHECK_THROWS_AS(empty.handle_route(RouteRequest{"t", {1.0, 0.0}, {}}), std::runtime_error);

    MockExpertServer mock;
    RouterApp app(constant_score_model(0.0, 0.25), expert_config(mock.url()));
    auto health = app.health();
    CHECK(health["status"] == "ok");
    CHECK(health["threshold"] == 0.25);
    CHECK(health["expert_configured"] == true);
    CHECK(health["defer_disabled"] == false);
    CHECK(health["label_space"] == std::vector<std::string>{"NEG", "POS"});
}

TEST_CASE("http round trip") {
    MockExpertServer mock;
    mock.set_fallback_label("POS");
    RouterApp app(constant_score_model(logit(0.8), 0.5), expert_config(mock.url()));
    httplib::Server server;
    register_routes(server, app);
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/v1/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body)["status"] == "ok");

    nlohmann::json body{{"text", "hello"}, {"base_probs", {0.3, 0.7}}, {"request_id", "r9"}};
    auto response = client.Post("/v1/route", body.dump(), "application/json");
    REQUIRE(response);
    CHECK(response->status == 200);
    auto parsed = nlohmann::json::parse(response->body);
    CHECK(parsed["source"] == "expert");
    CHECK(parsed["prediction"] == "POS");
    CHECK(parsed["request_id"] == "r9");

    auto bad = client.Post("/v1/route", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(nlohmann::json::parse(bad->body)["field"] == "body");

    nlohmann::json missing{{"base_probs", {0.3, 0.7}}};
    auto no_text = client.Post("/v1/route", missing.dump(), "application/json");
    REQUIRE(no_text);
    CHECK(no_text->status == 400);
    CHECK(nlohmann::json::parse(no_text->body)["field"] == "text");

    nlohmann::json bad_sum{{"text", "t"}, {"base_probs", {0.9, 0.9}}};
    auto rejected = client.Post("/v1/route", bad_sum.dump(), "application/json");
    REQUIRE(rejected);
    CHECK(rejected->status == 400);
    CHECK(nlohmann::json::parse(rejected->body)["field"] == "base_probs");

    server.stop();
    thread.join();
}

TEST_CASE("concurrent requests do not interleave state") {
    MockExpertServer mock;
    mock.set_fallback_label("POS");
    RouterApp app(constant_score_model(logit(0.7), 0.5), expert_config(mock.url()));
    httplib::Server server;
    register_routes(server, app);
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    std::atomic<int> failures{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([port, &failures] {
            httplib::Client client("127.0.0.1", port);
            for (int i = 0; i < 20; ++i) {
                nlohmann::json body{{"text", "t" + std::to_string(i)},
                                    {"base_probs", {0.4, 0.6}}};
                auto res = client.Post("/v1/route", body.dump(), "application/json");
                if (!res || res->status != 200) {
                    ++failures;
                    continue;
                }
                auto parsed = nlohmann::json::parse(res->body);
                if (parsed["source"] != "expert" || parsed["prediction"] != "POS") ++failures;
            }
        });
    }
    for (auto& worker : workers) worker.join();
    CHECK(failures == 0);
    CHECK(mock.calls() == 80);

    server.stop();
    server_thread.join();
}

TEST_CASE("live decisions match batch routing") {
    auto manifest = synthetic::make_complementarity_dataset(60, 21);
    const auto& records = manifest.records;

    // train a real model on the data so scores vary per record
    auto errors = error_labels_for(records);
    std::vector<FeatureVector> features;
    for (const auto& rec : records) {
        features.push_back(extract_features(rec.text, rec.base_probs, Lexicon{}));
    }
    auto standardizer = fit_standardizer(features);
    std::vector<FeatureVector> standardized;
    for (const auto& fv : features) standardized.push_back(standardizer.apply(fv));
    auto fit = train_error_model(standardized, errors, TrainingConfig{});
    DeferralModel model{1,           build_schema(Lexicon{}), standardizer, fit.weights,
                        fit.intercept, 0.5, manifest.label_space, Lexicon{}};

    MockExpertServer mock;
    for (const auto& rec : records) {
        mock.set_label(rec.text, manifest.label_space.name(*rec.expert_pred));
    }
    RouterApp app(model, expert_config(mock.url()));

    std::vector<double> scores;
    for (const auto& rec : records) {
        scores.push_back(score_record(model, rec.text, rec.base_probs));
    }
    auto mask = deferral_mask(LearnedPolicy{scores, model.threshold}, records);
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto response = app.handle_route(
            RouteRequest{records[i].text, records[i].base_probs.values(), {}});
        CHECK(response.deferral_score == scores[i]);
        ClassIndex expected =
            route(mask[i], base_prediction(records[i].base_probs), records[i].expert_pred);
        CHECK(response.prediction == manifest.label_space.name(expected));
        CHECK(response.source == (mask[i] ? "expert" : "base"));
    }
}
