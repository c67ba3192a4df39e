#pragma once
// Live routing gateway. Scores each request with the loaded model, defers
// to the remote expert endpoint when the score reaches the threshold, and
// degrades to the base prediction whenever the expert is unreachable — a
// deferred request never hard-fails.
//
// Expert wire contract: POST {"text": ...} to the configured endpoint,
// expecting {"label": ...} where the label is a class name of the model's
// label space.

#include <chrono>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "l2d/deferral.hpp"
#include "l2d/model_io.hpp"

namespace l2d {

struct ExpertUnavailableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadRequestError : std::runtime_error {
    std::string field;
    BadRequestError(std::string field_name, const std::string& message)
        : std::runtime_error(message), field(std::move(field_name)) {}
};

struct RouteRequest {
    std::string text;
    std::vector<double> base_probs;
    std::optional<std::string> request_id;
};

struct RouteResponse {
    std::string prediction;
    std::string source;  // base | expert | base_fallback
    double deferral_score = 0.0;
    double threshold = 1.0;
    double latency_ms = 0.0;
    std::optional<std::string> warning;
    std::optional<std::string> request_id;
};

struct ExpertClientConfig {
    std::string endpoint_url;
    int timeout_ms = 10000;
    std::optional<std::string> auth_token;  // never logged
    int max_retries = 1;
};

class ExpertClient {
public:
    explicit ExpertClient(ExpertClientConfig config) : config_(std::move(config)) {
        if (config_.endpoint_url.empty()) {
            throw std::invalid_argument("expert endpoint URL is empty");
        }
        auto scheme_end = config_.endpoint_url.find("://");
        std::size_t path_start = scheme_end == std::string::npos
                                     ? config_.endpoint_url.find('/')
                                     : config_.endpoint_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            base_url_ = config_.endpoint_url;
            path_ = "/";
        } else {
            base_url_ = config_.endpoint_url.substr(0, path_start);
            path_ = config_.endpoint_url.substr(path_start);
        }
    }

    // Returns the expert's label name, validated against the label space.
    std::string call(const std::string& text, const LabelSpace& labels) const {
        const int attempts = 1 + std::max(0, config_.max_retries);
        std::string last_error = "expert unavailable";
        for (int attempt = 0; attempt < attempts; ++attempt) {
            httplib::Client client(base_url_);
            auto timeout = std::chrono::milliseconds(std::max(1, config_.timeout_ms));
            client.set_connection_timeout(timeout);
            client.set_read_timeout(timeout);
            client.set_write_timeout(timeout);
            httplib::Headers headers;
            if (config_.auth_token) {
                headers.emplace("Authorization", "Bearer " + *config_.auth_token);
            }
            nlohmann::json body{{"text", text}};
            auto res = client.Post(path_, headers, body.dump(), "application/json");
            if (!res) {
                last_error = "expert request failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "expert returned HTTP " + std::to_string(res->status);
                continue;
            }
            try {
                nlohmann::json parsed = nlohmann::json::parse(res->body);
                std::string label = parsed.at("label").get<std::string>();
                if (!labels.index_of(label)) {
                    throw ExpertUnavailableError("expert returned unknown label '" + label + "'");
                }
                return label;
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("unparseable expert response: ") + e.what();
            }
        }
        throw ExpertUnavailableError(last_error);
    }

    const ExpertClientConfig& config() const { return config_; }

private:
    ExpertClientConfig config_;
    std::string base_url_;
    std::string path_;
};

// Holds the immutable model and the expert client; handlers may share one
// instance across threads freely.
class RouterApp {
public:
    RouterApp() = default;
    explicit RouterApp(DeferralModel model,
                       std::optional<ExpertClientConfig> expert = std::nullopt)
        : model_(std::move(model)) {
        if (expert) expert_.emplace(std::move(*expert));
    }

    bool has_model() const { return model_.has_value(); }
    const DeferralModel& model() const { return model_.value(); }
    bool expert_configured() const { return expert_.has_value(); }

    RouteResponse handle_route(const RouteRequest& request) const {
        auto start = std::chrono::steady_clock::now();
        if (!model_) throw std::runtime_error("no model loaded");

        if (request.base_probs.size() != model_->label_space.size()) {
            throw BadRequestError("base_probs",
                                  "expected " + std::to_string(model_->label_space.size()) +
                                      " probabilities, got " +
                                      std::to_string(request.base_probs.size()));
        }
        std::optional<ProbabilityDistribution> probs;
        try {
            probs.emplace(request.base_probs);
        } catch (const std::invalid_argument& e) {
            throw BadRequestError("base_probs", e.what());
        }

        RouteResponse response;
        response.request_id = request.request_id;
        response.threshold = model_->threshold;
        response.deferral_score = score_record(*model_, request.text, *probs);

        ClassIndex base = base_prediction(*probs);
        if (!defers(response.deferral_score, model_->threshold)) {
            response.source = "base";
            response.prediction = model_->label_space.name(base);
        } else if (!expert_) {
            response.source = "base_fallback";
            response.prediction = model_->label_space.name(base);
            response.warning = "expert endpoint not configured";
        } else {
            try {
                response.prediction = expert_->call(request.text, model_->label_space);
                response.source = "expert";
            } catch (const ExpertUnavailableError& e) {
                response.source = "base_fallback";
                response.prediction = model_->label_space.name(base);
                response.warning = e.what();
            }
        }
        auto elapsed = std::chrono::steady_clock::now() - start;
        response.latency_ms =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(elapsed)
                .count();
        return response;
    }

    nlohmann::json health() const {
        nlohmann::json status;
        if (!model_) {
            status["status"] = "degraded";
            status["model_loaded"] = false;
        } else {
            status["status"] = "ok";
            status["model_loaded"] = true;
            status["format_version"] = model_->format_version;
            status["threshold"] = model_->threshold;
            status["label_space"] = model_->label_space.names();
        }
        status["expert_configured"] = expert_.has_value();
        status["defer_disabled"] = !expert_.has_value();
        return status;
    }

private:
    std::optional<DeferralModel> model_;
    std::optional<ExpertClient> expert_;
};

inline nlohmann::json route_response_to_json(const RouteResponse& response) {
    nlohmann::json j{{"prediction", response.prediction},
                     {"source", response.source},
                     {"deferral_score", response.deferral_score},
                     {"threshold", response.threshold},
                     {"latency_ms", response.latency_ms}};
    if (response.warning) j["warning"] = *response.warning;
    if (response.request_id) j["request_id"] = *response.request_id;
    return j;
}

// POST /v1/route and GET /v1/health. The app must outlive the server.
inline void register_routes(httplib::Server& server, const RouterApp& app) {
    server.Post("/v1/route", [&app](const httplib::Request& req, httplib::Response& res) {
        auto fail = [&res](int status, const std::string& field, const std::string& message) {
            res.status = status;
            res.set_content(nlohmann::json{{"error", message}, {"field", field}}.dump(),
                            "application/json");
        };
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            return fail(400, "body", std::string("malformed JSON body: ") + e.what());
        }
        RouteRequest request;
        try {
            if (!body.contains("text")) return fail(400, "text", "missing required field");
            request.text = body.at("text").get<std::string>();
            if (!body.contains("base_probs")) {
                return fail(400, "base_probs", "missing required field");
            }
            request.base_probs = body.at("base_probs").get<std::vector<double>>();
            if (body.contains("request_id") && !body.at("request_id").is_null()) {
                request.request_id = body.at("request_id").get<std::string>();
            }
        } catch (const nlohmann::json::exception& e) {
            return fail(400, "body", std::string("bad field type: ") + e.what());
        }
        try {
            RouteResponse response = app.handle_route(request);
            res.set_content(route_response_to_json(response).dump(), "application/json");
        } catch (const BadRequestError& e) {
            fail(400, e.field, e.what());
        } catch (const std::exception& e) {
            fail(503, "", e.what());
        }
    });
    server.Get("/v1/health", [&app](const httplib::Request&, httplib::Response& res) {
        res.set_content(app.health().dump(), "application/json");
    });
}

}  // namespace l2d
