#pragma once
// A real HTTP mock of the expert endpoint: answers POST {"text": ...} with
// {"label": ...} from a text -> label table, with optional delay and
// garbage responses for failure-path tests.

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace testing_support {

class MockExpertServer {
public:
    MockExpertServer() {
        server_.Post("/expert", [this](const httplib::Request& req, httplib::Response& res) {
            ++calls_;
            {
                std::lock_guard<std::mutex> lock(mutex_);
                last_auth_ = req.get_header_value("Authorization");
            }
            if (delay_ms_ > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_.load()));
            }
            if (garbage_) {
                res.set_content("not json at all", "text/plain");
                return;
            }
            std::string label;
            try {
                auto body = nlohmann::json::parse(req.body);
                std::string text = body.at("text").get<std::string>();
                std::lock_guard<std::mutex> lock(mutex_);
                auto it = labels_by_text_.find(text);
                label = it == labels_by_text_.end() ? fallback_label_ : it->second;
            } catch (...) {
                res.status = 400;
                return;
            }
            res.set_content(nlohmann::json{{"label", label}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockExpertServer() { stop(); }

    void stop() {
        if (!stopped_.exchange(true)) {
            server_.stop();
            thread_.join();
        }
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/expert"; }
    int port() const { return port_; }

    void set_label(const std::string& text, const std::string& label) {
        std::lock_guard<std::mutex> lock(mutex_);
        labels_by_text_[text] = label;
    }
    void set_fallback_label(const std::string& label) {
        std::lock_guard<std::mutex> lock(mutex_);
        fallback_label_ = label;
    }
    void set_delay_ms(int ms) { delay_ms_ = ms; }
    void set_garbage(bool garbage) { garbage_ = garbage; }
    int calls() const { return calls_.load(); }
    std::string last_auth() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return last_auth_;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<bool> stopped_{false};
    std::atomic<int> calls_{0};
    std::atomic<int> delay_ms_{0};
    std::atomic<bool> garbage_{false};
    mutable std::mutex mutex_;
    std::map<std::string, std::string> labels_by_text_;
    std::string fallback_label_ = "NEG";
    std::string last_auth_;
};

}  // namespace testing_support
