#pragma once

// Local chat-completions endpoint for client tests. Replies are scripted;
// once the script runs out every request gets `fallback`.

#include <httplib.h>

#include <chrono>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace empeval::testing {

struct ScriptedReply {
  int status = 200;
  std::string body;
  std::chrono::milliseconds delay{0};
};

inline std::string completion_body(const std::string& text) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

class FakeEndpoint {
 public:
  explicit FakeEndpoint(ScriptedReply fallback = {200, completion_body("Yes"), {}}) : fallback_(std::move(fallback)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ScriptedReply r;
      {
        std::lock_guard lock(mu_);
        requests_.push_back(req.body);
        auth_.push_back(req.get_header_value("Authorization"));
        arrivals_.push_back(std::chrono::steady_clock::now());
        if (script_.empty()) {
          r = responder_ ? responder_(req.body) : fallback_;
        } else {
          r = script_.front();
          script_.pop_front();
        }
      }
      if (r.delay.count() > 0) std::this_thread::sleep_for(r.delay);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void push(ScriptedReply r) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(r));
  }
  /// Computes the reply from the request body when no script is queued.
  void respond_with(std::function<ScriptedReply(const std::string&)> f) {
    std::lock_guard lock(mu_);
    responder_ = std::move(f);
  }
  std::size_t request_count() {
    std::lock_guard lock(mu_);
    return requests_.size();
  }
  std::vector<std::string> requests() {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<std::string> auth_headers() {
    std::lock_guard lock(mu_);
    return auth_;
  }
  std::vector<std::chrono::steady_clock::time_point> arrivals() {
    std::lock_guard lock(mu_);
    return arrivals_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::deque<ScriptedReply> script_;
  ScriptedReply fallback_;
  std::function<ScriptedReply(const std::string&)> responder_;
  std::vector<std::string> requests_, auth_;
  std::vector<std::chrono::steady_clock::time_point> arrivals_;
};

}  // namespace empeval::testing
