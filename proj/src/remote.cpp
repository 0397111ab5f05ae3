#include "empeval/remote.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "empeval/util.hpp"

namespace empeval {

using nlohmann::json;

std::string to_string(RemoteErrorKind k) {
  switch (k) {
    case RemoteErrorKind::auth: return "auth";
    case RemoteErrorKind::quota: return "quota";
    case RemoteErrorKind::timeout: return "timeout";
    case RemoteErrorKind::server: return "server";
    case RemoteErrorKind::bad_response: return "bad_response";
    case RemoteErrorKind::client: return "client";
  }
  return "unknown";
}

std::chrono::milliseconds RetryPolicy::delay(std::size_t retry) const {
  const double ms = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, static_cast<double>(retry));
  return std::min(max_backoff, std::chrono::milliseconds(static_cast<long long>(ms)));
}

RateLimiter::RateLimiter(std::size_t max_requests, std::chrono::milliseconds interval)
    : max_requests_(max_requests), interval_(interval) {
  if (max_requests_ == 0) throw ValidationError("rate limit must allow at least one request");
}

void RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    while (!recent_.empty() && now - recent_.front() >= interval_) recent_.pop_front();
    if (recent_.size() < max_requests_) {
      recent_.push_back(now);
      return;
    }
    // sleeping with the lock held keeps waiters in arrival order
    std::this_thread::sleep_until(recent_.front() + interval_);
  }
}

HttpCompletionClient::HttpCompletionClient(RemoteConfig cfg)
    : cfg_(std::move(cfg)), limiter_(cfg_.requests_per_interval, cfg_.rate_interval) {
  if (cfg_.base_url.empty()) throw ValidationError("remote backend needs a base_url");
  desc_.name = "remote:" + cfg_.base_url;
  desc_.generates = true;
  desc_.remote = true;
  desc_.token_budget = cfg_.token_budget;
}

void HttpCompletionClient::log_attempt(const std::string& prompt_hash, std::size_t attempt, double latency_ms,
                                       int status, const std::string& outcome) {
  if (!cfg_.request_log) return;
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  const json rec = {{"timestamp", ts.str()},   {"prompt_sha256", prompt_hash}, {"attempt", attempt},
                    {"latency_ms", latency_ms}, {"status", status},            {"outcome", outcome}};
  std::lock_guard lock(log_mu_);
  if (cfg_.request_log->has_parent_path()) std::filesystem::create_directories(cfg_.request_log->parent_path());
  std::ofstream out(*cfg_.request_log, std::ios::app);
  out << rec.dump() << '\n';
}

std::string HttpCompletionClient::complete(const std::string& prompt, const CompletionParams& params) {
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (!key || !*key) throw RemoteError(RemoteErrorKind::auth, "environment variable " + cfg_.api_key_env + " is not set");

  const std::string hash = sha256_hex(prompt);
  const json body = {{"model", params.model},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", params.temperature},
                     {"max_tokens", params.max_tokens}};
  const std::string payload = body.dump();
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);

  std::string last_problem;
  RemoteErrorKind last_kind = RemoteErrorKind::timeout;
  int last_status = 0;
  for (std::size_t attempt = 0; attempt <= cfg_.retry.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg_.retry.delay(attempt - 1));
    limiter_.acquire();

    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(cfg_.path, headers, payload, "application/json");
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    if (!res) {
      last_kind = RemoteErrorKind::timeout;
      last_status = 0;
      last_problem = "transport error: " + httplib::to_string(res.error());
      log_attempt(hash, attempt, latency, 0, attempt < cfg_.retry.max_retries ? "retry" : "timeout");
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      log_attempt(hash, attempt, latency, status, "auth_error");
      throw RemoteError(RemoteErrorKind::auth, "endpoint rejected the credentials (HTTP " + std::to_string(status) + ")",
                        status);
    }
    if (status == 429 && res->body.find("insufficient_quota") != std::string::npos) {
      log_attempt(hash, attempt, latency, status, "quota_error");
      throw RemoteError(RemoteErrorKind::quota, "quota exhausted", status);
    }
    if (status == 429 || status >= 500) {
      last_kind = RemoteErrorKind::server;
      last_status = status;
      last_problem = "HTTP " + std::to_string(status);
      log_attempt(hash, attempt, latency, status, attempt < cfg_.retry.max_retries ? "retry" : "server_error");
      continue;
    }
    if (status < 200 || status >= 300) {
      log_attempt(hash, attempt, latency, status, "client_error");
      throw RemoteError(RemoteErrorKind::client, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200),
                        status);
    }
    try {
      const auto j = json::parse(res->body);
      const auto& choice = j.at("choices").at(0);
      std::string text;
      if (choice.contains("message")) text = choice.at("message").at("content").get<std::string>();
      else text = choice.at("text").get<std::string>();
      log_attempt(hash, attempt, latency, status, "ok");
      return text;
    } catch (const json::exception& e) {
      log_attempt(hash, attempt, latency, status, "bad_response");
      throw RemoteError(RemoteErrorKind::bad_response, std::string("unexpected completion body: ") + e.what(), status);
    }
  }
  throw RemoteError(last_kind,
                    last_problem + " after " + std::to_string(cfg_.retry.max_retries + 1) + " attempts", last_status);
}

}  // namespace empeval
