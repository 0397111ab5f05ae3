#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include "empeval/backends.hpp"
#include "empeval/error.hpp"

namespace empeval {

enum class RemoteErrorKind {
  auth,          // 401/403 or missing credentials
  quota,         // 429 with insufficient_quota
  timeout,       // transport failures until retries ran out
  server,        // 5xx or rate-limit 429 until retries ran out
  bad_response,  // 2xx whose body is not a completion
  client,        // other 4xx
};

std::string to_string(RemoteErrorKind k);

class RemoteError : public Error {
 public:
  RemoteError(RemoteErrorKind kind, const std::string& what, int status = 0)
      : Error(to_string(kind) + ": " + what), kind_(kind), status_(status) {}
  RemoteErrorKind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }

 private:
  RemoteErrorKind kind_;
  int status_;
};

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};

  std::chrono::milliseconds delay(std::size_t retry) const;  // retry is 0-based
};

/// At most `max_requests` acquisitions in any window of length `interval`.
/// Blocks the caller until a slot frees up; safe to share between threads.
class RateLimiter {
 public:
  RateLimiter(std::size_t max_requests, std::chrono::milliseconds interval);
  void acquire();

 private:
  std::size_t max_requests_;
  std::chrono::milliseconds interval_;
  std::mutex mu_;
  std::deque<std::chrono::steady_clock::time_point> recent_;
};

struct RemoteConfig {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "EMPEVAL_API_KEY";
  RetryPolicy retry;
  std::size_t requests_per_interval = 60;
  std::chrono::milliseconds rate_interval{60000};
  std::chrono::milliseconds timeout{30000};
  std::optional<std::filesystem::path> request_log;  // JSONL, appended
  std::size_t token_budget = 8192;
};

/// Chat-completions style JSON client. Each attempt goes through the rate
/// limiter and is logged with timestamp, prompt hash, latency and outcome.
class HttpCompletionClient final : public CompletionBackend {
 public:
  explicit HttpCompletionClient(RemoteConfig cfg);

  const BackendDescriptor& descriptor() const override { return desc_; }
  std::string complete(const std::string& prompt, const CompletionParams& params) override;

  const RemoteConfig& config() const noexcept { return cfg_; }

 private:
  void log_attempt(const std::string& prompt_hash, std::size_t attempt, double latency_ms, int status,
                   const std::string& outcome);

  RemoteConfig cfg_;
  BackendDescriptor desc_;
  RateLimiter limiter_;
  std::mutex log_mu_;
};

}  // namespace empeval
