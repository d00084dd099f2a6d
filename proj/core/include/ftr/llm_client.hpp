#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ftr {

struct GenRequest {
  std::string prompt;
  int max_output_tokens = 256;
  double temperature = 0.0;
  std::vector<std::string> stop;
  std::string model_id;

  // Side channel for test doubles. Never sent over the wire, never part of
  // the cache key.
  struct Hint {
    std::string sample_id;
    std::vector<std::pair<char, std::string>> choice_map;
  } hint;

  void validate() const;
};

struct GenResult {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  bool tokens_estimated = false;
  std::int64_t latency_ms = 0;
  bool cached = false;
};

struct LedgerSnapshot {
  std::uint64_t total_calls = 0;
  std::uint64_t cached_hits = 0;
  std::uint64_t failures = 0;
  std::uint64_t total_prompt_tokens = 0;
  std::uint64_t total_completion_tokens = 0;
  std::uint64_t wall_ms = 0;

  // Calls that reached the backend.
  std::uint64_t network_calls() const { return total_calls - cached_hits; }
};

class CostLedger {
 public:
  void record(const GenResult& r);
  void record_failure();
  LedgerSnapshot snapshot() const;

 private:
  std::atomic<std::uint64_t> total_calls_{0};
  std::atomic<std::uint64_t> cached_hits_{0};
  std::atomic<std::uint64_t> failures_{0};
  std::atomic<std::uint64_t> prompt_tokens_{0};
  std::atomic<std::uint64_t> completion_tokens_{0};
  std::atomic<std::uint64_t> wall_ms_{0};
};

// Raw generation without caching or accounting. Implementations throw
// ftr::Error with EndpointUnreachable, ContextTooLong or AuthFailure.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenResult complete(const GenRequest& req) = 0;
};

struct HttpConfig {
  std::string endpoint;  // base URL, or full .../chat/completions URL
  std::string api_key;
  int timeout_s = 60;
  int max_retries = 4;
  int backoff_ms = 500;       // first retry delay, doubled each time
  int max_backoff_ms = 8000;

  // LLM_ENDPOINT and LLM_API_KEY.
  static HttpConfig from_env();
};

// OpenAI-compatible chat completions, one user message per request.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig cfg);
  GenResult complete(const GenRequest& req) override;

  // Request body exactly as sent.
  static std::string request_body(const GenRequest& req);
  // Extracts text and usage; throws EndpointUnreachable on unexpected shapes.
  static GenResult parse_response(const std::string& body);

 private:
  HttpConfig cfg_;
  std::string scheme_host_;
  std::string path_;
};

struct MockPolicy {
  enum class Kind { Oracle, FirstChoice, FixedText, Noisy, Scripted };
  Kind kind = Kind::FirstChoice;
  std::map<std::string, std::string> gold;  // sample_id -> label (Oracle, Noisy)
  std::string text;                         // FixedText; Scripted fallback
  double p = 1.0;                           // Noisy
  std::uint64_t seed = 0;                   // Noisy
  std::map<std::string, std::string> script;  // sample_id -> reply (Scripted)
  std::int64_t latency_ms = 0;                // reported per call, not slept

  static MockPolicy oracle(std::map<std::string, std::string> gold);
  static MockPolicy first_choice();
  static MockPolicy fixed_text(std::string text);
  static MockPolicy noisy(std::map<std::string, std::string> gold, double p, std::uint64_t seed);
  static MockPolicy scripted(std::map<std::string, std::string> script, std::string fallback);
};

// Deterministic test double; replies use the "Answer: (x)" surface form.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockPolicy policy);
  GenResult complete(const GenRequest& req) override;

 private:
  char oracle_letter(const GenRequest& req) const;
  MockPolicy policy_;
};

// SHA-256 over (model_id, prompt, temperature, max_output_tokens, stop), hex.
std::string cache_key(const GenRequest& req);

// Append-only JSONL file; first line is a version header.
class ResponseCache {
 public:
  static constexpr int kVersion = 1;

  ResponseCache() = default;  // memory only
  explicit ResponseCache(std::filesystem::path path);

  std::optional<GenResult> lookup(const std::string& key) const;
  void store(const std::string& key, const GenRequest& req, const GenResult& result);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, GenResult> entries_;
  std::mutex file_mu_;
  std::ofstream file_;
};

// Token bucket on requests per minute; rpm <= 0 disables it.
class RateLimiter {
 public:
  using Clock = std::chrono::steady_clock;

  explicit RateLimiter(double rpm, double burst = 1.0);

  // Takes a token at `now` and returns how long the caller must wait first.
  Clock::duration reserve(Clock::time_point now);
  void acquire();

 private:
  double rpm_;
  double burst_;
  double tokens_;
  std::optional<Clock::time_point> last_;
  std::mutex mu_;
};

struct ClientConfig {
  std::optional<std::filesystem::path> cache_path;
  double rate_limit_rpm = 20.0;
  int max_parallel = 4;
};

// Shareable across threads.
class LlmClient {
 public:
  LlmClient(std::shared_ptr<Backend> backend, ClientConfig cfg = {});

  GenResult generate(const GenRequest& req);

  const CostLedger& ledger() const noexcept { return ledger_; }
  CostLedger& ledger() noexcept { return ledger_; }
  const ClientConfig& config() const noexcept { return cfg_; }

 private:
  std::shared_ptr<Backend> backend_;
  ClientConfig cfg_;
  ResponseCache cache_;
  RateLimiter limiter_;
  CostLedger ledger_;

  std::mutex slots_mu_;
  std::condition_variable slots_cv_;
  int free_slots_;

  std::mutex inflight_mu_;
  std::unordered_map<std::string, std::shared_future<GenResult>> inflight_;
};

}  // namespace ftr
