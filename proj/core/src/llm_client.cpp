#include "ftr/llm_client.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "format.hpp"
#include "ftr/error.hpp"
#include "rng.hpp"

namespace ftr {

namespace {

std::size_t estimate(std::string_view text) { return (text.size() + 3) / 4; }

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

void GenRequest::validate() const {
  if (!(temperature >= 0.0)) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  if (max_output_tokens < 1) throw Error(ErrorCode::ConfigError, "max_output_tokens must be >= 1");
}

// ---------------------------------------------------------------------------
// Ledger

void CostLedger::record(const GenResult& r) {
  total_calls_.fetch_add(1, std::memory_order_relaxed);
  if (r.cached) {
    cached_hits_.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  prompt_tokens_.fetch_add(r.prompt_tokens, std::memory_order_relaxed);
  completion_tokens_.fetch_add(r.completion_tokens, std::memory_order_relaxed);
  wall_ms_.fetch_add(static_cast<std::uint64_t>(std::max<std::int64_t>(0, r.latency_ms)),
                     std::memory_order_relaxed);
}

void CostLedger::record_failure() {
  total_calls_.fetch_add(1, std::memory_order_relaxed);
  failures_.fetch_add(1, std::memory_order_relaxed);
}

LedgerSnapshot CostLedger::snapshot() const {
  LedgerSnapshot s;
  s.total_calls = total_calls_.load();
  s.cached_hits = cached_hits_.load();
  s.failures = failures_.load();
  s.total_prompt_tokens = prompt_tokens_.load();
  s.total_completion_tokens = completion_tokens_.load();
  s.wall_ms = wall_ms_.load();
  return s;
}

// ---------------------------------------------------------------------------
// HTTP

HttpConfig HttpConfig::from_env() {
  HttpConfig c;
  c.endpoint = env_or_empty("LLM_ENDPOINT");
  c.api_key = env_or_empty("LLM_API_KEY");
  return c;
}

HttpBackend::HttpBackend(HttpConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw Error(ErrorCode::ConfigError, "no LLM endpoint configured (LLM_ENDPOINT)");
  const auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "endpoint '" + cfg_.endpoint + "' lacks a scheme");
  }
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  scheme_host_ = cfg_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "" : cfg_.endpoint.substr(path_start);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
  const std::string suffix = "/chat/completions";
  if (path_.size() < suffix.size() || path_.compare(path_.size() - suffix.size(), suffix.size(), suffix) != 0) {
    path_ += suffix;
  }
}

std::string HttpBackend::request_body(const GenRequest& req) {
  nlohmann::ordered_json j;
  j["model"] = req.model_id;
  j["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", req.prompt}}});
  j["temperature"] = req.temperature;
  j["max_tokens"] = req.max_output_tokens;
  if (!req.stop.empty()) j["stop"] = req.stop;
  return j.dump();
}

GenResult HttpBackend::parse_response(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    GenResult r;
    const auto& msg = j.at("choices").at(0).at("message");
    r.text = msg.at("content").is_null() ? "" : msg.at("content").get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
      r.prompt_tokens = j["usage"].value("prompt_tokens", 0u);
      r.completion_tokens = j["usage"].value("completion_tokens", 0u);
    } else {
      r.tokens_estimated = true;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::EndpointUnreachable, std::string("unexpected response shape: ") + e.what());
  }
}

GenResult HttpBackend::complete(const GenRequest& req) {
  httplib::Client cli(scheme_host_);
  cli.set_connection_timeout(cfg_.timeout_s);
  cli.set_read_timeout(cfg_.timeout_s);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  const std::string body = request_body(req);

  int delay = cfg_.backoff_ms;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay = std::min(delay * 2, cfg_.max_backoff_ms);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto res = cli.Post(path_, headers, body, "application/json");
    const auto t1 = std::chrono::steady_clock::now();
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status == 200) {
      auto r = parse_response(res->body);
      r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
      if (r.tokens_estimated) {
        r.prompt_tokens = estimate(req.prompt);
        r.completion_tokens = estimate(r.text);
      }
      return r;
    }
    if (status == 401 || status == 403) {
      throw Error(ErrorCode::AuthFailure, "endpoint returned HTTP " + std::to_string(status));
    }
    if (status == 400 || status == 413) {
      const bool context = res->body.find("context_length") != std::string::npos ||
                           res->body.find("maximum context") != std::string::npos || status == 413;
      if (context) throw Error(ErrorCode::ContextTooLong, "prompt exceeds the model context");
      throw Error(ErrorCode::EndpointUnreachable, "endpoint rejected the request: HTTP 400");
    }
    last_error = "HTTP " + std::to_string(status);
    if (status != 408 && status != 429 && status < 500) break;
  }
  throw Error(ErrorCode::EndpointUnreachable, last_error + " after " + std::to_string(cfg_.max_retries) + " retries");
}

// ---------------------------------------------------------------------------
// Mock

MockPolicy MockPolicy::oracle(std::map<std::string, std::string> gold) {
  MockPolicy p;
  p.kind = Kind::Oracle;
  p.gold = std::move(gold);
  return p;
}

MockPolicy MockPolicy::first_choice() { return {}; }

MockPolicy MockPolicy::fixed_text(std::string text) {
  MockPolicy p;
  p.kind = Kind::FixedText;
  p.text = std::move(text);
  return p;
}

MockPolicy MockPolicy::noisy(std::map<std::string, std::string> gold, double prob, std::uint64_t seed) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw Error(ErrorCode::ConfigError, "noisy mock needs p in [0,1]");
  MockPolicy p;
  p.kind = Kind::Noisy;
  p.gold = std::move(gold);
  p.p = prob;
  p.seed = seed;
  return p;
}

MockPolicy MockPolicy::scripted(std::map<std::string, std::string> script, std::string fallback) {
  MockPolicy p;
  p.kind = Kind::Scripted;
  p.script = std::move(script);
  p.text = std::move(fallback);
  return p;
}

MockBackend::MockBackend(MockPolicy policy) : policy_(std::move(policy)) {}

char MockBackend::oracle_letter(const GenRequest& req) const {
  const auto& choices = req.hint.choice_map;
  if (choices.empty()) return 'a';
  auto it = policy_.gold.find(req.hint.sample_id);
  const std::string gold = it == policy_.gold.end() ? std::string("None") : it->second;
  for (const auto& [letter, label] : choices) {
    if (label == gold) return letter;
  }
  for (const auto& [letter, label] : choices) {
    if (label == "None") return letter;
  }
  return choices.front().first;
}

GenResult MockBackend::complete(const GenRequest& req) {
  GenResult r;
  switch (policy_.kind) {
    case MockPolicy::Kind::FirstChoice:
      r.text = "Answer: (a)";
      break;
    case MockPolicy::Kind::FixedText:
      r.text = policy_.text;
      break;
    case MockPolicy::Kind::Oracle:
      r.text = std::string("Answer: (") + oracle_letter(req) + ")";
      break;
    case MockPolicy::Kind::Noisy: {
      const char right = oracle_letter(req);
      detail::Rng rng(detail::derive_seed(policy_.seed, req.prompt));
      char pick = right;
      std::vector<char> wrong;
      for (const auto& [letter, label] : req.hint.choice_map) {
        if (letter != right) wrong.push_back(letter);
      }
      if (detail::uniform_unit(rng) >= policy_.p && !wrong.empty()) {
        pick = wrong[detail::uniform_index(rng, wrong.size())];
      }
      r.text = std::string("Answer: (") + pick + ")";
      break;
    }
    case MockPolicy::Kind::Scripted: {
      auto it = policy_.script.find(req.hint.sample_id);
      r.text = it == policy_.script.end() ? policy_.text : it->second;
      break;
    }
  }
  r.prompt_tokens = estimate(req.prompt);
  r.completion_tokens = estimate(r.text);
  r.tokens_estimated = true;
  r.latency_ms = policy_.latency_ms;
  return r;
}

// ---------------------------------------------------------------------------
// Cache

std::string cache_key(const GenRequest& req) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  j.push_back(req.model_id);
  j.push_back(req.prompt);
  j.push_back(detail::format_double(req.temperature));
  j.push_back(req.max_output_tokens);
  j.push_back(req.stop);
  const std::string material = j.dump();

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(material.data(), material.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

namespace {

nlohmann::ordered_json cache_header() {
  return {{"format", "ftr-llm-cache"}, {"version", ResponseCache::kVersion}};
}

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  bool need_header = true;
  if (std::filesystem::exists(*path_)) {
    std::ifstream in(*path_);
    if (!in) throw Error(ErrorCode::IoError, "cannot read cache " + path_->string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    for (const auto& l : lines) {
      ++line_no;
      if (l.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(l);
      } catch (const nlohmann::json::exception&) {
        // A torn final line from an interrupted append is dropped.
        if (line_no == lines.size()) break;
        throw Error(ErrorCode::MalformedRecord, path_->string() + " line " + std::to_string(line_no));
      }
      if (line_no == 1) {
        if (j.value("format", "") != "ftr-llm-cache" || j.value("version", 0) != kVersion) {
          throw Error(ErrorCode::MalformedRecord, path_->string() + ": unsupported cache header");
        }
        need_header = false;
        continue;
      }
      GenResult r;
      r.text = j.at("text").get<std::string>();
      r.prompt_tokens = j.value("prompt_tokens", 0u);
      r.completion_tokens = j.value("completion_tokens", 0u);
      r.tokens_estimated = j.value("tokens_estimated", false);
      r.latency_ms = j.value("latency_ms", 0);
      entries_[j.at("key").get<std::string>()] = std::move(r);
    }
  } else if (path_->has_parent_path()) {
    std::filesystem::create_directories(path_->parent_path());
  }
  file_.open(*path_, std::ios::app | std::ios::binary);
  if (!file_) throw Error(ErrorCode::IoError, "cannot append to cache " + path_->string());
  if (need_header) {
    file_ << cache_header().dump() << '\n';
    file_.flush();
  }
}

std::optional<GenResult> ResponseCache::lookup(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::store(const std::string& key, const GenRequest& req, const GenResult& result) {
  {
    std::unique_lock lock(mu_);
    entries_[key] = result;
  }
  if (!path_) return;
  nlohmann::ordered_json j;
  j["key"] = key;
  j["model_id"] = req.model_id;
  j["text"] = result.text;
  j["prompt_tokens"] = result.prompt_tokens;
  j["completion_tokens"] = result.completion_tokens;
  j["tokens_estimated"] = result.tokens_estimated;
  j["latency_ms"] = result.latency_ms;
  const std::string line = j.dump() + "\n";
  std::lock_guard lock(file_mu_);
  file_.write(line.data(), static_cast<std::streamsize>(line.size()));
  file_.flush();
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Rate limiting

RateLimiter::RateLimiter(double rpm, double burst) : rpm_(rpm), burst_(std::max(1.0, burst)), tokens_(burst_) {}

RateLimiter::Clock::duration RateLimiter::reserve(Clock::time_point now) {
  if (rpm_ <= 0.0) return Clock::duration::zero();
  std::lock_guard lock(mu_);
  const double per_second = rpm_ / 60.0;
  if (last_) {
    const double elapsed = std::chrono::duration<double>(now - *last_).count();
    if (elapsed > 0) tokens_ = std::min(burst_, tokens_ + elapsed * per_second);
  }
  if (!last_ || now > *last_) last_ = now;
  tokens_ -= 1.0;
  if (tokens_ >= 0.0) return Clock::duration::zero();
  // Debt is paid off by waiting; the bucket stays negative until then.
  return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(-tokens_ / per_second));
}

void RateLimiter::acquire() {
  const auto wait = reserve(Clock::now());
  if (wait > Clock::duration::zero()) std::this_thread::sleep_for(wait);
}

// ---------------------------------------------------------------------------
// Client

LlmClient::LlmClient(std::shared_ptr<Backend> backend, ClientConfig cfg)
    : backend_(std::move(backend)),
      cfg_(std::move(cfg)),
      cache_(cfg_.cache_path ? ResponseCache(*cfg_.cache_path) : ResponseCache()),
      limiter_(cfg_.rate_limit_rpm),
      free_slots_(std::max(1, cfg_.max_parallel)) {
  if (!backend_) throw Error(ErrorCode::ConfigError, "LLM client without a backend");
}

GenResult LlmClient::generate(const GenRequest& req) {
  req.validate();
  const std::string key = cache_key(req);

  auto hit = [&](GenResult r) {
    r.cached = true;
    r.latency_ms = 0;
    ledger_.record(r);
    return r;
  };
  if (auto r = cache_.lookup(key)) return hit(std::move(*r));

  std::promise<GenResult> promise;
  {
    std::unique_lock lock(inflight_mu_);
    if (auto r = cache_.lookup(key)) {
      lock.unlock();
      return hit(std::move(*r));
    }
    auto it = inflight_.find(key);
    if (it != inflight_.end()) {
      auto fut = it->second;
      lock.unlock();
      try {
        return hit(fut.get());
      } catch (...) {
        ledger_.record_failure();
        throw;
      }
    }
    inflight_.emplace(key, promise.get_future().share());
  }

  auto finish = [&] {
    std::lock_guard lock(inflight_mu_);
    inflight_.erase(key);
  };
  try {
    {
      std::unique_lock lock(slots_mu_);
      slots_cv_.wait(lock, [&] { return free_slots_ > 0; });
      --free_slots_;
    }
    GenResult r;
    try {
      limiter_.acquire();
      r = backend_->complete(req);
    } catch (...) {
      {
        std::lock_guard lock(slots_mu_);
        ++free_slots_;
      }
      slots_cv_.notify_one();
      throw;
    }
    {
      std::lock_guard lock(slots_mu_);
      ++free_slots_;
    }
    slots_cv_.notify_one();
    r.cached = false;
    cache_.store(key, req, r);
    finish();
    promise.set_value(r);
    ledger_.record(r);
    return r;
  } catch (...) {
    finish();
    promise.set_exception(std::current_exception());
    ledger_.record_failure();
    throw;
  }
}

}  // namespace ftr
