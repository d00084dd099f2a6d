#include "ftr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "format.hpp"
#include "ftr/error.hpp"
#include "json_util.hpp"
#include "rng.hpp"

namespace ftr {

using detail::ojson;
namespace fs = std::filesystem;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::IclBaseline: return "icl_baseline";
    case Mode::FilterOnly: return "filter_only";
    case Mode::FilterThenRerank: return "filter_then_rerank";
    case Mode::SlmRerankBaseline: return "slm_rerank_baseline";
  }
  return "filter_then_rerank";
}

Mode parse_mode(std::string_view s) {
  for (auto m : {Mode::IclBaseline, Mode::FilterOnly, Mode::FilterThenRerank, Mode::SlmRerankBaseline}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(DemoStrategy s) { return s == DemoStrategy::Random ? "random" : "embedding"; }

DemoStrategy parse_demo_strategy(std::string_view s) {
  if (s == "random") return DemoStrategy::Random;
  if (s == "embedding") return DemoStrategy::Embedding;
  throw Error(ErrorCode::ConfigError, "unknown demo strategy '" + std::string(s) + "'");
}

void RunConfig::validate() const {
  router.validate();
  if (demo_count < 0) throw Error(ErrorCode::ConfigError, "demo_count must be >= 0");
  if (instruction_variant.size() != 2 || instruction_variant[0] != 'I' || instruction_variant[1] < '0' ||
      instruction_variant[1] > '5') {
    throw Error(ErrorCode::BadVariant, "instruction variant '" + instruction_variant + "'");
  }
  if (llm.backend != "http" && llm.backend != "mock") {
    throw Error(ErrorCode::ConfigError, "llm.backend must be 'http' or 'mock'");
  }
  static const std::set<std::string> policies{"oracle", "first_choice", "fixed_text", "noisy"};
  if (!policies.count(llm.mock.policy)) {
    throw Error(ErrorCode::ConfigError, "unknown mock policy '" + llm.mock.policy + "'");
  }
  if (!(llm.mock.p >= 0.0 && llm.mock.p <= 1.0)) throw Error(ErrorCode::ConfigError, "mock.p must lie in [0,1]");
  if (llm.max_parallel < 1) throw Error(ErrorCode::ConfigError, "max_parallel must be >= 1");
  if (llm.max_output_tokens < 1) throw Error(ErrorCode::ConfigError, "max_output_tokens must be >= 1");
  if (!(llm.temperature >= 0.0)) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  if (llm.max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
}

// ---------------------------------------------------------------------------
// Config

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

std::string interpolate_env(std::string_view text, const EnvLookup& env) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
      const auto close = text.find('}', i + 2);
      if (close == std::string_view::npos) throw Error(ErrorCode::ConfigError, "unterminated ${ in config");
      const std::string_view expr = text.substr(i + 2, close - i - 2);
      std::string name(expr);
      std::optional<std::string> fallback;
      if (const auto sep = expr.find(":-"); sep != std::string_view::npos) {
        name = std::string(expr.substr(0, sep));
        fallback = std::string(expr.substr(sep + 2));
      }
      auto value = env(name);
      if (value && !value->empty()) {
        out += *value;
      } else if (fallback) {
        out += *fallback;
      } else if (value) {
        out += *value;
      } else {
        throw Error(ErrorCode::ConfigError, "environment variable " + name + " is not set");
      }
      i = close + 1;
    } else {
      out += text[i++];
    }
  }
  return out;
}

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in " + where);
  }
}

void interpolate_all(nlohmann::json& j, const EnvLookup& env) {
  if (j.is_string()) {
    j = interpolate_env(j.get<std::string>(), env);
  } else if (j.is_structured()) {
    for (auto& child : j) interpolate_all(child, env);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ConfigError, std::string("bad value for '") + key + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path.lexically_normal() : (base / path).lexically_normal();
}

void read_path(const nlohmann::json& j, const char* key, const fs::path& base, fs::path& out) {
  std::string s;
  read(j, key, s);
  if (j.contains(key)) out = resolve(base, s);
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text, const fs::path& base_dir, const EnvLookup& env) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  interpolate_all(j, env);
  check_keys(j, {"mode", "seed", "paths", "router", "ablations", "demos", "prompt", "report", "llm"}, "config");

  RunConfig c;
  std::string s;
  if (j.contains("mode")) {
    read(j, "mode", s);
    c.mode = parse_mode(s);
  }
  read(j, "seed", c.seed);

  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"schema", "test", "scores", "rerank_scores", "templates", "demos", "embeddings", "train",
                   "valid", "valid_scores", "cache", "out_dir"},
               "paths");
    read_path(p, "schema", base_dir, c.paths.schema);
    read_path(p, "test", base_dir, c.paths.test);
    if (p.contains("scores")) {
      if (p["scores"].is_string()) {
        c.paths.scores.push_back(resolve(base_dir, p["scores"].get<std::string>()));
      } else {
        std::vector<std::string> list;
        read(p, "scores", list);
        for (const auto& x : list) c.paths.scores.push_back(resolve(base_dir, x));
      }
    }
    read_path(p, "rerank_scores", base_dir, c.paths.rerank_scores);
    read_path(p, "templates", base_dir, c.paths.templates);
    read_path(p, "demos", base_dir, c.paths.demos);
    read_path(p, "embeddings", base_dir, c.paths.embeddings);
    read_path(p, "train", base_dir, c.paths.train);
    read_path(p, "valid", base_dir, c.paths.valid);
    read_path(p, "valid_scores", base_dir, c.paths.valid_scores);
    read_path(p, "cache", base_dir, c.paths.cache);
    read_path(p, "out_dir", base_dir, c.paths.out_dir);
  }
  if (j.contains("router")) {
    const auto& r = j["router"];
    check_keys(r, {"tau", "top_n", "inject_none", "grid", "tune", "tune_oracle"}, "router");
    read(r, "tau", c.router.tau);
    read(r, "top_n", c.router.top_n);
    read(r, "inject_none", c.router.inject_none);
    read(r, "grid", c.router.grid);
    read(r, "tune", c.tune);
    read(r, "tune_oracle", c.tune_oracle);
  }
  if (j.contains("ablations")) {
    const auto& a = j["ablations"];
    check_keys(a, {"cot", "demo", "label_filter", "adaptive"}, "ablations");
    read(a, "cot", c.ablations.cot);
    read(a, "demo", c.ablations.demo);
    read(a, "label_filter", c.ablations.label_filter);
    read(a, "adaptive", c.ablations.adaptive);
  }
  if (j.contains("demos")) {
    const auto& d = j["demos"];
    check_keys(d, {"count", "strategy"}, "demos");
    read(d, "count", c.demo_count);
    if (d.contains("strategy")) {
      read(d, "strategy", s);
      c.demo_strategy = parse_demo_strategy(s);
    }
  }
  if (j.contains("prompt")) {
    const auto& p = j["prompt"];
    check_keys(p, {"instruction_variant", "shuffle_choices"}, "prompt");
    read(p, "instruction_variant", c.instruction_variant);
    read(p, "shuffle_choices", c.shuffle_choices);
  }
  if (j.contains("report")) {
    const auto& r = j["report"];
    check_keys(r, {"bucket_edges", "head_rule", "mask_wall_clock"}, "report");
    read(r, "bucket_edges", c.bucket_edges);
    read(r, "mask_wall_clock", c.mask_wall_clock);
    if (r.contains("head_rule")) {
      read(r, "head_rule", s);
      if (s == "last") c.head_rule = HeadRule::LastToken;
      else if (s == "first") c.head_rule = HeadRule::FirstToken;
      else throw Error(ErrorCode::ConfigError, "head_rule must be 'last' or 'first'");
    }
  }
  if (j.contains("llm")) {
    const auto& l = j["llm"];
    check_keys(l, {"backend", "endpoint", "api_key", "model", "max_output_tokens", "temperature", "stop",
                   "rate_limit_rpm", "max_parallel", "timeout_s", "max_retries", "mock"},
               "llm");
    read(l, "backend", c.llm.backend);
    read(l, "endpoint", c.llm.endpoint);
    read(l, "api_key", c.llm.api_key);
    read(l, "model", c.llm.model);
    read(l, "max_output_tokens", c.llm.max_output_tokens);
    read(l, "temperature", c.llm.temperature);
    read(l, "stop", c.llm.stop);
    read(l, "rate_limit_rpm", c.llm.rate_limit_rpm);
    read(l, "max_parallel", c.llm.max_parallel);
    read(l, "timeout_s", c.llm.timeout_s);
    read(l, "max_retries", c.llm.max_retries);
    if (l.contains("mock")) {
      const auto& m = l["mock"];
      check_keys(m, {"policy", "text", "p", "seed", "latency_ms"}, "llm.mock");
      read(m, "policy", c.llm.mock.policy);
      read(m, "text", c.llm.mock.text);
      read(m, "p", c.llm.mock.p);
      read(m, "seed", c.llm.mock.seed);
      read(m, "latency_ms", c.llm.mock.latency_ms);
    }
  }
  if (c.llm.endpoint.empty()) c.llm.endpoint = env("LLM_ENDPOINT").value_or("");
  if (c.llm.api_key.empty()) c.llm.api_key = env("LLM_API_KEY").value_or("");
  if (c.llm.model.empty()) c.llm.model = env("LLM_MODEL").value_or("");
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path, const EnvLookup& env) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), fs::absolute(path).parent_path(), env);
}

namespace {

ojson config_echo(const RunConfig& c) {
  ojson j = ojson::object();
  j["mode"] = std::string(to_string(c.mode));
  j["seed"] = c.seed;
  ojson p = ojson::object();
  p["schema"] = c.paths.schema.generic_string();
  p["test"] = c.paths.test.generic_string();
  ojson scores = ojson::array();
  for (const auto& s : c.paths.scores) scores.push_back(s.generic_string());
  p["scores"] = std::move(scores);
  p["rerank_scores"] = c.paths.rerank_scores.generic_string();
  p["templates"] = c.paths.templates.generic_string();
  p["demos"] = c.paths.demos.generic_string();
  p["embeddings"] = c.paths.embeddings.generic_string();
  p["train"] = c.paths.train.generic_string();
  p["valid"] = c.paths.valid.generic_string();
  p["valid_scores"] = c.paths.valid_scores.generic_string();
  p["cache"] = c.paths.cache.generic_string();
  p["out_dir"] = c.paths.out_dir.generic_string();
  j["paths"] = std::move(p);
  ojson r = ojson::object();
  r["tau"] = c.router.tau;
  r["top_n"] = c.router.top_n;
  r["inject_none"] = c.router.inject_none;
  r["grid"] = c.router.grid;
  r["tune"] = c.tune;
  r["tune_oracle"] = c.tune_oracle;
  j["router"] = std::move(r);
  j["ablations"] = ojson{{"cot", c.ablations.cot},
                         {"demo", c.ablations.demo},
                         {"label_filter", c.ablations.label_filter},
                         {"adaptive", c.ablations.adaptive}};
  j["demos"] = ojson{{"count", c.demo_count}, {"strategy", std::string(to_string(c.demo_strategy))}};
  j["prompt"] = ojson{{"instruction_variant", c.instruction_variant}, {"shuffle_choices", c.shuffle_choices}};
  j["report"] = ojson{{"bucket_edges", c.bucket_edges},
                      {"head_rule", c.head_rule == HeadRule::LastToken ? "last" : "first"},
                      {"mask_wall_clock", c.mask_wall_clock}};
  ojson l = ojson::object();
  l["backend"] = c.llm.backend;
  l["endpoint"] = c.llm.endpoint;
  l["model"] = c.llm.model;
  l["max_output_tokens"] = c.llm.max_output_tokens;
  l["temperature"] = c.llm.temperature;
  l["stop"] = c.llm.stop;
  l["rate_limit_rpm"] = c.llm.rate_limit_rpm;
  l["max_parallel"] = c.llm.max_parallel;
  l["timeout_s"] = c.llm.timeout_s;
  l["max_retries"] = c.llm.max_retries;
  if (c.llm.backend == "mock") {
    l["mock"] = ojson{{"policy", c.llm.mock.policy},
                      {"text", c.llm.mock.text},
                      {"p", c.llm.mock.p},
                      {"seed", c.llm.mock.seed},
                      {"latency_ms", c.llm.mock.latency_ms}};
  }
  j["llm"] = std::move(l);
  return j;
}

}  // namespace

std::string config_echo_json(const RunConfig& cfg) { return config_echo(cfg).dump(2); }

// ---------------------------------------------------------------------------
// Inputs

namespace {

void require_path(const fs::path& p, const char* name, const RunConfig& cfg) {
  if (p.empty()) {
    throw Error(ErrorCode::ConfigError,
                std::string("paths.") + name + " is required in mode " + std::string(to_string(cfg.mode)));
  }
}

}  // namespace

RunInputs load_inputs(const RunConfig& cfg) {
  require_path(cfg.paths.schema, "schema", cfg);
  require_path(cfg.paths.test, "test", cfg);
  const auto schema = LabelSchema::load(cfg.paths.schema);
  RunInputs in;
  in.test = load_dataset(cfg.paths.test, schema);

  const bool icl = cfg.mode == Mode::IclBaseline;
  if (!icl) require_path(cfg.paths.scores.empty() ? fs::path() : cfg.paths.scores.front(), "scores", cfg);
  if (!cfg.paths.scores.empty()) {
    std::vector<ScoreTable> tables;
    for (const auto& p : cfg.paths.scores) tables.push_back(ingest_scores(p, schema));
    in.scores = tables.size() == 1 ? std::move(tables.front()) : ensemble(tables);
    for (const auto& [id, rec] : in.scores.records) {
      const auto* s = in.test.find(rec.sentence_id);
      if (s == nullptr) {
        throw Error(ErrorCode::UnknownSentence, id + ": sentence '" + rec.sentence_id + "' not in the test set");
      }
      if (rec.unit.extent() > static_cast<int>(s->tokens.size())) {
        throw Error(ErrorCode::SpanOutOfBounds, id + ": unit outside sentence '" + rec.sentence_id + "'");
      }
    }
  } else {
    in.scores.schema = schema;
  }

  if (cfg.mode == Mode::SlmRerankBaseline) {
    require_path(cfg.paths.rerank_scores, "rerank_scores", cfg);
    in.rerank_scores = ingest_scores(cfg.paths.rerank_scores, schema);
  }
  const bool llm_mode = cfg.mode == Mode::FilterThenRerank || icl;
  if (llm_mode) {
    require_path(cfg.paths.templates, "templates", cfg);
    in.templates = TemplateSet::load(cfg.paths.templates, schema);
  }
  const bool wants_demos = cfg.ablations.demo && cfg.demo_count > 0;
  if (cfg.mode == Mode::FilterThenRerank && wants_demos) {
    require_path(cfg.paths.demos, "demos", cfg);
    in.demos = load_demos(cfg.paths.demos, schema);
  }
  if (icl) {
    require_path(cfg.paths.train, "train", cfg);
    in.train = load_dataset(cfg.paths.train, schema);
  }
  if (llm_mode && wants_demos && cfg.demo_strategy == DemoStrategy::Embedding) {
    require_path(cfg.paths.embeddings, "embeddings", cfg);
    in.embeddings = load_embeddings(cfg.paths.embeddings);
  }
  if (cfg.tune) {
    require_path(cfg.paths.valid, "valid", cfg);
    require_path(cfg.paths.valid_scores, "valid_scores", cfg);
    in.valid = load_dataset(cfg.paths.valid, schema);
    in.valid_scores = ingest_scores(cfg.paths.valid_scores, schema);
    if (!cfg.tune_oracle && !in.templates) {
      require_path(cfg.paths.templates, "templates", cfg);
      in.templates = TemplateSet::load(cfg.paths.templates, schema);
    }
  }
  return in;
}

std::map<std::string, std::string> gold_labels(const ScoreTable& scores, const Dataset& gold) {
  std::map<std::string, std::string> out;
  for (const auto& [id, rec] : scores.records) {
    std::string label(kNoneLabel);
    if (const auto* s = gold.find(rec.sentence_id)) {
      for (const auto& a : s->annotations) {
        if (a.unit == rec.unit) {
          label = a.label;
          break;
        }
      }
    }
    out[id] = label;
  }
  return out;
}

std::shared_ptr<Backend> make_backend(const LlmSettings& llm, const std::map<std::string, std::string>& gold) {
  if (llm.backend == "http") {
    HttpConfig h;
    h.endpoint = llm.endpoint;
    h.api_key = llm.api_key;
    h.timeout_s = llm.timeout_s;
    h.max_retries = llm.max_retries;
    if (llm.model.empty()) throw Error(ErrorCode::ConfigError, "no model configured (LLM_MODEL)");
    return std::make_shared<HttpBackend>(h);
  }
  MockPolicy p;
  const auto& m = llm.mock;
  if (m.policy == "oracle") p = MockPolicy::oracle(gold);
  else if (m.policy == "first_choice") p = MockPolicy::first_choice();
  else if (m.policy == "fixed_text") p = MockPolicy::fixed_text(m.text);
  else if (m.policy == "noisy") p = MockPolicy::noisy(gold, m.p, m.seed);
  else throw Error(ErrorCode::ConfigError, "unknown mock policy '" + m.policy + "'");
  p.latency_ms = m.latency_ms;
  return std::make_shared<MockBackend>(std::move(p));
}

std::unique_ptr<LlmClient> make_client(const RunConfig& cfg, const std::map<std::string, std::string>& gold) {
  ClientConfig cc;
  if (!cfg.paths.cache.empty()) cc.cache_path = cfg.paths.cache;
  cc.rate_limit_rpm = cfg.llm.rate_limit_rpm;
  cc.max_parallel = cfg.llm.max_parallel;
  return std::make_unique<LlmClient>(make_backend(cfg.llm, gold), cc);
}

// ---------------------------------------------------------------------------
// Parallel helper

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

// ---------------------------------------------------------------------------
// MCQ reranking

McqReranker::McqReranker(const RunConfig& cfg, const LabelSchema& schema, const TemplateSet& tset,
                         const std::vector<DemoRecord>& demos, const EmbeddingTable* emb, LlmClient& client)
    : cfg_(cfg), tset_(tset), emb_(emb), client_(client), router_(cfg.router) {
  if (schema.task() == Task::EAE) {
    throw Error(ErrorCode::WrongTask, "multiple-choice reranking covers NER, RE and ED");
  }
  if (!cfg.ablations.label_filter) router_.top_n = static_cast<int>(schema.labels().size()) + 1;
  cot_ = cfg.ablations.cot && cfg.ablations.demo;
  if (!cfg.ablations.demo || cfg.demo_count == 0) return;

  std::vector<SentenceRecord> sentences;
  for (const auto& rec : demos) {
    if (example_index_.count(rec.sentence_id)) continue;
    example_index_[rec.sentence_id] = examples_.size();
    examples_.push_back(to_demo_example(rec, tset, cot_));
    sentences.push_back({rec.sentence_id, rec.tokens, {}});
  }
  pool_ = Dataset(schema, std::move(sentences));
  if (static_cast<std::size_t>(cfg.demo_count) > pool_.size()) {
    throw Error(ErrorCode::PoolTooSmall, "demo_count " + std::to_string(cfg.demo_count) +
                                             " exceeds the " + std::to_string(pool_.size()) + " demos available");
  }
  if (cfg.demo_strategy == DemoStrategy::Embedding && emb_ == nullptr) {
    throw Error(ErrorCode::ConfigError, "embedding demo selection needs an embedding file");
  }
}

std::vector<DemoExample> McqReranker::pick_demos(const ScoreRecord& rec) const {
  if (examples_.empty()) return {};
  const auto k = static_cast<std::size_t>(cfg_.demo_count);
  std::vector<std::string> ids;
  if (cfg_.demo_strategy == DemoStrategy::Random) {
    ids = select_random(pool_, k, detail::derive_seed(cfg_.seed, rec.sample_id));
  } else {
    ids = select_by_embedding(pool_, rec.sentence_id, *emb_, k);
    std::reverse(ids.begin(), ids.end());  // most similar sits next to the question
  }
  std::vector<DemoExample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(examples_[example_index_.at(id)]);
  return out;
}

PromptBundle McqReranker::prompt(const ScoreRecord& rec, const SentenceRecord& sentence,
                                 const CandidateSet& cands) const {
  McqOptions opts;
  opts.cot = cot_;
  if (cfg_.shuffle_choices) opts.shuffle_seed = cfg_.seed;
  const auto demos = pick_demos(rec);
  return render_mcq(rec, sentence, cands, demos, tset_, opts);
}

McqReranker::Outcome McqReranker::rerank(const ScoreRecord& rec, const SentenceRecord& sentence,
                                         const CandidateSet& cands) const {
  const auto bundle = prompt(rec, sentence, cands);
  GenRequest req;
  req.prompt = bundle.text();
  req.max_output_tokens = cfg_.llm.max_output_tokens;
  req.temperature = cfg_.llm.temperature;
  req.stop = cfg_.llm.stop;
  req.model_id = cfg_.llm.model;
  req.hint.sample_id = rec.sample_id;
  req.hint.choice_map = bundle.choice_map;
  Outcome out;
  try {
    const auto res = client_.generate(req);
    const auto parsed = parse_mcq_answer(res.text, bundle);
    out.label = parsed.label;
    out.status = parsed.status;
    out.latency_ms = res.latency_ms;
    out.tokens = res.cached ? 0 : res.prompt_tokens + res.completion_tokens;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EndpointUnreachable && e.code() != ErrorCode::ContextTooLong) throw;
    out.label = bundle.fallback_label;
    out.status = ParseStatus::Failed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

std::vector<const ScoreRecord*> ordered_records(const ScoreTable& scores) {
  std::vector<const ScoreRecord*> out;
  out.reserve(scores.records.size());
  for (const auto& [id, rec] : scores.records) out.push_back(&rec);
  return out;
}

RerankDecision easy_decision(const ScoreRecord& rec) {
  RerankDecision d;
  d.sample_id = rec.sample_id;
  d.sentence_id = rec.sentence_id;
  d.unit = rec.unit;
  d.routed = Difficulty::Easy;
  d.confidence = confidence(rec);
  d.before_label = filter_argmax(rec);
  d.after_label = d.before_label;
  return d;
}

EvalReport evaluate(std::span<const Prediction> preds, const Dataset& gold, HeadRule rule) {
  return gold.schema().task() == Task::EAE ? head_f1(preds, gold, rule) : micro_f1(preds, gold);
}

void fill_reports(RunOutput& out, const Dataset& gold, const std::vector<double>& edges, HeadRule rule) {
  const auto before = before_predictions(out.decisions);
  const auto after = after_predictions(out.decisions);
  std::unordered_set<std::string> routed;
  for (const auto& d : out.decisions) {
    if (d.routed == Difficulty::Hard) routed.insert(d.sample_id);
  }
  out.before = evaluate(before, gold, rule);
  out.after = evaluate(after, gold, rule);
  out.after.bucket_rows = confidence_buckets(before, after, gold, edges);
  out.after.rerank_rows = reranked_subset(before, after, routed, gold);
  out.before.uncovered_gold = out.after.uncovered_gold = uncovered_gold_units(before, gold);
}

RouterConfig effective_router(const RunConfig& cfg, const LabelSchema& schema) {
  RouterConfig r = cfg.router;
  if (!cfg.ablations.label_filter) r.top_n = static_cast<int>(schema.labels().size()) + 1;
  return r;
}

bool routes_hard(const ScoreRecord& rec, const RunConfig& cfg, const RouterConfig& router) {
  return !cfg.ablations.adaptive || classify_difficulty(rec, router) == Difficulty::Hard;
}

}  // namespace

RunOutput run_filter_only(const RunConfig& cfg, const RunInputs& in) {
  RunOutput out;
  for (const auto* rec : ordered_records(in.scores)) out.decisions.push_back(easy_decision(*rec));
  fill_reports(out, in.test, cfg.bucket_edges, cfg.head_rule);
  return out;
}

RunOutput run_slm_rerank_baseline(const RunConfig& cfg, const RunInputs& in) {
  if (!in.rerank_scores) throw Error(ErrorCode::ConfigError, "slm_rerank_baseline needs rerank scores");
  const auto router = effective_router(cfg, in.scores.schema);
  RunOutput out;
  for (const auto* rec : ordered_records(in.scores)) {
    auto d = easy_decision(*rec);
    if (routes_hard(*rec, cfg, router)) {
      const auto cands = top_candidates(*rec, router);
      d.routed = Difficulty::Hard;
      d.candidates = cands.candidates;
      d.after_label = slm_rerank(cands, *in.rerank_scores).label;
      d.parse_status = ParseStatus::Parsed;
    }
    out.decisions.push_back(std::move(d));
  }
  fill_reports(out, in.test, cfg.bucket_edges, cfg.head_rule);
  return out;
}

RunOutput run_filter_then_rerank(const RunConfig& cfg, const RunInputs& in, LlmClient& client) {
  if (!in.templates) throw Error(ErrorCode::ConfigError, "filter_then_rerank needs templates");
  const McqReranker reranker(cfg, in.scores.schema, *in.templates, in.demos,
                             in.embeddings ? &*in.embeddings : nullptr, client);
  const auto& router = reranker.router();

  RunOutput out;
  std::vector<std::size_t> hard;
  std::vector<CandidateSet> cands;
  for (const auto* rec : ordered_records(in.scores)) {
    auto d = easy_decision(*rec);
    if (routes_hard(*rec, cfg, router)) {
      d.routed = Difficulty::Hard;
      cands.push_back(top_candidates(*rec, router));
      d.candidates = cands.back().candidates;
      hard.push_back(out.decisions.size());
    }
    out.decisions.push_back(std::move(d));
  }

  std::vector<McqReranker::Outcome> outcomes(hard.size());
  parallel_for(hard.size(), cfg.llm.max_parallel, [&](std::size_t i) {
    const auto& d = out.decisions[hard[i]];
    const auto& rec = in.scores.records.at(d.sample_id);
    const auto* sentence = in.test.find(d.sentence_id);
    if (sentence == nullptr) throw Error(ErrorCode::UnknownSentence, "sentence '" + d.sentence_id + "'");
    outcomes[i] = reranker.rerank(rec, *sentence, cands[i]);
  });

  std::size_t failed = 0;
  for (std::size_t i = 0; i < hard.size(); ++i) {
    auto& d = out.decisions[hard[i]];
    d.after_label = outcomes[i].label;
    d.parse_status = outcomes[i].status;
    d.llm_latency_ms = outcomes[i].latency_ms;
    d.llm_tokens = outcomes[i].tokens;
    if (!outcomes[i].latency_ms) ++failed;
  }
  if (!hard.empty() && failed == hard.size()) {
    throw Error(ErrorCode::EndpointUnreachable,
                "every routed sample failed to reach the LLM (" + std::to_string(failed) + " samples)");
  }
  out.ledger = client.ledger().snapshot();
  fill_reports(out, in.test, cfg.bucket_edges, cfg.head_rule);
  return out;
}

TuneResult tune_on_valid(const RunConfig& cfg, const RunInputs& in, LlmClient* client) {
  if (!in.valid || !in.valid_scores) throw Error(ErrorCode::ConfigError, "tuning needs valid and valid_scores");
  const auto& scores = *in.valid_scores;
  const auto& gold = *in.valid;
  if (scores.records.empty() || gold.empty()) throw Error(ErrorCode::EmptyValidation, "validation set is empty");

  RouterConfig router = effective_router(cfg, scores.schema);
  std::map<std::string, std::string> answers;

  if (cfg.tune_oracle) {
    const auto truth = gold_labels(scores, gold);
    RerankFn fn = [&](const CandidateSet& c) {
      const auto& g = truth.at(c.sample_id);
      if (std::find(c.candidates.begin(), c.candidates.end(), g) != c.candidates.end()) return g;
      if (std::find(c.candidates.begin(), c.candidates.end(), kNoneLabel) != c.candidates.end()) {
        return std::string(kNoneLabel);
      }
      return c.candidates.front();
    };
    return tune_threshold_detailed(scores, gold, fn, router);
  }

  if (client == nullptr) throw Error(ErrorCode::ConfigError, "tuning without the oracle needs an LLM client");
  if (!in.templates) throw Error(ErrorCode::ConfigError, "tuning needs templates");
  const McqReranker reranker(cfg, scores.schema, *in.templates, in.demos,
                             in.embeddings ? &*in.embeddings : nullptr, *client);

  // Every sample that some grid value routes is reranked once, up front.
  RouterConfig widest = router;
  widest.tau = router.grid.empty() ? router.tau : *std::max_element(router.grid.begin(), router.grid.end());
  std::vector<const ScoreRecord*> todo;
  for (const auto* rec : ordered_records(scores)) {
    if (classify_difficulty(*rec, widest) == Difficulty::Hard) todo.push_back(rec);
  }
  std::vector<std::string> labels(todo.size());
  parallel_for(todo.size(), cfg.llm.max_parallel, [&](std::size_t i) {
    const auto* sentence = gold.find(todo[i]->sentence_id);
    if (sentence == nullptr) throw Error(ErrorCode::UnknownSentence, "sentence '" + todo[i]->sentence_id + "'");
    labels[i] = reranker.rerank(*todo[i], *sentence, top_candidates(*todo[i], router)).label;
  });
  for (std::size_t i = 0; i < todo.size(); ++i) answers[todo[i]->sample_id] = labels[i];
  RerankFn fn = [&](const CandidateSet& c) { return answers.at(c.sample_id); };
  return tune_threshold_detailed(scores, gold, fn, router);
}

// ---------------------------------------------------------------------------
// ICL baseline

IclOutput run_icl_baseline(const RunConfig& cfg, const RunInputs& in, LlmClient& client) {
  if (!in.templates || !in.train) throw Error(ErrorCode::ConfigError, "icl_baseline needs templates and train");
  const Task task = in.test.schema().task();
  const auto& train = *in.train;
  const std::size_t k = cfg.ablations.demo ? static_cast<std::size_t>(cfg.demo_count) : 0;
  if (k > train.size()) {
    throw Error(ErrorCode::PoolTooSmall, "demo_count " + std::to_string(k) + " exceeds the training pool");
  }

  struct Query {
    std::string id;
    const SentenceRecord* sentence;
    std::optional<Unit> focus;
  };
  std::vector<Query> queries;
  for (const auto& s : in.test.sentences()) {
    if (task == Task::NER || task == Task::ED) {
      queries.push_back({s.sentence_id, &s, std::nullopt});
    } else if (task == Task::EAE) {
      std::set<std::pair<Span, std::string>> events;
      for (const auto& a : s.annotations) {
        if (events.insert({a.unit.trigger, a.unit.event}).second) {
          queries.push_back({s.sentence_id + "#" + a.unit.event + "@" + std::to_string(a.unit.trigger.start), &s,
                             Unit::argument(a.unit.trigger, a.unit.event, {})});
        }
      }
    }
  }
  if (task == Task::RE) {
    if (!in.scores.records.empty()) {
      for (const auto& [id, rec] : in.scores.records) queries.push_back({id, in.test.find(rec.sentence_id), rec.unit});
    } else {
      for (const auto& s : in.test.sentences()) {
        for (std::size_t i = 0; i < s.annotations.size(); ++i) {
          queries.push_back({s.sentence_id + "#" + std::to_string(i), &s, s.annotations[i].unit});
        }
      }
    }
  }

  struct Answer {
    IclParse parse;
    std::vector<Prediction> preds;
    std::size_t unaligned = 0;
    std::size_t ambiguous = 0;
    bool unparsed = false;
  };
  std::vector<Answer> answers(queries.size());
  parallel_for(queries.size(), cfg.llm.max_parallel, [&](std::size_t qi) {
    const auto& q = queries[qi];
    std::vector<IclItem> demos;
    if (k > 0) {
      std::vector<std::string> ids;
      if (cfg.demo_strategy == DemoStrategy::Random) {
        ids = select_random(train, k, detail::derive_seed(cfg.seed, q.id));
      } else {
        if (!in.embeddings) throw Error(ErrorCode::ConfigError, "embedding demo selection needs embeddings");
        ids = select_by_embedding(train, q.sentence->sentence_id, *in.embeddings, k);
        std::reverse(ids.begin(), ids.end());
      }
      for (const auto& id : ids) demos.push_back({train.find(id), std::nullopt});
    }
    const auto bundle = render_icl({q.sentence, q.focus}, demos, *in.templates, cfg.instruction_variant);
    GenRequest req;
    req.prompt = bundle.text();
    req.max_output_tokens = cfg.llm.max_output_tokens;
    req.temperature = cfg.llm.temperature;
    req.stop = cfg.llm.stop;
    req.model_id = cfg.llm.model;
    req.hint.sample_id = q.id;

    auto& ans = answers[qi];
    std::string text;
    try {
      text = client.generate(req).text;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EndpointUnreachable && e.code() != ErrorCode::ContextTooLong) throw;
      ans.unparsed = true;
      return;
    }
    ans.parse = parse_icl_answer(text, task, in.test.schema());
    ans.unparsed = ans.parse.items.empty() && !ans.parse.sentinel && ans.parse.dropped_unknown == 0;
    const auto& s = *q.sentence;
    std::size_t n = 0;
    for (const auto& item : ans.parse.items) {
      Prediction p;
      p.sentence_id = s.sentence_id;
      p.label = item.label;
      p.sample_id = q.id + "/" + std::to_string(n++);
      if (task == Task::RE) {
        p.unit = *q.focus;
      } else {
        const auto al = align_surface(s.tokens, item.surface);
        if (!al.span) {
          ++ans.unaligned;
          continue;
        }
        if (al.matches > 1) ++ans.ambiguous;
        if (task == Task::NER) p.unit = Unit::entity(*al.span);
        else if (task == Task::ED) p.unit = Unit::trigger_word(*al.span);
        else p.unit = Unit::argument(q.focus->trigger, q.focus->event, *al.span);
      }
      ans.preds.push_back(std::move(p));
    }
  });

  IclOutput out;
  for (auto& a : answers) {
    out.dropped_unknown += a.parse.dropped_unknown;
    out.unaligned += a.unaligned;
    out.ambiguous += a.ambiguous;
    out.unparsed += a.unparsed ? 1 : 0;
    for (auto& p : a.preds) out.predictions.push_back(std::move(p));
  }
  out.report = evaluate(out.predictions, in.test, cfg.head_rule);
  out.ledger = client.ledger().snapshot();
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

ojson unit_json(const Unit& u) {
  ojson j = ojson::object();
  detail::unit_to_json(u, j);
  return j;
}

}  // namespace

std::string decisions_jsonl(const std::vector<RerankDecision>& decisions, bool mask_wall_clock) {
  std::string out;
  for (const auto& d : decisions) {
    ojson j = ojson::object();
    j["sample_id"] = d.sample_id;
    j["sentence_id"] = d.sentence_id;
    j["unit"] = unit_json(d.unit);
    j["routed"] = std::string(to_string(d.routed));
    j["confidence"] = d.confidence;
    j["before"] = d.before_label;
    j["after"] = d.after_label;
    j["candidates"] = d.candidates;
    j["parse_status"] = d.parse_status ? ojson(std::string(to_string(*d.parse_status))) : ojson(nullptr);
    j["llm_latency_ms"] = (d.llm_latency_ms && !mask_wall_clock) ? ojson(*d.llm_latency_ms) : ojson(nullptr);
    j["llm_tokens"] = d.llm_tokens ? ojson(*d.llm_tokens) : ojson(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<RerankDecision> parse_decisions(std::string_view text) {
  std::vector<RerankDecision> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RerankDecision d;
      d.sample_id = detail::require_string(j, "sample_id");
      d.sentence_id = detail::require_string(j, "sentence_id");
      d.unit = detail::unit_from_json(j.at("unit"));
      const auto routed = detail::require_string(j, "routed");
      if (routed != "easy" && routed != "hard") throw Error(ErrorCode::MalformedRecord, "routed must be easy/hard");
      d.routed = routed == "easy" ? Difficulty::Easy : Difficulty::Hard;
      d.confidence = j.at("confidence").get<double>();
      d.before_label = detail::require_string(j, "before");
      d.after_label = detail::require_string(j, "after");
      d.candidates = j.at("candidates").get<std::vector<std::string>>();
      if (!j.at("parse_status").is_null()) d.parse_status = parse_status_from_string(j["parse_status"].get<std::string>());
      if (!j.at("llm_latency_ms").is_null()) d.llm_latency_ms = j["llm_latency_ms"].get<std::int64_t>();
      if (!j.at("llm_tokens").is_null()) d.llm_tokens = j["llm_tokens"].get<std::size_t>();
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, "decision line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "decision line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Prediction> after_predictions(const std::vector<RerankDecision>& decisions) {
  std::vector<Prediction> out;
  out.reserve(decisions.size());
  for (const auto& d : decisions) out.push_back({d.sample_id, d.sentence_id, d.unit, d.after_label, d.confidence});
  return out;
}

std::vector<Prediction> before_predictions(const std::vector<RerankDecision>& decisions) {
  std::vector<Prediction> out;
  out.reserve(decisions.size());
  for (const auto& d : decisions) out.push_back({d.sample_id, d.sentence_id, d.unit, d.before_label, d.confidence});
  return out;
}

std::string predictions_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    ojson j = ojson::object();
    j["sample_id"] = p.sample_id;
    j["sentence_id"] = p.sentence_id;
    j["unit"] = unit_json(p.unit);
    j["label"] = p.label;
    j["confidence"] = p.confidence;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

ojson ledger_json(const LedgerSnapshot& l, bool mask_wall_clock) {
  ojson j = ojson::object();
  j["llm_calls"] = l.network_calls();
  j["total_calls"] = l.total_calls;
  j["cached_hits"] = l.cached_hits;
  j["failures"] = l.failures;
  j["prompt_tokens"] = l.total_prompt_tokens;
  j["completion_tokens"] = l.total_completion_tokens;
  j["wall_ms"] = mask_wall_clock ? ojson(nullptr) : ojson(l.wall_ms);
  return j;
}

std::string pct(double f1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", f1 * 100.0);
  return buf;
}

std::string signed_pct(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", delta * 100.0);
  return buf;
}

std::string json_number_text(const ojson& v) {
  if (v.is_null()) return "n/a";
  return v.dump();
}

}  // namespace

std::string run_meta_json(const RunConfig& cfg, const LedgerSnapshot& ledger, const std::optional<TuneResult>& tuned) {
  ojson j = ojson::object();
  j["mode"] = std::string(to_string(cfg.mode));
  j["ledger"] = ledger_json(ledger, cfg.mask_wall_clock);
  if (tuned) {
    ojson t = ojson::object();
    t["tau"] = tuned->tau;
    t["valid_f1"] = tuned->f1;
    t["valid_routed"] = tuned->hard;
    ojson curve = ojson::array();
    for (const auto& p : tuned->curve) curve.push_back(ojson{{"tau", p.tau}, {"f1", p.f1}, {"routed", p.hard}});
    t["curve"] = std::move(curve);
    j["tuned"] = std::move(t);
  } else {
    j["tuned"] = nullptr;
  }
  j["config"] = config_echo(cfg);
  return j.dump(2) + "\n";
}

ReportFiles render_report(const std::vector<RerankDecision>& decisions, const Dataset& gold,
                          const std::string& meta_text, const std::vector<double>& edges, HeadRule head_rule) {
  RunOutput out;
  out.decisions = decisions;
  fill_reports(out, gold, edges, head_rule);
  ojson meta;
  try {
    meta = ojson::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("run metadata: ") + e.what());
  }

  std::size_t parsed = 0, fallback = 0, failed = 0;
  for (const auto& d : decisions) {
    if (!d.parse_status) continue;
    switch (*d.parse_status) {
      case ParseStatus::Parsed: ++parsed; break;
      case ParseStatus::ParsedFallback: ++fallback; break;
      case ParseStatus::Failed: ++failed; break;
    }
  }
  const auto& rr = out.after.rerank_rows;

  ojson j = ojson::object();
  j["mode"] = meta.value("mode", "");
  j["ratio_definition"] = "reranked samples / all samples; counted over samples, not sentences";
  ojson r = ojson::object();
  r["samples"] = rr.total;
  r["reranked"] = rr.reranked;
  r["ratio"] = detail::format_percent(rr.reranked_ratio);
  r["reranked_ratio"] = rr.reranked_ratio;
  r["f1_before_on_reranked"] = rr.f1_before_on_reranked;
  r["f1_after_on_reranked"] = rr.f1_after_on_reranked;
  r["delta_on_reranked"] = rr.f1_after_on_reranked - rr.f1_before_on_reranked;
  j["rerank"] = std::move(r);
  j["overall"] = ojson{{"f1_before", out.before.f1},
                       {"f1_after", out.after.f1},
                       {"delta", out.after.f1 - out.before.f1}};
  j["parse"] = ojson{{"parsed", parsed}, {"parsed_fallback", fallback}, {"failed", failed}};
  j["before"] = ojson::parse(to_json(out.before));
  j["after"] = ojson::parse(to_json(out.after));
  j["cost"] = meta.contains("ledger") ? meta["ledger"] : ojson(nullptr);
  j["tuned"] = meta.contains("tuned") ? meta["tuned"] : ojson(nullptr);
  j["config"] = meta.contains("config") ? meta["config"] : ojson(nullptr);

  ReportFiles files;
  files.json = j.dump(2) + "\n";

  std::ostringstream s;
  s << "mode: " << meta.value("mode", "") << '\n';
  s << "samples: " << rr.total << ", reranked: " << rr.reranked << ", ratio: "
    << detail::format_percent(rr.reranked_ratio) << " (over samples, not sentences)\n";
  s << "F1 overall: before " << pct(out.before.f1) << ", after " << pct(out.after.f1) << ", delta "
    << signed_pct(out.after.f1 - out.before.f1) << '\n';
  s << "F1 on reranked: before " << pct(rr.f1_before_on_reranked) << ", after " << pct(rr.f1_after_on_reranked)
    << ", delta " << signed_pct(rr.f1_after_on_reranked - rr.f1_before_on_reranked) << '\n';
  s << "parse: parsed " << parsed << ", fallback " << fallback << ", failed " << failed << '\n';
  s << "uncovered gold units: " << out.after.uncovered_gold << '\n';
  s << "confidence buckets:\n";
  s << "  range\tn\tF1 before\tF1 after\tneg\tpos\tneg/pos\n";
  for (const auto& b : out.after.bucket_rows) {
    char ratio[32] = "n/a";
    if (b.neg_pos_ratio) std::snprintf(ratio, sizeof ratio, "%.2f", *b.neg_pos_ratio);
    s << "  [" << detail::format_double(b.lo) << ", " << detail::format_double(b.hi)
      << (b.hi == 1.0 ? "]" : ")") << '\t' << b.n << '\t' << pct(b.f1_before) << '\t' << pct(b.f1_after) << '\t'
      << b.negatives << '\t' << b.positives << '\t' << ratio << '\n';
  }
  if (meta.contains("ledger") && meta["ledger"].is_object()) {
    const auto& l = meta["ledger"];
    s << "LLM: calls " << json_number_text(l["llm_calls"]) << ", cache hits " << json_number_text(l["cached_hits"])
      << ", failures " << json_number_text(l["failures"]) << ", prompt tokens "
      << json_number_text(l["prompt_tokens"]) << ", completion tokens " << json_number_text(l["completion_tokens"])
      << ", wall ms " << json_number_text(l["wall_ms"]) << '\n';
  }
  if (meta.contains("tuned") && meta["tuned"].is_object()) {
    s << "tuned tau: " << meta["tuned"]["tau"].dump() << " (valid F1 " << pct(meta["tuned"]["valid_f1"].get<double>())
      << ")\n";
  }
  files.summary = s.str();

  std::string tsv = "f1_before\t" + detail::format_double(out.before.f1) + "\n";
  tsv += to_tsv(out.after);
  tsv += "parsed\t" + std::to_string(parsed) + "\n";
  tsv += "parsed_fallback\t" + std::to_string(fallback) + "\n";
  tsv += "failed\t" + std::to_string(failed) + "\n";
  if (meta.contains("ledger") && meta["ledger"].is_object()) {
    for (const auto& [key, value] : meta["ledger"].items()) tsv += "llm." + key + "\t" + json_number_text(value) + "\n";
  }
  files.tsv = std::move(tsv);
  return files;
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_run(const fs::path& dir, const RunConfig& cfg, const RunOutput& out, const Dataset& gold) {
  const auto meta = run_meta_json(cfg, out.ledger, out.tuned);
  const auto decisions = decisions_jsonl(out.decisions, cfg.mask_wall_clock);
  // The report is rendered from the serialized decisions so that
  // regenerate_report reproduces it exactly.
  const auto files = render_report(parse_decisions(decisions), gold, meta, cfg.bucket_edges, cfg.head_rule);
  write_text(dir / "decisions.jsonl", decisions);
  write_text(dir / "predictions.jsonl", predictions_jsonl(after_predictions(out.decisions)));
  write_text(dir / "run.json", meta);
  write_text(dir / "report.json", files.json);
  write_text(dir / "summary.txt", files.summary);
  write_text(dir / "report.tsv", files.tsv);
}

ReportFiles regenerate_report(const fs::path& dir) {
  const auto meta_text = read_text(dir / "run.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("run.json: ") + e.what());
  }
  const auto& cfg = meta.at("config");
  const auto schema = LabelSchema::load(cfg.at("paths").at("schema").get<std::string>());
  const auto gold = load_dataset(cfg.at("paths").at("test").get<std::string>(), schema);
  const auto edges = cfg.at("report").at("bucket_edges").get<std::vector<double>>();
  const auto rule = cfg.at("report").at("head_rule").get<std::string>() == "first" ? HeadRule::FirstToken
                                                                                  : HeadRule::LastToken;
  const auto decisions = parse_decisions(read_text(dir / "decisions.jsonl"));
  auto files = render_report(decisions, gold, meta_text, edges, rule);
  write_text(dir / "report.json", files.json);
  write_text(dir / "summary.txt", files.summary);
  write_text(dir / "report.tsv", files.tsv);
  return files;
}

}  // namespace ftr
