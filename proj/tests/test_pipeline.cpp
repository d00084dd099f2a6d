#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "ftr/error.hpp"
#include "ftr/pipeline.hpp"
#include "support/scenario.hpp"
#include "support/tempdir.hpp"

using namespace ftr;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ftr::Error thrown";
  return ErrorCode::IoError;
}

EnvLookup env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

fx::Scenario small(std::size_t n = 200, std::uint64_t seed = 4) {
  auto s = fx::schema(Task::NER, 6);
  return fx::Scenario(s, fx::random_synthetic(s, n, seed));
}

// Fails for listed samples, answers (a) otherwise.
class FlakyBackend : public Backend {
 public:
  std::set<std::string> fail;
  ErrorCode code = ErrorCode::EndpointUnreachable;
  bool fail_all = false;
  GenResult complete(const GenRequest& r) override {
    if (fail_all || fail.count(r.hint.sample_id)) throw Error(code, "boom");
    GenResult g;
    g.text = "Answer: (a)";
    return g;
  }
};

}  // namespace

TEST(Config, EnvInterpolation) {
  auto e = env({{"HOST", "h.example"}, {"EMPTY", ""}});
  EXPECT_EQ(interpolate_env("https://${HOST}/v1", e), "https://h.example/v1");
  EXPECT_EQ(interpolate_env("${MISSING:-fallback}", e), "fallback");
  EXPECT_EQ(interpolate_env("${EMPTY:-fb}", e), "fb");
  EXPECT_EQ(interpolate_env("cost $5", e), "cost $5");
  EXPECT_EQ(code_of([&] { interpolate_env("${MISSING}", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { interpolate_env("${UNCLOSED", e); }), ErrorCode::ConfigError);
}

TEST(Config, ParsesSectionsAndResolvesPaths) {
  const std::string text = R"({"mode":"filter_then_rerank","seed":9,
    "paths":{"schema":"s.json","test":"/abs/t.jsonl","scores":["a.jsonl","b.jsonl"]},
    "router":{"tau":0.7,"top_n":2,"inject_none":false},
    "ablations":{"cot":false},
    "demos":{"count":2,"strategy":"embedding"},
    "llm":{"backend":"http","endpoint":"${EP}","api_key":"${KEY}","model":"m1"}})";
  auto cfg = parse_run_config(text, "/base", env({{"EP", "http://x/v1"}, {"KEY", "secret"}}));
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.paths.schema, std::filesystem::path("/base/s.json"));
  EXPECT_EQ(cfg.paths.test, std::filesystem::path("/abs/t.jsonl"));
  EXPECT_EQ(cfg.paths.scores.size(), 2u);
  EXPECT_DOUBLE_EQ(cfg.router.tau, 0.7);
  EXPECT_EQ(cfg.router.top_n, 2);
  EXPECT_FALSE(cfg.router.inject_none);
  EXPECT_FALSE(cfg.ablations.cot);
  EXPECT_EQ(cfg.demo_count, 2);
  EXPECT_EQ(cfg.demo_strategy, DemoStrategy::Embedding);
  EXPECT_EQ(cfg.llm.endpoint, "http://x/v1");
  EXPECT_EQ(cfg.llm.api_key, "secret");
  auto echo = config_echo_json(cfg);
  EXPECT_EQ(echo.find("secret"), std::string::npos);
}

TEST(Config, EndpointFallsBackToEnvironment) {
  auto cfg = parse_run_config(R"({"llm":{"backend":"http"}})", "/b",
                              env({{"LLM_ENDPOINT", "http://e"}, {"LLM_API_KEY", "k"}, {"LLM_MODEL", "mm"}}));
  EXPECT_EQ(cfg.llm.endpoint, "http://e");
  EXPECT_EQ(cfg.llm.api_key, "k");
  EXPECT_EQ(cfg.llm.model, "mm");
}

TEST(Config, Rejections) {
  auto e = env({});
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"bogus":1})", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"router":{"tua":0.5}})", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"mode":"nope"})", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"router":{"tau":2}})", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"demos":{"count":-1}})", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config("{not json", "/", e); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { parse_run_config(R"({"seed":"x"})", "/", e); }), ErrorCode::ConfigError);
}

TEST(Run, TauZeroMatchesFilterOnly) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.router.tau = 0.0;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  auto base = run_filter_only(cfg, sc.inputs());
  EXPECT_EQ(predictions_jsonl(after_predictions(out.decisions)), predictions_jsonl(after_predictions(base.decisions)));
  EXPECT_EQ(client->ledger().snapshot().total_calls, 0u);
}

TEST(Run, FirstChoiceIsNoOp) {
  auto sc = small();
  auto cfg = fx::Scenario::config("first_choice");
  cfg.router.tau = 0.8;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  for (const auto& d : out.decisions) EXPECT_EQ(d.after_label, d.before_label);
  EXPECT_EQ(out.after.f1, out.before.f1);
}

TEST(Run, EasyDecisionsCarryNoLlmFields) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  std::size_t hard = 0;
  for (const auto& d : out.decisions) {
    if (d.routed == Difficulty::Easy) {
      EXPECT_EQ(d.after_label, d.before_label);
      EXPECT_FALSE(d.llm_latency_ms || d.llm_tokens || d.parse_status);
      EXPECT_TRUE(d.candidates.empty());
    } else {
      ++hard;
      EXPECT_TRUE(d.parse_status.has_value());
    }
  }
  auto s = client->ledger().snapshot();
  EXPECT_EQ(s.network_calls() + s.cached_hits, hard);
  EXPECT_EQ(s.total_calls, hard);
}

TEST(Run, AdaptiveOffRoutesEverything) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.ablations.adaptive = false;
  cfg.router.tau = 0.0;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  for (const auto& d : out.decisions) EXPECT_EQ(d.routed, Difficulty::Hard);
}

TEST(Run, LabelFilterOffOffersEveryLabel) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.ablations.label_filter = false;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  for (const auto& d : out.decisions) {
    if (d.routed == Difficulty::Hard) EXPECT_EQ(d.candidates.size(), sc.schema.labels().size() + 1);
  }
}

TEST(Run, DemoAndCotSwitchesShapePrompt) {
  auto sc = small();
  const auto in = sc.inputs();
  const auto& rec = in.scores.records.begin()->second;
  const auto* sent = in.test.find(rec.sentence_id);
  auto prompt_for = [&](Ablations a) {
    auto cfg = fx::Scenario::config();
    cfg.ablations = a;
    auto client = sc.client(cfg);
    McqReranker rr(cfg, sc.schema, sc.tset, sc.demos, nullptr, *client);
    return rr.prompt(rec, *sent, top_candidates(rec, rr.router()));
  };
  auto full = prompt_for({});
  EXPECT_EQ(full.demo_block.size(), 4u);
  EXPECT_EQ(count(full.text(), "Analysis:"), 4u);
  auto no_cot = prompt_for({.cot = false});
  EXPECT_EQ(no_cot.demo_block.size(), 4u);
  EXPECT_EQ(count(no_cot.text(), "Analysis:"), 0u);
  auto no_demo = prompt_for({.cot = true, .demo = false});
  EXPECT_TRUE(no_demo.demo_block.empty());
  EXPECT_EQ(count(no_demo.text(), "Analysis:"), 0u);
}

TEST(Run, DemoCountBeyondPool) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.demo_count = 10;
  auto client = sc.client(cfg);
  EXPECT_EQ(code_of([&] { run_filter_then_rerank(cfg, sc.inputs(), *client); }), ErrorCode::PoolTooSmall);
}

TEST(Run, PerSampleFailureKeepsFilterPrediction) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.router.tau = 0.9;
  auto backend = std::make_shared<FlakyBackend>();
  auto in = sc.inputs();
  std::string victim;
  for (const auto& [id, r] : in.scores.records) {
    if (confidence(r) <= 0.9) {
      victim = id;
      break;
    }
  }
  backend->fail.insert(victim);
  LlmClient client(backend, {.cache_path = std::nullopt, .rate_limit_rpm = 0, .max_parallel = 2});
  auto out = run_filter_then_rerank(cfg, in, client);
  for (const auto& d : out.decisions) {
    if (d.sample_id == victim) {
      EXPECT_EQ(d.parse_status, ParseStatus::Failed);
      EXPECT_EQ(d.after_label, d.before_label);
    }
  }
  EXPECT_EQ(client.ledger().snapshot().failures, 1u);
}

TEST(Run, AllFailedIsEndpointError) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  auto backend = std::make_shared<FlakyBackend>();
  backend->fail_all = true;
  LlmClient client(backend, {.cache_path = std::nullopt, .rate_limit_rpm = 0, .max_parallel = 2});
  EXPECT_EQ(code_of([&] { run_filter_then_rerank(cfg, sc.inputs(), client); }), ErrorCode::EndpointUnreachable);
  auto auth = std::make_shared<FlakyBackend>();
  auth->fail_all = true;
  auth->code = ErrorCode::AuthFailure;
  LlmClient c2(auth, {.cache_path = std::nullopt, .rate_limit_rpm = 0, .max_parallel = 1});
  EXPECT_EQ(code_of([&] { run_filter_then_rerank(cfg, sc.inputs(), c2); }), ErrorCode::AuthFailure);
}

TEST(Run, SlmRerankBaseline) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  auto in = sc.inputs();
  in.rerank_scores = in.scores;
  auto out = run_slm_rerank_baseline(cfg, in);
  // reranking with the filter's own table is the identity
  for (const auto& d : out.decisions) EXPECT_EQ(d.after_label, d.before_label);
}

TEST(Decisions, RoundTrip) {
  auto sc = small();
  auto cfg = fx::Scenario::config("noisy");
  cfg.llm.mock.p = 0.5;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  auto text = decisions_jsonl(out.decisions, false);
  EXPECT_EQ(parse_decisions(text), out.decisions);
  auto masked = decisions_jsonl(out.decisions, true);
  EXPECT_EQ(decisions_jsonl(parse_decisions(masked), true), masked);
}

TEST(Report, RatioFormatOneDecimal) {
  // 1 routed out of 11 samples
  auto schema = fx::schema(Task::NER, 3);
  std::vector<fx::SampleSpec> specs;
  for (int i = 0; i < 11; ++i) {
    if (i == 5) specs.push_back({"L01", {0.4, 0.35, 0.15, 0.1}});
    else specs.push_back({"L00", {0.9, 0.05, 0.03, 0.02}});
  }
  fx::Scenario sc(schema, fx::build(schema, specs));
  auto cfg = fx::Scenario::config();
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  auto files = render_report(out.decisions, sc.syn.gold, run_meta_json(cfg, out.ledger, std::nullopt),
                             cfg.bucket_edges, cfg.head_rule);
  auto j = nlohmann::json::parse(files.json);
  EXPECT_NE(files.summary.find("9.1%"), std::string::npos);
  EXPECT_NE(files.json.find("\"9.1%\""), std::string::npos);
  EXPECT_NE(files.summary.find("over samples"), std::string::npos);
}

TEST(Report, ZeroRoutedHasZeroRatio) {
  auto sc = small();
  auto cfg = fx::Scenario::config();
  cfg.router.tau = 0.0;
  auto client = sc.client(cfg);
  auto out = run_filter_then_rerank(cfg, sc.inputs(), *client);
  EXPECT_EQ(out.after.rerank_rows.reranked_ratio, 0.0);
  EXPECT_EQ(out.after.f1, out.before.f1);
  auto files = render_report(out.decisions, sc.syn.gold, "{}", cfg.bucket_edges, cfg.head_rule);
  EXPECT_NE(files.summary.find("0.0%"), std::string::npos);
}

TEST(Report, RegenerateIsByteIdentical) {
  fx::TempDir tmp;
  auto sc = small();
  sc.write_files(tmp.path());
  auto cfg = load_run_config([&] {
    write_text(tmp / "cfg.json", fx::Scenario::config_json("noisy"));
    return tmp / "cfg.json";
  }());
  auto in = load_inputs(cfg);
  auto client = make_client(cfg, gold_labels(in.scores, in.test));
  auto out = run_filter_then_rerank(cfg, in, *client);
  write_run(tmp / "run", cfg, out, in.test);
  const auto json = read_text(tmp / "run" / "report.json");
  const auto summary = read_text(tmp / "run" / "summary.txt");
  const auto tsv = read_text(tmp / "run" / "report.tsv");
  auto regen = regenerate_report(tmp / "run");
  EXPECT_EQ(regen.json, json);
  EXPECT_EQ(regen.summary, summary);
  EXPECT_EQ(regen.tsv, tsv);
  for (const char* f : {"decisions.jsonl", "predictions.jsonl", "run.json"}) {
    EXPECT_TRUE(std::filesystem::exists(tmp / "run" / f)) << f;
  }
}

TEST(Icl, FixedSentinelGivesNoPredictions) {
  auto sc = small(60);
  auto cfg = fx::Scenario::config("fixed_text");
  cfg.mode = Mode::IclBaseline;
  cfg.llm.mock.text = "No entities found.";
  cfg.demo_count = 2;
  auto in = sc.inputs();
  in.train = sc.syn.gold;
  auto client = sc.client(cfg);
  auto out = run_icl_baseline(cfg, in, *client);
  EXPECT_TRUE(out.predictions.empty());
  EXPECT_EQ(out.report.f1, 0.0);
  EXPECT_GT(sc.syn.gold.annotation_count(), 0u);
}

TEST(Icl, EchoedGoldScoresPerfect) {
  auto sc = small(60);
  auto cfg = fx::Scenario::config();
  cfg.mode = Mode::IclBaseline;
  cfg.demo_count = 0;
  std::map<std::string, std::string> script;
  for (const auto& s : sc.syn.gold.sentences()) {
    std::string ans = "Entities: ";
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      if (i) ans += ", ";
      ans += "(" + s.annotations[i].label + ", " + surface(s.tokens, s.annotations[i].unit.span) + ")";
    }
    if (s.annotations.empty()) ans += "No entities found.";
    script[s.sentence_id] = ans;
  }
  LlmClient client(std::make_shared<MockBackend>(MockPolicy::scripted(script, "")), {.cache_path = std::nullopt, .rate_limit_rpm = 0, .max_parallel = 4});
  auto in = sc.inputs();
  in.train = sc.syn.gold;
  auto out = run_icl_baseline(cfg, in, client);
  EXPECT_EQ(out.report.f1, 1.0);
}

TEST(Icl, DemoCountSweepTokensIncrease) {
  auto sc = small(60);
  std::uint64_t prev = 0;
  for (int k : {0, 2, 4}) {
    auto cfg = fx::Scenario::config("fixed_text");
    cfg.mode = Mode::IclBaseline;
    cfg.llm.mock.text = "No entities found.";
    cfg.demo_count = k;
    auto in = sc.inputs();
    in.train = sc.syn.gold;
    auto client = sc.client(cfg);
    auto out = run_icl_baseline(cfg, in, *client);
    EXPECT_GT(out.ledger.total_prompt_tokens, prev) << k;
    prev = out.ledger.total_prompt_tokens;
  }
}

TEST(Tune, OracleTuningOnValid) {
  auto sc = fx::hard_stratum(400, 12);
  auto cfg = fx::Scenario::config();
  cfg.tune = true;
  cfg.tune_oracle = true;
  auto in = sc.inputs();
  in.valid = sc.syn.gold;
  in.valid_scores = sc.syn.scores;
  auto res = tune_on_valid(cfg, in, nullptr);
  EXPECT_GE(res.tau, 0.6);
  EXPECT_LT(res.tau, 0.65);
}
