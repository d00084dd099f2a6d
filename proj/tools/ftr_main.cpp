// ftr: command line front end for the filter-then-rerank pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ftr/corpus.hpp"
#include "ftr/error.hpp"
#include "ftr/filtering.hpp"
#include "ftr/pipeline.hpp"
#include "ftr/retrieval.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitEndpoint = 4;

int exit_code_for(const ftr::Error& e) {
  switch (ftr::classify(e.code())) {
    case ftr::ErrorClass::Config: return kExitConfig;
    case ftr::ErrorClass::Data: return kExitData;
    case ftr::ErrorClass::Endpoint: return kExitEndpoint;
  }
  return kExitData;
}

// Flags that mirror config keys; unset flags leave the file's value alone.
struct Overrides {
  std::string mode;
  std::optional<double> tau;
  std::optional<int> top_n;
  std::optional<std::uint64_t> seed;
  std::optional<int> demo_count;
  std::string demo_strategy;
  std::string out_dir;
  std::string backend;
  std::string mock_policy;
  bool no_cot = false;
  bool no_demo = false;
  bool no_label_filter = false;
  bool no_adaptive = false;
  bool tune = false;
  bool tune_oracle = false;
  bool mask_wall_clock = false;

  void attach(CLI::App* app) {
    app->add_option("--mode", mode, "icl_baseline | filter_only | filter_then_rerank | slm_rerank_baseline");
    app->add_option("--tau", tau, "confidence threshold");
    app->add_option("--top-n", top_n, "candidate labels kept by the filter");
    app->add_option("--seed", seed, "seed for demo sampling and mocks");
    app->add_option("--demo-count", demo_count, "demos per prompt");
    app->add_option("--demo-strategy", demo_strategy, "random | embedding");
    app->add_option("--out-dir", out_dir, "output directory");
    app->add_option("--backend", backend, "http | mock");
    app->add_option("--mock-policy", mock_policy, "oracle | first_choice | fixed_text | noisy");
    app->add_flag("--no-cot", no_cot, "drop analyses from demos");
    app->add_flag("--no-demo", no_demo, "zero-shot prompts");
    app->add_flag("--no-label-filter", no_label_filter, "offer every label as a choice");
    app->add_flag("--no-adaptive", no_adaptive, "route every sample to the LLM");
    app->add_flag("--tune", tune, "tune tau on the validation split first");
    app->add_flag("--tune-oracle", tune_oracle, "tune with gold answers instead of LLM calls");
    app->add_flag("--mask-wall-clock", mask_wall_clock, "null out timing fields in outputs");
  }

  void apply(ftr::RunConfig& c) const {
    if (!mode.empty()) c.mode = ftr::parse_mode(mode);
    if (tau) c.router.tau = *tau;
    if (top_n) c.router.top_n = *top_n;
    if (seed) c.seed = *seed;
    if (demo_count) c.demo_count = *demo_count;
    if (!demo_strategy.empty()) c.demo_strategy = ftr::parse_demo_strategy(demo_strategy);
    if (!out_dir.empty()) c.paths.out_dir = fs::absolute(out_dir).lexically_normal();
    if (!backend.empty()) c.llm.backend = backend;
    if (!mock_policy.empty()) c.llm.mock.policy = mock_policy;
    if (no_cot) c.ablations.cot = false;
    if (no_demo) c.ablations.demo = false;
    if (no_label_filter) c.ablations.label_filter = false;
    if (no_adaptive) c.ablations.adaptive = false;
    if (tune) c.tune = true;
    if (tune_oracle) c.tune = c.tune_oracle = true;
    if (mask_wall_clock) c.mask_wall_clock = true;
    c.validate();
  }
};

ftr::RunConfig load_config(const std::string& path, const Overrides& ov) {
  auto cfg = ftr::load_run_config(path);
  ov.apply(cfg);
  return cfg;
}

fs::path out_dir_of(const ftr::RunConfig& cfg) {
  if (cfg.paths.out_dir.empty()) throw ftr::Error(ftr::ErrorCode::ConfigError, "no output directory (paths.out_dir)");
  return cfg.paths.out_dir;
}

std::unique_ptr<ftr::LlmClient> client_for(const ftr::RunConfig& cfg, const ftr::RunInputs& in) {
  return ftr::make_client(cfg, ftr::gold_labels(in.scores, in.test));
}

void print_tune(const ftr::TuneResult& t) {
  std::cout << "tau\tf1\trouted\n";
  for (const auto& p : t.curve) {
    std::printf("%g\t%.4f\t%zu\n", p.tau, p.f1, p.hard);
  }
  std::printf("best tau %g (valid F1 %.4f, %zu routed)\n", t.tau, t.f1, t.hard);
}

ftr::RunOutput execute(ftr::RunConfig& cfg, const ftr::RunInputs& in, ftr::LlmClient* client) {
  std::optional<ftr::TuneResult> tuned;
  if (cfg.tune) {
    tuned = ftr::tune_on_valid(cfg, in, client);
    cfg.router.tau = tuned->tau;
  }
  ftr::RunOutput out;
  switch (cfg.mode) {
    case ftr::Mode::FilterOnly: out = ftr::run_filter_only(cfg, in); break;
    case ftr::Mode::SlmRerankBaseline: out = ftr::run_slm_rerank_baseline(cfg, in); break;
    case ftr::Mode::FilterThenRerank: out = ftr::run_filter_then_rerank(cfg, in, *client); break;
    case ftr::Mode::IclBaseline: throw ftr::Error(ftr::ErrorCode::ConfigError, "icl_baseline has its own path");
  }
  if (client != nullptr) out.ledger = client->ledger().snapshot();
  out.tuned = tuned;
  return out;
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  auto cfg = load_config(config_path, ov);
  const auto dir = out_dir_of(cfg);
  const auto in = ftr::load_inputs(cfg);
  const bool needs_llm = cfg.mode == ftr::Mode::FilterThenRerank || cfg.mode == ftr::Mode::IclBaseline ||
                         (cfg.tune && !cfg.tune_oracle);
  auto client = needs_llm ? client_for(cfg, in) : nullptr;

  if (cfg.mode == ftr::Mode::IclBaseline) {
    const auto out = ftr::run_icl_baseline(cfg, in, *client);
    nlohmann::ordered_json j;
    j["mode"] = "icl_baseline";
    j["f1"] = out.report.f1;
    j["precision"] = out.report.precision;
    j["recall"] = out.report.recall;
    j["predictions"] = out.predictions.size();
    j["dropped_unknown_labels"] = out.dropped_unknown;
    j["unaligned_surfaces"] = out.unaligned;
    j["ambiguous_surfaces"] = out.ambiguous;
    j["unparsed_responses"] = out.unparsed;
    j["cost"] = nlohmann::ordered_json::parse(ftr::run_meta_json(cfg, out.ledger, std::nullopt))["ledger"];
    j["config"] = nlohmann::ordered_json::parse(ftr::config_echo_json(cfg));
    ftr::write_text(dir / "predictions.jsonl", ftr::predictions_jsonl(out.predictions));
    ftr::write_text(dir / "report.json", j.dump(2) + "\n");
    std::printf("icl_baseline F1 %.1f (%zu predictions, %zu unknown labels dropped)\n", out.report.f1 * 100.0,
                out.predictions.size(), out.dropped_unknown);
    return kExitOk;
  }

  const auto out = execute(cfg, in, client.get());
  ftr::write_run(dir, cfg, out, in.test);
  std::cout << ftr::read_text(dir / "summary.txt");
  return kExitOk;
}

int cmd_tune(const std::string& config_path, Overrides ov) {
  ov.tune = true;
  auto cfg = load_config(config_path, ov);
  const auto in = ftr::load_inputs(cfg);
  std::unique_ptr<ftr::LlmClient> client;
  if (!cfg.tune_oracle) client = ftr::make_client(cfg, ftr::gold_labels(*in.valid_scores, *in.valid));
  const auto t = ftr::tune_on_valid(cfg, in, client.get());
  print_tune(t);
  if (!cfg.paths.out_dir.empty()) {
    ftr::LedgerSnapshot ledger;
    if (client) ledger = client->ledger().snapshot();
    ftr::write_text(cfg.paths.out_dir / "tune.json", ftr::run_meta_json(cfg, ledger, t));
  }
  if (cfg.tune_oracle) std::cout << "note: tuned with gold answers, not LLM reranking\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const Overrides& ov) {
  auto base = load_config(config_path, ov);
  base.mode = ftr::Mode::FilterThenRerank;
  const auto dir = out_dir_of(base);
  const auto in = ftr::load_inputs(base);

  struct Row {
    const char* name;
    bool cot, demo, lf, ad;
  };
  const Row rows[] = {
      {"full", true, true, true, true},
      {"no_cot", false, true, true, true},
      {"no_cot_no_demo", false, false, true, true},
      {"no_cot_no_demo_no_lf", false, false, false, true},
      {"no_cot_no_demo_no_lf_no_ad", false, false, false, false},
  };
  std::ostringstream tsv;
  tsv << "row\tcot\tdemo\tlabel_filter\tadaptive\tf1\tf1_before\trouted\tllm_calls\tprompt_tokens\n";
  for (const auto& r : rows) {
    auto cfg = base;
    cfg.ablations = {r.cot, r.demo, r.lf, r.ad};
    auto client = client_for(cfg, in);
    const auto out = execute(cfg, in, client.get());
    ftr::write_run(dir / r.name, cfg, out, in.test);
    tsv << r.name << '\t' << r.cot << '\t' << r.demo << '\t' << r.lf << '\t' << r.ad << '\t'
        << out.after.f1 << '\t' << out.before.f1 << '\t' << out.after.rerank_rows.reranked << '\t'
        << out.ledger.network_calls() << '\t' << out.ledger.total_prompt_tokens << '\n';
  }
  ftr::write_text(dir / "ablation.tsv", tsv.str());
  std::cout << tsv.str();
  return kExitOk;
}

int cmd_sample(const std::string& schema_path, const std::string& input, int k, std::uint64_t seed,
               double negative_ratio, const std::string& test_input, std::size_t test_size,
               const std::string& out_dir) {
  const auto schema = ftr::LabelSchema::load(schema_path);
  const auto full = ftr::load_dataset(input, schema);
  ftr::SamplerConfig sc;
  sc.k = k;
  sc.seed = seed;
  if (negative_ratio < 0) throw ftr::Error(ftr::ErrorCode::ConfigError, "negative ratio must be >= 0");
  sc.negative_ratio = {static_cast<std::uint64_t>(negative_ratio * 1000.0 + 0.5), 1000};
  const auto sampled = ftr::balance_negatives(ftr::greedy_kshot_sample(full, sc), full, sc);
  const auto [train, valid] = ftr::split_train_valid(sampled, sc);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  ftr::save_dataset(train, dir / "train.jsonl");
  ftr::save_dataset(valid, dir / "valid.jsonl");
  std::printf("sampled %zu sentences: train %zu, valid %zu\n", sampled.size(), train.size(), valid.size());
  if (!test_input.empty()) {
    const auto test = ftr::load_dataset(test_input, schema);
    const auto small = ftr::downsample_test(test, test_size == 0 ? test.size() : test_size, seed);
    ftr::save_dataset(small, dir / "test.jsonl");
    std::printf("test: %zu sentences\n", small.size());
  }
  return kExitOk;
}

int cmd_ingest(const std::string& schema_path, const std::vector<std::string>& scores,
               const std::vector<std::string>& embeddings, const std::string& out) {
  if (scores.empty() && embeddings.empty()) {
    throw ftr::Error(ftr::ErrorCode::ConfigError, "nothing to ingest; pass --scores or --embeddings");
  }
  if (!scores.empty()) {
    if (schema_path.empty()) throw ftr::Error(ftr::ErrorCode::ConfigError, "--scores needs --schema");
    const auto schema = ftr::LabelSchema::load(schema_path);
    std::vector<ftr::ScoreTable> tables;
    for (const auto& p : scores) {
      tables.push_back(ftr::ingest_scores(p, schema));
      std::printf("%s: %zu samples ok\n", p.c_str(), tables.back().records.size());
    }
    if (!out.empty()) {
      const auto merged = tables.size() == 1 ? tables.front() : ftr::ensemble(tables);
      ftr::save_scores(merged, out);
      std::printf("wrote %s (%s)\n", out.c_str(), merged.provenance.c_str());
    }
  }
  for (const auto& p : embeddings) {
    const auto t = ftr::load_embeddings(p);
    std::printf("%s: %zu vectors of dim %zu ok\n", p.c_str(), t.size(), t.dim());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive filter-then-rerank for few-shot information extraction"};
  app.require_subcommand(1);

  std::string config;
  Overrides ov;

  auto* run = app.add_subcommand("run", "run one mode and write decisions and reports");
  run->add_option("-c,--config", config, "run config (JSON)")->required();
  ov.attach(run);

  auto* tune = app.add_subcommand("tune", "pick tau on the validation split");
  tune->add_option("-c,--config", config, "run config (JSON)")->required();
  ov.attach(tune);

  auto* ablate = app.add_subcommand("ablate", "run the CoT / Demo / LF / AD ablation rows");
  ablate->add_option("-c,--config", config, "run config (JSON)")->required();
  ov.attach(ablate);

  std::string run_dir;
  auto* report = app.add_subcommand("report", "rebuild report files from a run directory");
  report->add_option("--run-dir", run_dir, "directory written by 'run'")->required();

  std::string schema, input, test_input, out_dir, out;
  int k = 5;
  std::uint64_t seed = 0;
  double negative_ratio = 1.0;
  std::size_t test_size = 0;
  auto* sample = app.add_subcommand("sample", "draw a K-shot train/valid split");
  sample->add_option("--schema", schema, "label schema (JSON)")->required();
  sample->add_option("--input", input, "full training pool (JSONL)")->required();
  sample->add_option("--k", k, "shots per label");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--negative-ratio", negative_ratio, "negative sentences per positive one");
  sample->add_option("--test-input", test_input, "full test set to downsample");
  sample->add_option("--test-size", test_size, "sentences kept from the test set");
  sample->add_option("--out-dir", out_dir, "output directory")->required();

  std::vector<std::string> scores, embeddings;
  auto* ingest = app.add_subcommand("ingest", "validate score and embedding files");
  ingest->add_option("--schema", schema, "label schema (JSON)");
  ingest->add_option("--scores", scores, "score files; several are ensembled with --out");
  ingest->add_option("--embeddings", embeddings, "embedding files");
  ingest->add_option("--out", out, "write the validated (or ensembled) scores here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, ov);
    if (*tune) return cmd_tune(config, ov);
    if (*ablate) return cmd_ablate(config, ov);
    if (*report) {
      const auto files = ftr::regenerate_report(run_dir);
      std::cout << files.summary;
      return kExitOk;
    }
    if (*sample) return cmd_sample(schema, input, k, seed, negative_ratio, test_input, test_size, out_dir);
    if (*ingest) return cmd_ingest(schema, scores, embeddings, out);
  } catch (const ftr::Error& e) {
    std::cerr << "ftr: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "ftr: malformed JSON: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "ftr: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
