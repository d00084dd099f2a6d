#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ftr/corpus.hpp"
#include "ftr/filtering.hpp"
#include "ftr/llm_client.hpp"
#include "ftr/metrics.hpp"
#include "ftr/prompting.hpp"
#include "ftr/retrieval.hpp"

namespace ftr {

enum class Mode { IclBaseline, FilterOnly, FilterThenRerank, SlmRerankBaseline };
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

enum class DemoStrategy { Random, Embedding };
std::string_view to_string(DemoStrategy s);
DemoStrategy parse_demo_strategy(std::string_view s);

struct Ablations {
  bool cot = true;
  bool demo = true;
  bool label_filter = true;
  bool adaptive = true;
};

struct RunPaths {
  std::filesystem::path schema;
  std::filesystem::path test;
  std::vector<std::filesystem::path> scores;  // more than one: ensembled
  std::filesystem::path rerank_scores;        // slm_rerank_baseline
  std::filesystem::path templates;
  std::filesystem::path demos;
  std::filesystem::path embeddings;
  std::filesystem::path train;  // ICL demo pool
  std::filesystem::path valid;
  std::filesystem::path valid_scores;
  std::filesystem::path cache;
  std::filesystem::path out_dir;
};

struct MockSettings {
  std::string policy = "first_choice";  // oracle, first_choice, fixed_text, noisy
  std::string text;
  double p = 1.0;
  std::uint64_t seed = 0;
  std::int64_t latency_ms = 0;
};

struct LlmSettings {
  std::string backend = "http";  // http or mock
  std::string endpoint;
  std::string api_key;
  std::string model;
  int max_output_tokens = 256;
  double temperature = 0.0;
  std::vector<std::string> stop;
  double rate_limit_rpm = 20.0;
  int max_parallel = 4;
  int timeout_s = 60;
  int max_retries = 4;
  MockSettings mock;
};

struct RunConfig {
  Mode mode = Mode::FilterThenRerank;
  RouterConfig router;
  bool tune = false;         // tune tau on the validation split before running
  bool tune_oracle = false;  // gold stands in for the LLM while tuning
  Ablations ablations;
  int demo_count = 4;
  DemoStrategy demo_strategy = DemoStrategy::Random;
  std::string instruction_variant = "I0";
  bool shuffle_choices = false;
  std::uint64_t seed = 0;
  std::vector<double> bucket_edges = default_bucket_edges();
  HeadRule head_rule = HeadRule::LastToken;
  bool mask_wall_clock = false;
  RunPaths paths;
  LlmSettings llm;

  void validate() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// Replaces ${NAME} and ${NAME:-fallback}; an unset NAME without fallback is
// a ConfigError.
std::string interpolate_env(std::string_view text, const EnvLookup& env);

// JSON config; string values are env-interpolated and relative paths resolve
// against base_dir. Unknown keys are rejected.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir,
                           const EnvLookup& env = process_env);
RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

// Everything except credentials, for reproducibility echoes.
std::string config_echo_json(const RunConfig& cfg);

struct RunInputs {
  Dataset test;
  ScoreTable scores;
  std::optional<ScoreTable> rerank_scores;
  std::optional<TemplateSet> templates;
  std::vector<DemoRecord> demos;
  std::optional<EmbeddingTable> embeddings;
  std::optional<Dataset> train;
  std::optional<Dataset> valid;
  std::optional<ScoreTable> valid_scores;
};

// Loads what the mode needs; missing required paths are ConfigErrors.
RunInputs load_inputs(const RunConfig& cfg);

// Gold label per sample (None when the unit carries no annotation).
std::map<std::string, std::string> gold_labels(const ScoreTable& scores, const Dataset& gold);

std::shared_ptr<Backend> make_backend(const LlmSettings& llm, const std::map<std::string, std::string>& gold);
std::unique_ptr<LlmClient> make_client(const RunConfig& cfg, const std::map<std::string, std::string>& gold);

struct RerankDecision {
  std::string sample_id;
  std::string sentence_id;
  Unit unit;
  Difficulty routed = Difficulty::Easy;
  double confidence = 0.0;
  std::string before_label;
  std::string after_label;
  std::vector<std::string> candidates;       // empty when Easy
  std::optional<ParseStatus> parse_status;   // set when Hard
  std::optional<std::int64_t> llm_latency_ms;
  std::optional<std::size_t> llm_tokens;

  bool operator==(const RerankDecision&) const = default;
};

struct RunOutput {
  std::vector<RerankDecision> decisions;  // sorted by sample_id
  EvalReport before;
  EvalReport after;
  LedgerSnapshot ledger;
  std::optional<TuneResult> tuned;
};

// The LLM-facing part of a hard sample, shared by runs and tuning.
class McqReranker {
 public:
  McqReranker(const RunConfig& cfg, const LabelSchema& schema, const TemplateSet& tset,
              const std::vector<DemoRecord>& demos, const EmbeddingTable* emb, LlmClient& client);

  struct Outcome {
    std::string label;
    ParseStatus status = ParseStatus::Failed;
    std::optional<std::int64_t> latency_ms;
    std::optional<std::size_t> tokens;
  };

  // Effective router: label filtering off widens top_n to every label.
  const RouterConfig& router() const noexcept { return router_; }

  Outcome rerank(const ScoreRecord& rec, const SentenceRecord& sentence, const CandidateSet& cands) const;
  PromptBundle prompt(const ScoreRecord& rec, const SentenceRecord& sentence, const CandidateSet& cands) const;

 private:
  std::vector<DemoExample> pick_demos(const ScoreRecord& rec) const;

  const RunConfig& cfg_;
  const TemplateSet& tset_;
  const EmbeddingTable* emb_;
  LlmClient& client_;
  RouterConfig router_;
  bool cot_;
  std::vector<DemoExample> examples_;
  Dataset pool_;
  std::map<std::string, std::size_t> example_index_;
};

RunOutput run_filter_only(const RunConfig& cfg, const RunInputs& in);
RunOutput run_slm_rerank_baseline(const RunConfig& cfg, const RunInputs& in);
RunOutput run_filter_then_rerank(const RunConfig& cfg, const RunInputs& in, LlmClient& client);

// Tunes tau on the validation split. With cfg.tune_oracle the gold label
// answers instead of the LLM.
TuneResult tune_on_valid(const RunConfig& cfg, const RunInputs& in, LlmClient* client);

struct IclOutput {
  std::vector<Prediction> predictions;
  EvalReport report;
  LedgerSnapshot ledger;
  std::size_t dropped_unknown = 0;
  std::size_t unaligned = 0;
  std::size_t ambiguous = 0;
  std::size_t unparsed = 0;
};

IclOutput run_icl_baseline(const RunConfig& cfg, const RunInputs& in, LlmClient& client);

// Decisions file: one JSON object per line.
std::string decisions_jsonl(const std::vector<RerankDecision>& decisions, bool mask_wall_clock);
std::vector<RerankDecision> parse_decisions(std::string_view text);

std::vector<Prediction> after_predictions(const std::vector<RerankDecision>& decisions);
std::vector<Prediction> before_predictions(const std::vector<RerankDecision>& decisions);
std::string predictions_jsonl(const std::vector<Prediction>& preds);

struct ReportFiles {
  std::string json;
  std::string summary;
  std::string tsv;
};

// Pure function of its inputs, so a report regenerated from saved decisions
// is byte-identical to the original.
ReportFiles render_report(const std::vector<RerankDecision>& decisions, const Dataset& gold,
                          const std::string& run_meta_json, const std::vector<double>& edges,
                          HeadRule head_rule);

// run.json: mode, config echo, ledger.
std::string run_meta_json(const RunConfig& cfg, const LedgerSnapshot& ledger,
                          const std::optional<TuneResult>& tuned);

// Writes decisions.jsonl, predictions.jsonl, run.json, report.json,
// summary.txt and report.tsv into dir.
void write_run(const std::filesystem::path& dir, const RunConfig& cfg, const RunOutput& out,
               const Dataset& gold);

// Rebuilds report.json, summary.txt and report.tsv from a run directory.
ReportFiles regenerate_report(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ftr
