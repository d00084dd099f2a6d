#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftr/corpus.hpp"
#include "ftr/metrics.hpp"

namespace ftr {

inline constexpr double kDistributionTolerance = 1e-3;

// P(l | x; s) for one sample. `probs` covers the schema's extended order
// (labels..., None); labels absent from the wire record carry 0.
struct ScoreRecord {
  std::string sample_id;
  std::string sentence_id;
  Unit unit;
  std::vector<std::pair<std::string, double>> probs;

  double prob(std::string_view label) const;
  bool operator==(const ScoreRecord&) const = default;
};

struct ScoreTable {
  LabelSchema schema;
  std::map<std::string, ScoreRecord> records;  // by sample_id
  std::string provenance;
};

// Validates a single record against the schema (keys, non-negativity, sum).
ScoreRecord make_score_record(const LabelSchema& schema, std::string sample_id,
                              std::string sentence_id, Unit unit,
                              const std::map<std::string, double>& probs);

ScoreTable read_scores(std::istream& in, const LabelSchema& schema);
ScoreTable ingest_scores(const std::filesystem::path& path, const LabelSchema& schema);
void write_scores(std::ostream& out, const ScoreTable& table);
void save_scores(const ScoreTable& table, const std::filesystem::path& path);

std::vector<double> default_tau_grid();

struct RouterConfig {
  double tau = 0.6;
  int top_n = 3;
  bool inject_none = true;
  std::vector<double> grid = default_tau_grid();

  void validate() const;
};

// Highest probability over every label, None included.
double confidence(const ScoreRecord& rec);

enum class Difficulty { Easy, Hard };
std::string_view to_string(Difficulty d);

// Easy iff confidence strictly exceeds tau.
Difficulty classify_difficulty(const ScoreRecord& rec, const RouterConfig& cfg);

// Filter prediction: highest probability, ties to the earlier label in the
// extended schema order.
const std::string& filter_argmax(const ScoreRecord& rec);

Prediction filter_prediction(const ScoreRecord& rec);

struct CandidateSet {
  std::string sample_id;
  std::vector<std::string> candidates;
  double source_confidence = 0.0;
};

// Top-N labels by descending probability (ties in schema order), then None
// when requested and absent.
CandidateSet top_candidates(const ScoreRecord& rec, const RouterConfig& cfg);

// Mean of probability vectors, renormalized; provenance joined with '+'.
ScoreTable ensemble(std::span<const ScoreTable> tables);

// Baseline reranker: the candidate with the highest probability under
// `other`, ties to candidate order.
Prediction slm_rerank(const CandidateSet& cands, const ScoreTable& other);

using RerankFn = std::function<std::string(const CandidateSet&)>;

struct TuneResult {
  double tau = 0.0;
  double f1 = 0.0;
  std::size_t hard = 0;
  // (tau, f1, hard count) per grid point, grid order.
  struct Point {
    double tau;
    double f1;
    std::size_t hard;
  };
  std::vector<Point> curve;
};

// Simulates routing for every grid value and keeps the best micro F1. Ties go
// to the value routing fewer samples, then to the smaller tau. rerank_fn is
// called at most once per sample.
TuneResult tune_threshold_detailed(const ScoreTable& valid_scores, const Dataset& valid_gold,
                                   const RerankFn& rerank_fn, const RouterConfig& cfg);

double tune_threshold(const ScoreTable& valid_scores, const Dataset& valid_gold,
                      const RerankFn& rerank_fn, const RouterConfig& cfg);

}  // namespace ftr
