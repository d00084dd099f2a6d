#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ftr/corpus.hpp"

namespace ftr {

struct Prediction {
  std::string sample_id;
  std::string sentence_id;
  Unit unit;
  std::string label;  // may be "None"
  double confidence = 1.0;

  bool operator==(const Prediction&) const = default;
};

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); every 0/0 is 0.
Scores score(const Counts& c);

struct BucketRow {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n = 0;
  Counts before;
  Counts after;
  double f1_before = 0.0;
  double f1_after = 0.0;
  std::size_t negatives = 0;  // samples whose gold label is None
  std::size_t positives = 0;
  // negatives / positives; nullopt when the bucket has no positives.
  std::optional<double> neg_pos_ratio;
};

struct RerankRows {
  std::size_t reranked = 0;
  std::size_t total = 0;
  double f1_before_on_reranked = 0.0;
  double f1_after_on_reranked = 0.0;
  double reranked_ratio = 0.0;
};

struct EvalReport {
  Counts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<BucketRow> bucket_rows;
  RerankRows rerank_rows;
  // Gold units never proposed as a sample; they only appear as fn in the
  // overall counts, never inside a bucket.
  std::size_t uncovered_gold = 0;
};

EvalReport make_report(const Counts& c);

// Exact-unit micro F1. "None" predictions are ignored; duplicate predictions
// of one gold triple match it at most once.
EvalReport micro_f1(std::span<const Prediction> preds, const Dataset& gold);

enum class HeadRule { LastToken, FirstToken };

int head_token(const Span& span, HeadRule rule);

// Argument matching on (event label, role label, head token) for EAE.
EvalReport head_f1(std::span<const Prediction> preds, const Dataset& gold,
                   HeadRule rule = HeadRule::LastToken);

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> edges{0.0, 0.6, 0.9, 1.0};
  return edges;
}

// Buckets are [e_i, e_{i+1}), the last one closed at 1. Samples are placed
// by their before-confidence; before and after must list the same sample_ids.
std::vector<BucketRow> confidence_buckets(std::span<const Prediction> before,
                                          std::span<const Prediction> after,
                                          const Dataset& gold,
                                          const std::vector<double>& edges);

// F1 on the reranked subset before and after reranking, and its share of all
// samples.
RerankRows reranked_subset(std::span<const Prediction> before,
                           std::span<const Prediction> after,
                           const std::unordered_set<std::string>& routed_ids,
                           const Dataset& gold);

// Per-sample accounting used by the bucket and subset breakdowns: tp/fp/fn of
// one prediction against the gold labels on its unit.
Counts sample_counts(const Prediction& pred, const Dataset& gold);

// Gold units (per sentence) that no prediction covers.
std::size_t uncovered_gold_units(std::span<const Prediction> samples, const Dataset& gold);

// name<TAB>value per line.
std::string to_tsv(const EvalReport& report);
std::string to_json(const EvalReport& report);

}  // namespace ftr
