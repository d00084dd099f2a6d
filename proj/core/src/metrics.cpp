#include "ftr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "format.hpp"
#include "ftr/error.hpp"
#include "json_util.hpp"

namespace ftr {

using detail::ojson;

Scores score(const Counts& c) {
  Scores s;
  s.precision = (c.tp + c.fp) == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  s.recall = (c.tp + c.fn) == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

EvalReport make_report(const Counts& c) {
  EvalReport r;
  r.counts = c;
  const auto s = score(c);
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  return r;
}

namespace {

void require_known_sentences(std::span<const Prediction> preds, const Dataset& gold) {
  for (const auto& p : preds) {
    if (gold.find(p.sentence_id) == nullptr) {
      throw Error(ErrorCode::UnknownSentence, "prediction " + p.sample_id +
                                                  " references unknown sentence '" + p.sentence_id + "'");
    }
  }
}

// Multiset matching: tp = sum over keys of min(#pred, #gold).
template <typename Key>
Counts match(const std::map<Key, std::size_t>& pred_keys, const std::map<Key, std::size_t>& gold_keys,
             std::size_t n_pred, std::size_t n_gold) {
  Counts c;
  for (const auto& [key, n] : pred_keys) {
    auto it = gold_keys.find(key);
    if (it != gold_keys.end()) c.tp += std::min(n, it->second);
  }
  c.fp = n_pred - c.tp;
  c.fn = n_gold - c.tp;
  return c;
}

using UnitKey = std::pair<std::string, Unit>;

std::map<UnitKey, std::vector<std::string>> gold_by_unit(const Dataset& gold) {
  std::map<UnitKey, std::vector<std::string>> out;
  for (const auto& s : gold.sentences()) {
    for (const auto& a : s.annotations) out[{s.sentence_id, a.unit}].push_back(a.label);
  }
  return out;
}

Counts counts_against(const Prediction& p, const std::vector<std::string>* labels) {
  Counts c;
  const bool is_none = p.label == kNoneLabel;
  const bool hit = !is_none && labels != nullptr &&
                   std::find(labels->begin(), labels->end(), p.label) != labels->end();
  c.tp = hit ? 1 : 0;
  c.fp = (!is_none && !hit) ? 1 : 0;
  c.fn = (labels ? labels->size() : 0) - c.tp;
  return c;
}

}  // namespace

EvalReport micro_f1(std::span<const Prediction> preds, const Dataset& gold) {
  require_known_sentences(preds, gold);
  using Key = std::tuple<std::string, Unit, std::string>;
  std::map<Key, std::size_t> pred_keys;
  std::map<Key, std::size_t> gold_keys;
  std::size_t n_pred = 0;
  for (const auto& p : preds) {
    if (p.label == kNoneLabel) continue;
    ++pred_keys[{p.sentence_id, p.unit, p.label}];
    ++n_pred;
  }
  std::size_t n_gold = 0;
  for (const auto& s : gold.sentences()) {
    for (const auto& a : s.annotations) {
      ++gold_keys[{s.sentence_id, a.unit, a.label}];
      ++n_gold;
    }
  }
  return make_report(match(pred_keys, gold_keys, n_pred, n_gold));
}

int head_token(const Span& span, HeadRule rule) {
  return rule == HeadRule::LastToken ? span.end - 1 : span.start;
}

EvalReport head_f1(std::span<const Prediction> preds, const Dataset& gold, HeadRule rule) {
  if (gold.schema().task() != Task::EAE) {
    throw Error(ErrorCode::WrongTask, "head F1 applies to EAE only");
  }
  require_known_sentences(preds, gold);
  using Key = std::tuple<std::string, std::string, std::string, int>;
  std::map<Key, std::size_t> pred_keys;
  std::map<Key, std::size_t> gold_keys;
  std::size_t n_pred = 0;
  for (const auto& p : preds) {
    if (p.label == kNoneLabel) continue;
    ++pred_keys[{p.sentence_id, p.unit.event, p.label, head_token(p.unit.span, rule)}];
    ++n_pred;
  }
  std::size_t n_gold = 0;
  for (const auto& s : gold.sentences()) {
    for (const auto& a : s.annotations) {
      ++gold_keys[{s.sentence_id, a.unit.event, a.label, head_token(a.unit.span, rule)}];
      ++n_gold;
    }
  }
  return make_report(match(pred_keys, gold_keys, n_pred, n_gold));
}

Counts sample_counts(const Prediction& pred, const Dataset& gold) {
  const auto* sentence = gold.find(pred.sentence_id);
  if (sentence == nullptr) {
    throw Error(ErrorCode::UnknownSentence, "unknown sentence '" + pred.sentence_id + "'");
  }
  std::vector<std::string> labels;
  for (const auto& a : sentence->annotations) {
    if (a.unit == pred.unit) labels.push_back(a.label);
  }
  return counts_against(pred, &labels);
}

std::size_t uncovered_gold_units(std::span<const Prediction> samples, const Dataset& gold) {
  std::map<UnitKey, bool> covered;
  for (const auto& p : samples) covered[{p.sentence_id, p.unit}] = true;
  std::size_t n = 0;
  for (const auto& s : gold.sentences()) {
    for (const auto& a : s.annotations) {
      if (!covered.count({s.sentence_id, a.unit})) ++n;
    }
  }
  return n;
}

std::vector<BucketRow> confidence_buckets(std::span<const Prediction> before,
                                          std::span<const Prediction> after,
                                          const Dataset& gold, const std::vector<double>& edges) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0) {
    throw Error(ErrorCode::BadEdges, "edges must start at 0 and end at 1");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw Error(ErrorCode::BadEdges, "edges must be strictly increasing");
  }
  require_known_sentences(before, gold);
  require_known_sentences(after, gold);

  std::map<std::string, const Prediction*> after_by_id;
  for (const auto& p : after) after_by_id[p.sample_id] = &p;
  const auto gold_index = gold_by_unit(gold);

  std::vector<BucketRow> rows(edges.size() - 1);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].lo = edges[b];
    rows[b].hi = edges[b + 1];
  }
  for (const auto& p : before) {
    auto it = after_by_id.find(p.sample_id);
    if (it == after_by_id.end()) {
      throw Error(ErrorCode::SampleMismatch, "sample " + p.sample_id + " has no after-prediction");
    }
    const double conf = std::clamp(p.confidence, 0.0, 1.0);
    auto pos = std::upper_bound(edges.begin(), edges.end(), conf) - edges.begin();
    std::size_t b = pos == 0 ? 0 : static_cast<std::size_t>(pos - 1);
    b = std::min(b, rows.size() - 1);

    auto g = gold_index.find({p.sentence_id, p.unit});
    const auto* labels = g == gold_index.end() ? nullptr : &g->second;
    auto& row = rows[b];
    ++row.n;
    row.before += counts_against(p, labels);
    row.after += counts_against(*it->second, labels);
    (labels == nullptr ? row.negatives : row.positives) += 1;
  }
  for (auto& row : rows) {
    row.f1_before = score(row.before).f1;
    row.f1_after = score(row.after).f1;
    if (row.positives > 0) {
      row.neg_pos_ratio = static_cast<double>(row.negatives) / static_cast<double>(row.positives);
    }
  }
  return rows;
}

RerankRows reranked_subset(std::span<const Prediction> before, std::span<const Prediction> after,
                           const std::unordered_set<std::string>& routed_ids, const Dataset& gold) {
  const auto gold_index = gold_by_unit(gold);
  std::map<std::string, const Prediction*> after_by_id;
  for (const auto& p : after) after_by_id[p.sample_id] = &p;

  RerankRows rows;
  rows.total = before.size();
  Counts cb;
  Counts ca;
  for (const auto& p : before) {
    if (!routed_ids.count(p.sample_id)) continue;
    auto it = after_by_id.find(p.sample_id);
    if (it == after_by_id.end()) {
      throw Error(ErrorCode::SampleMismatch, "sample " + p.sample_id + " has no after-prediction");
    }
    auto g = gold_index.find({p.sentence_id, p.unit});
    const auto* labels = g == gold_index.end() ? nullptr : &g->second;
    cb += counts_against(p, labels);
    ca += counts_against(*it->second, labels);
    ++rows.reranked;
  }
  rows.f1_before_on_reranked = score(cb).f1;
  rows.f1_after_on_reranked = score(ca).f1;
  rows.reranked_ratio =
      rows.total == 0 ? 0.0 : static_cast<double>(rows.reranked) / static_cast<double>(rows.total);
  return rows;
}

std::string to_tsv(const EvalReport& r) {
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& value) {
    out << name << '\t' << value << '\n';
  };
  line("precision", detail::format_double(r.precision));
  line("recall", detail::format_double(r.recall));
  line("f1", detail::format_double(r.f1));
  line("tp", std::to_string(r.counts.tp));
  line("fp", std::to_string(r.counts.fp));
  line("fn", std::to_string(r.counts.fn));
  line("uncovered_gold", std::to_string(r.uncovered_gold));
  line("reranked", std::to_string(r.rerank_rows.reranked));
  line("samples", std::to_string(r.rerank_rows.total));
  line("reranked_ratio", detail::format_double(r.rerank_rows.reranked_ratio));
  line("f1_before_on_reranked", detail::format_double(r.rerank_rows.f1_before_on_reranked));
  line("f1_after_on_reranked", detail::format_double(r.rerank_rows.f1_after_on_reranked));
  for (std::size_t i = 0; i < r.bucket_rows.size(); ++i) {
    const auto& b = r.bucket_rows[i];
    const std::string p = "bucket" + std::to_string(i) + ".";
    line(p + "lo", detail::format_double(b.lo));
    line(p + "hi", detail::format_double(b.hi));
    line(p + "n", std::to_string(b.n));
    line(p + "f1_before", detail::format_double(b.f1_before));
    line(p + "f1_after", detail::format_double(b.f1_after));
    line(p + "negatives", std::to_string(b.negatives));
    line(p + "positives", std::to_string(b.positives));
    line(p + "neg_pos_ratio", b.neg_pos_ratio ? detail::format_double(*b.neg_pos_ratio) : "nan");
  }
  return out.str();
}

namespace {

ojson counts_json(const Counts& c) {
  ojson j = ojson::object();
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  return j;
}

}  // namespace

std::string to_json(const EvalReport& r) {
  ojson j = ojson::object();
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["counts"] = counts_json(r.counts);
  j["uncovered_gold"] = r.uncovered_gold;
  ojson rr = ojson::object();
  rr["reranked"] = r.rerank_rows.reranked;
  rr["samples"] = r.rerank_rows.total;
  rr["reranked_ratio"] = r.rerank_rows.reranked_ratio;
  rr["f1_before_on_reranked"] = r.rerank_rows.f1_before_on_reranked;
  rr["f1_after_on_reranked"] = r.rerank_rows.f1_after_on_reranked;
  j["rerank"] = std::move(rr);
  ojson buckets = ojson::array();
  for (const auto& b : r.bucket_rows) {
    ojson bj = ojson::object();
    bj["lo"] = b.lo;
    bj["hi"] = b.hi;
    bj["n"] = b.n;
    bj["f1_before"] = b.f1_before;
    bj["f1_after"] = b.f1_after;
    bj["before"] = counts_json(b.before);
    bj["after"] = counts_json(b.after);
    bj["negatives"] = b.negatives;
    bj["positives"] = b.positives;
    bj["neg_pos_ratio"] = b.neg_pos_ratio ? ojson(*b.neg_pos_ratio) : ojson(nullptr);
    buckets.push_back(std::move(bj));
  }
  j["buckets"] = std::move(buckets);
  return j.dump(2);
}

}  // namespace ftr
