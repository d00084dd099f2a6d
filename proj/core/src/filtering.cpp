#include "ftr/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "ftr/error.hpp"
#include "json_util.hpp"

namespace ftr {

using detail::ojson;

double ScoreRecord::prob(std::string_view label) const {
  for (const auto& [l, p] : probs) {
    if (l == label) return p;
  }
  return 0.0;
}

ScoreRecord make_score_record(const LabelSchema& schema, std::string sample_id,
                              std::string sentence_id, Unit unit,
                              const std::map<std::string, double>& probs) {
  if (unit.kind != unit_kind_for(schema.task())) {
    throw Error(ErrorCode::MalformedRecord, sample_id + ": unit kind does not match schema task");
  }
  if (unit.span.start >= unit.span.end || unit.span.start < 0) {
    throw Error(ErrorCode::MalformedRecord, sample_id + ": empty or negative span");
  }
  std::vector<double> dense(schema.extended_size(), 0.0);
  for (const auto& [label, p] : probs) {
    auto idx = schema.extended_index(label);
    if (!idx) throw Error(ErrorCode::UnknownLabel, sample_id + ": label '" + label + "'");
    if (!std::isfinite(p) || p < 0.0) {
      throw Error(ErrorCode::BadDistribution, sample_id + ": probability for '" + label +
                                                  "' must be finite and non-negative");
    }
    dense[*idx] = p;
  }
  double sum = 0.0;
  for (double p : dense) sum += p;
  if (std::fabs(sum - 1.0) > kDistributionTolerance) {
    throw Error(ErrorCode::BadDistribution,
                sample_id + ": probabilities sum to " + std::to_string(sum));
  }
  ScoreRecord rec{std::move(sample_id), std::move(sentence_id), std::move(unit), {}};
  rec.probs.reserve(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    rec.probs.emplace_back(std::string(schema.extended_label(i)), dense[i]);
  }
  return rec;
}

ScoreTable read_scores(std::istream& in, const LabelSchema& schema) {
  ScoreTable table;
  table.schema = schema;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      auto sample_id = detail::require_string(j, "sample_id");
      auto sentence_id = detail::require_string(j, "sentence_id");
      if (!j.contains("unit")) throw Error(ErrorCode::MalformedRecord, "missing unit");
      auto unit = detail::unit_from_json(j["unit"]);
      if (!j.contains("probs") || !j["probs"].is_object()) {
        throw Error(ErrorCode::MalformedRecord, "missing probs object");
      }
      std::map<std::string, double> probs;
      for (const auto& [label, value] : j["probs"].items()) {
        if (!value.is_number()) throw Error(ErrorCode::MalformedRecord, "probability must be a number");
        probs[label] = value.get<double>();
      }
      auto rec = make_score_record(schema, sample_id, std::move(sentence_id), std::move(unit), probs);
      if (!table.records.emplace(sample_id, std::move(rec)).second) {
        throw Error(ErrorCode::DuplicateSample, "sample_id '" + sample_id + "' repeated");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return table;
}

ScoreTable ingest_scores(const std::filesystem::path& path, const LabelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open score file " + path.string());
  auto table = read_scores(in, schema);
  table.provenance = path.filename().string();
  return table;
}

void write_scores(std::ostream& out, const ScoreTable& table) {
  for (const auto& [id, rec] : table.records) {
    ojson j = ojson::object();
    j["sample_id"] = rec.sample_id;
    j["sentence_id"] = rec.sentence_id;
    ojson unit = ojson::object();
    detail::unit_to_json(rec.unit, unit);
    j["unit"] = std::move(unit);
    ojson probs = ojson::object();
    for (const auto& [label, p] : rec.probs) probs[label] = p;
    j["probs"] = std::move(probs);
    out << j.dump() << '\n';
  }
}

void save_scores(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write score file " + path.string());
  write_scores(out, table);
}

std::vector<double> default_tau_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i / 20.0);
  return grid;
}

void RouterConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::ConfigError, "tau must lie in [0,1]");
  if (top_n < 1) throw Error(ErrorCode::ConfigError, "top_n must be >= 1");
  for (double t : grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::ConfigError, "grid values must lie in [0,1]");
  }
}

double confidence(const ScoreRecord& rec) {
  double best = 0.0;
  for (const auto& [label, p] : rec.probs) best = std::max(best, p);
  return best;
}

std::string_view to_string(Difficulty d) { return d == Difficulty::Easy ? "easy" : "hard"; }

Difficulty classify_difficulty(const ScoreRecord& rec, const RouterConfig& cfg) {
  return confidence(rec) > cfg.tau ? Difficulty::Easy : Difficulty::Hard;
}

const std::string& filter_argmax(const ScoreRecord& rec) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rec.probs.size(); ++i) {
    if (rec.probs[i].second > rec.probs[best].second) best = i;
  }
  return rec.probs[best].first;
}

Prediction filter_prediction(const ScoreRecord& rec) {
  return {rec.sample_id, rec.sentence_id, rec.unit, filter_argmax(rec), confidence(rec)};
}

CandidateSet top_candidates(const ScoreRecord& rec, const RouterConfig& cfg) {
  std::vector<std::size_t> order(rec.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rec.probs[a].second > rec.probs[b].second;
  });
  CandidateSet out;
  out.sample_id = rec.sample_id;
  out.source_confidence = confidence(rec);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.top_n), order.size());
  for (std::size_t i = 0; i < n; ++i) out.candidates.push_back(rec.probs[order[i]].first);
  if (cfg.inject_none &&
      std::find(out.candidates.begin(), out.candidates.end(), kNoneLabel) == out.candidates.end()) {
    out.candidates.emplace_back(kNoneLabel);
  }
  return out;
}

ScoreTable ensemble(std::span<const ScoreTable> tables) {
  if (tables.size() < 2) throw Error(ErrorCode::ConfigError, "ensemble needs at least two tables");
  const auto& first = tables.front();
  for (const auto& t : tables.subspan(1)) {
    if (!(t.schema == first.schema)) throw Error(ErrorCode::SchemaMismatch, "tables use different schemas");
    if (t.records.size() != first.records.size()) {
      throw Error(ErrorCode::SampleMismatch, "tables cover different sample sets");
    }
  }
  ScoreTable out;
  out.schema = first.schema;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (i > 0) out.provenance += '+';
    out.provenance += tables[i].provenance;
  }
  const double n = static_cast<double>(tables.size());
  for (const auto& [id, rec] : first.records) {
    std::vector<double> acc(rec.probs.size(), 0.0);
    for (const auto& t : tables) {
      auto it = t.records.find(id);
      if (it == t.records.end()) throw Error(ErrorCode::SampleMismatch, "sample '" + id + "' missing");
      if (it->second.unit != rec.unit || it->second.sentence_id != rec.sentence_id) {
        throw Error(ErrorCode::SampleMismatch, "sample '" + id + "' refers to different units");
      }
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += it->second.probs[k].second;
    }
    double sum = 0.0;
    for (auto& v : acc) {
      v /= n;
      sum += v;
    }
    ScoreRecord merged = rec;
    for (std::size_t k = 0; k < acc.size(); ++k) {
      merged.probs[k].second = (sum == 1.0 || sum == 0.0) ? acc[k] : acc[k] / sum;
    }
    out.records.emplace(id, std::move(merged));
  }
  return out;
}

Prediction slm_rerank(const CandidateSet& cands, const ScoreTable& other) {
  auto it = other.records.find(cands.sample_id);
  if (it == other.records.end()) {
    throw Error(ErrorCode::MissingSample, "reranker table lacks sample '" + cands.sample_id + "'");
  }
  const auto& rec = it->second;
  const std::string* best = nullptr;
  double best_p = -1.0;
  for (const auto& label : cands.candidates) {
    const double p = rec.prob(label);
    if (p > best_p) {
      best_p = p;
      best = &label;
    }
  }
  Prediction out{rec.sample_id, rec.sentence_id, rec.unit,
                 best ? *best : std::string(kNoneLabel), cands.source_confidence};
  return out;
}

TuneResult tune_threshold_detailed(const ScoreTable& valid_scores, const Dataset& valid_gold,
                                   const RerankFn& rerank_fn, const RouterConfig& cfg) {
  cfg.validate();
  if (valid_scores.records.empty() || valid_gold.empty()) {
    throw Error(ErrorCode::EmptyValidation, "validation set is empty");
  }
  if (cfg.grid.empty()) throw Error(ErrorCode::ConfigError, "threshold grid is empty");

  std::unordered_map<std::string, std::string> reranked;
  auto rerank_once = [&](const ScoreRecord& rec) -> const std::string& {
    auto it = reranked.find(rec.sample_id);
    if (it == reranked.end()) {
      it = reranked.emplace(rec.sample_id, rerank_fn(top_candidates(rec, cfg))).first;
    }
    return it->second;
  };

  TuneResult result;
  bool have_best = false;
  std::vector<Prediction> preds;
  preds.reserve(valid_scores.records.size());
  for (double tau : cfg.grid) {
    RouterConfig at = cfg;
    at.tau = tau;
    preds.clear();
    std::size_t hard = 0;
    for (const auto& [id, rec] : valid_scores.records) {
      auto p = filter_prediction(rec);
      if (classify_difficulty(rec, at) == Difficulty::Hard) {
        ++hard;
        p.label = rerank_once(rec);
      }
      preds.push_back(std::move(p));
    }
    const double f1 = micro_f1(preds, valid_gold).f1;
    result.curve.push_back({tau, f1, hard});
    const bool better = !have_best || f1 > result.f1 ||
                        (f1 == result.f1 && (hard < result.hard || (hard == result.hard && tau < result.tau)));
    if (better) {
      result.tau = tau;
      result.f1 = f1;
      result.hard = hard;
      have_best = true;
    }
  }
  return result;
}

double tune_threshold(const ScoreTable& valid_scores, const Dataset& valid_gold,
                      const RerankFn& rerank_fn, const RouterConfig& cfg) {
  return tune_threshold_detailed(valid_scores, valid_gold, rerank_fn, cfg).tau;
}

}  // namespace ftr
