#include "ftr/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ftr/error.hpp"
#include "json_util.hpp"
#include "rng.hpp"

namespace ftr {

using detail::ojson;

std::string_view to_string(Task task) {
  switch (task) {
    case Task::NER: return "NER";
    case Task::RE: return "RE";
    case Task::ED: return "ED";
    case Task::EAE: return "EAE";
  }
  return "NER";
}

Task parse_task(std::string_view name) {
  if (name == "NER") return Task::NER;
  if (name == "RE") return Task::RE;
  if (name == "ED") return Task::ED;
  if (name == "EAE") return Task::EAE;
  throw Error(ErrorCode::ConfigError, "unknown task '" + std::string(name) + "'");
}

std::string_view to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::Entity: return "entity";
    case UnitKind::Relation: return "relation";
    case UnitKind::Trigger: return "trigger";
    case UnitKind::Argument: return "argument";
  }
  return "entity";
}

UnitKind unit_kind_for(Task task) {
  switch (task) {
    case Task::NER: return UnitKind::Entity;
    case Task::RE: return UnitKind::Relation;
    case Task::ED: return UnitKind::Trigger;
    case Task::EAE: return UnitKind::Argument;
  }
  return UnitKind::Entity;
}

int Unit::extent() const noexcept {
  switch (kind) {
    case UnitKind::Relation: return std::max(span.end, object.end);
    case UnitKind::Argument: return std::max(span.end, trigger.end);
    default: return span.end;
  }
}

// ---------------------------------------------------------------------------
// LabelSchema

LabelSchema::LabelSchema(Task task, std::vector<std::string> labels)
    : task_(task), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& label = labels_[i];
    if (label.empty()) {
      throw Error(ErrorCode::ConfigError, "empty label name in schema");
    }
    if (label == kNoneLabel) {
      throw Error(ErrorCode::ConfigError, "\"None\" is reserved and cannot be a schema label");
    }
    if (!index_.emplace(label, i).second) {
      throw Error(ErrorCode::ConfigError, "duplicate label '" + label + "' in schema");
    }
  }
}

bool LabelSchema::contains(std::string_view label) const {
  return index_.find(std::string(label)) != index_.end();
}

std::optional<std::size_t> LabelSchema::index_of(std::string_view label) const {
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> LabelSchema::extended_index(std::string_view label) const {
  if (label == kNoneLabel) return labels_.size();
  return index_of(label);
}

std::string_view LabelSchema::extended_label(std::size_t i) const {
  return i < labels_.size() ? std::string_view(labels_[i]) : kNoneLabel;
}

LabelSchema LabelSchema::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("schema: ") + e.what());
  }
  if (!j.is_object() || !j.contains("task") || !j.contains("labels") ||
      !j["labels"].is_array()) {
    throw Error(ErrorCode::ConfigError, "schema needs \"task\" and \"labels\"");
  }
  std::vector<std::string> labels;
  for (const auto& l : j["labels"]) {
    if (!l.is_string()) throw Error(ErrorCode::ConfigError, "schema labels must be strings");
    labels.push_back(l.get<std::string>());
  }
  return LabelSchema(parse_task(j["task"].get<std::string>()), std::move(labels));
}

LabelSchema LabelSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open schema " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string LabelSchema::to_json_text() const {
  ojson j = ojson::object();
  j["task"] = std::string(to_string(task_));
  j["labels"] = labels_;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

void check_span(const Span& s, std::size_t n_tokens, const std::string& where) {
  if (s.start < 0 || s.end > static_cast<int>(n_tokens)) {
    throw Error(ErrorCode::SpanOutOfBounds,
                where + ": span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                    ") outside " + std::to_string(n_tokens) + " tokens");
  }
  if (s.start >= s.end) {
    throw Error(ErrorCode::MalformedRecord, where + ": span start must be < end");
  }
}

void check_unit(const Unit& u, Task task, std::size_t n_tokens, const std::string& where) {
  if (u.kind != unit_kind_for(task)) {
    throw Error(ErrorCode::MalformedRecord,
                where + ": annotation kind '" + std::string(to_string(u.kind)) +
                    "' does not match task " + std::string(to_string(task)));
  }
  check_span(u.span, n_tokens, where);
  if (u.kind == UnitKind::Relation) check_span(u.object, n_tokens, where);
  if (u.kind == UnitKind::Argument) {
    check_span(u.trigger, n_tokens, where);
    if (u.event.empty()) throw Error(ErrorCode::MalformedRecord, where + ": empty event label");
  }
}

}  // namespace

Dataset::Dataset(LabelSchema schema, std::vector<SentenceRecord> sentences, SplitTag split)
    : schema_(std::move(schema)), sentences_(std::move(sentences)), split_(split) {
  for (std::size_t i = 0; i < sentences_.size(); ++i) {
    auto& rec = sentences_[i];
    if (!by_id_.emplace(rec.sentence_id, i).second) {
      throw Error(ErrorCode::MalformedRecord, "duplicate sentence_id '" + rec.sentence_id + "'");
    }
    std::set<GoldAnnotation> seen;
    std::vector<GoldAnnotation> unique;
    unique.reserve(rec.annotations.size());
    for (auto& ann : rec.annotations) {
      check_unit(ann.unit, schema_.task(), rec.tokens.size(), rec.sentence_id);
      if (!schema_.contains(ann.label)) {
        throw Error(ErrorCode::UnknownLabel,
                    rec.sentence_id + ": label '" + ann.label + "' not in schema");
      }
      if (seen.insert(ann).second) unique.push_back(std::move(ann));
    }
    rec.annotations = std::move(unique);
  }
}

const SentenceRecord* Dataset::find(std::string_view sentence_id) const {
  auto it = by_id_.find(std::string(sentence_id));
  return it == by_id_.end() ? nullptr : &sentences_[it->second];
}

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> counts(schema_.labels().size(), 0);
  for (const auto& s : sentences_) {
    for (const auto& a : s.annotations) ++counts[*schema_.index_of(a.label)];
  }
  return counts;
}

std::size_t Dataset::annotation_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences_) n += s.annotations.size();
  return n;
}

Dataset read_dataset(std::istream& in, const LabelSchema& schema) {
  std::vector<SentenceRecord> sentences;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      SentenceRecord rec;
      rec.sentence_id = detail::require_string(j, "sentence_id");
      if (!j.contains("tokens") || !j["tokens"].is_array()) {
        throw Error(ErrorCode::MalformedRecord, "missing token array");
      }
      for (const auto& t : j["tokens"]) {
        if (!t.is_string()) throw Error(ErrorCode::MalformedRecord, "tokens must be strings");
        rec.tokens.push_back(t.get<std::string>());
      }
      if (j.contains("annotations")) {
        if (!j["annotations"].is_array()) {
          throw Error(ErrorCode::MalformedRecord, "annotations must be an array");
        }
        for (const auto& a : j["annotations"]) {
          rec.annotations.push_back({detail::unit_from_json(a), detail::require_string(a, "label")});
        }
      }
      sentences.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return Dataset(schema, std::move(sentences));
}

Dataset load_dataset(const std::filesystem::path& path, const LabelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open dataset " + path.string());
  return read_dataset(in, schema);
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const auto& s : dataset.sentences()) {
    ojson j = ojson::object();
    j["sentence_id"] = s.sentence_id;
    j["tokens"] = s.tokens;
    ojson anns = ojson::array();
    for (const auto& a : s.annotations) {
      ojson aj = ojson::object();
      detail::unit_to_json(a.unit, aj);
      aj["label"] = a.label;
      anns.push_back(std::move(aj));
    }
    j["annotations"] = std::move(anns);
    out << j.dump() << '\n';
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write dataset " + path.string());
  write_dataset(out, dataset);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

std::vector<std::size_t> sentence_label_counts(const SentenceRecord& s, const LabelSchema& schema) {
  std::vector<std::size_t> counts(schema.labels().size(), 0);
  for (const auto& a : s.annotations) ++counts[*schema.index_of(a.label)];
  return counts;
}

// Label indices ordered by ascending frequency, ties by label name.
std::vector<std::size_t> labels_by_frequency(const std::vector<std::size_t>& freq,
                                             const LabelSchema& schema) {
  std::vector<std::size_t> order(freq.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (freq[a] != freq[b]) return freq[a] < freq[b];
    return schema.labels()[a] < schema.labels()[b];
  });
  return order;
}

Dataset subset(const Dataset& from, const std::vector<std::size_t>& indices, SplitTag tag) {
  std::vector<SentenceRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(from.sentences()[i]);
  return Dataset(from.schema(), std::move(out), tag);
}

Dataset sample_relations(const Dataset& full, const SamplerConfig& cfg,
                         const std::vector<std::size_t>& order) {
  const auto& schema = full.schema();
  detail::Rng rng(cfg.seed);
  std::vector<bool> taken(full.size(), false);
  std::vector<std::size_t> chosen;
  for (auto label : order) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (taken[i]) continue;
      const auto& anns = full.sentences()[i].annotations;
      if (std::any_of(anns.begin(), anns.end(),
                      [&](const auto& a) { return a.label == schema.labels()[label]; })) {
        pool.push_back(i);
      }
    }
    if (pool.size() < static_cast<std::size_t>(cfg.k)) {
      throw Error(ErrorCode::InsufficientSupport,
                  "label '" + schema.labels()[label] + "' has " + std::to_string(pool.size()) +
                      " available sentences, need " + std::to_string(cfg.k));
    }
    for (int drawn = 0; drawn < cfg.k; ++drawn) {
      const auto pick = detail::uniform_index(rng, pool.size());
      taken[pool[pick]] = true;
      chosen.push_back(pool[pick]);
      pool[pick] = pool.back();
      pool.pop_back();
    }
  }
  return subset(full, chosen, SplitTag::Train);
}

}  // namespace

Dataset greedy_kshot_sample(const Dataset& full, const SamplerConfig& cfg) {
  if (cfg.k < 1) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  const auto& schema = full.schema();
  const auto freq = full.label_counts();
  const auto k = static_cast<std::size_t>(cfg.k);
  for (std::size_t l = 0; l < freq.size(); ++l) {
    if (freq[l] < k) {
      throw Error(ErrorCode::InsufficientSupport,
                  "label '" + schema.labels()[l] + "' occurs " + std::to_string(freq[l]) +
                      " times, need " + std::to_string(k));
    }
  }
  const auto order = labels_by_frequency(freq, schema);
  if (schema.task() == Task::RE) return sample_relations(full, cfg, order);

  std::vector<std::vector<std::size_t>> per_sentence;
  per_sentence.reserve(full.size());
  for (const auto& s : full.sentences()) per_sentence.push_back(sentence_label_counts(s, schema));

  detail::Rng rng(cfg.seed);
  std::vector<bool> taken(full.size(), false);
  std::vector<std::size_t> counter(freq.size(), 0);
  std::vector<std::size_t> selected;

  auto add = [&](std::size_t i) {
    for (std::size_t l = 0; l < counter.size(); ++l) counter[l] += per_sentence[i][l];
  };

  for (auto label : order) {
    if (counter[label] >= k) continue;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (!taken[i] && per_sentence[i][label] > 0) pool.push_back(i);
    }
    while (counter[label] < k) {
      // Unreachable given the support check above, kept as a hard stop.
      if (pool.empty()) {
        throw Error(ErrorCode::InsufficientSupport,
                    "ran out of sentences for label '" + schema.labels()[label] + "'");
      }
      const auto pick = detail::uniform_index(rng, pool.size());
      const auto i = pool[pick];
      pool[pick] = pool.back();
      pool.pop_back();
      taken[i] = true;
      selected.push_back(i);
      add(i);
    }
  }

  // Prune pass, in insertion order.
  std::vector<std::size_t> kept;
  kept.reserve(selected.size());
  for (auto i : selected) {
    bool needed = false;
    for (std::size_t l = 0; l < counter.size(); ++l) {
      if (counter[l] - per_sentence[i][l] < k) {
        needed = true;
        break;
      }
    }
    if (needed) {
      kept.push_back(i);
    } else {
      for (std::size_t l = 0; l < counter.size(); ++l) counter[l] -= per_sentence[i][l];
    }
  }
  return subset(full, kept, SplitTag::Train);
}

Dataset balance_negatives(const Dataset& sampled, const Dataset& full, const SamplerConfig& cfg) {
  if (cfg.negative_ratio.den == 0) throw Error(ErrorCode::ConfigError, "negative ratio denominator is 0");
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::unordered_set<std::string> present;
  for (const auto& s : sampled.sentences()) {
    present.insert(s.sentence_id);
    (s.is_positive() ? positives : negatives) += 1;
  }
  const auto target = cfg.negative_ratio.scale_floor(positives);
  if (negatives >= target) return sampled;
  const auto needed = target - negatives;

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const auto& s = full.sentences()[i];
    if (!s.is_positive() && !present.count(s.sentence_id)) pool.push_back(i);
  }
  if (pool.size() < needed) {
    throw Error(ErrorCode::InsufficientNegatives,
                "need " + std::to_string(needed) + " negative sentences, pool has " +
                    std::to_string(pool.size()));
  }
  detail::Rng rng(cfg.seed);
  std::vector<SentenceRecord> out = sampled.sentences();
  for (std::size_t n = 0; n < needed; ++n) {
    const auto pick = detail::uniform_index(rng, pool.size());
    out.push_back(full.sentences()[pool[pick]]);
    pool[pick] = pool.back();
    pool.pop_back();
  }
  return Dataset(sampled.schema(), std::move(out), sampled.split());
}

std::pair<Dataset, Dataset> split_train_valid(const Dataset& sampled, const SamplerConfig& cfg) {
  const auto n = sampled.size();
  if (n <= cfg.valid_min_sentences || cfg.valid_fraction.den == 0) {
    return {Dataset(sampled.schema(), sampled.sentences(), SplitTag::Train),
            Dataset(sampled.schema(), {}, SplitTag::Valid)};
  }
  const auto n_valid = cfg.valid_fraction.scale_floor(n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  detail::Rng rng(cfg.seed);
  detail::shuffle(idx, rng);
  std::vector<bool> is_valid(n, false);
  for (std::size_t i = 0; i < n_valid; ++i) is_valid[idx[i]] = true;

  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> valid_idx;
  for (std::size_t i = 0; i < n; ++i) (is_valid[i] ? valid_idx : train_idx).push_back(i);
  return {subset(sampled, train_idx, SplitTag::Train), subset(sampled, valid_idx, SplitTag::Valid)};
}

Dataset downsample_test(const Dataset& full_test, std::size_t target, std::uint64_t seed) {
  const auto n = full_test.size();
  if (target > n) {
    throw Error(ErrorCode::ConfigError, "target " + std::to_string(target) + " exceeds " +
                                            std::to_string(n) + " sentences");
  }
  const auto& schema = full_test.schema();
  const auto n_labels = schema.labels().size();

  // Sentences carrying each label.
  std::vector<std::vector<std::size_t>> carriers(n_labels);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> seen(n_labels, false);
    for (const auto& a : full_test.sentences()[i].annotations) {
      const auto l = *schema.index_of(a.label);
      if (!seen[l]) {
        seen[l] = true;
        carriers[l].push_back(i);
      }
    }
  }
  std::vector<std::size_t> sentence_freq(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) sentence_freq[l] = carriers[l].size();
  const auto order = labels_by_frequency(sentence_freq, schema);

  detail::Rng rng(seed);
  std::vector<bool> chosen(n, false);
  std::vector<bool> covered(n_labels, false);
  std::size_t n_chosen = 0;
  auto take = [&](std::size_t i) {
    chosen[i] = true;
    ++n_chosen;
    for (const auto& a : full_test.sentences()[i].annotations) covered[*schema.index_of(a.label)] = true;
  };

  for (auto l : order) {
    if (carriers[l].empty() || covered[l]) continue;
    take(carriers[l][detail::uniform_index(rng, carriers[l].size())]);
  }
  if (n_chosen > target) {
    throw Error(ErrorCode::TargetTooSmall, "covering every label needs " + std::to_string(n_chosen) +
                                               " sentences, target is " + std::to_string(target));
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  detail::shuffle(rest, rng);
  for (std::size_t j = 0; n_chosen < target; ++j) take(rest[j]);

  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) out.push_back(i);
  }
  return subset(full_test, out, SplitTag::Test);
}

}  // namespace ftr
