#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ftr {

enum class Task { NER, RE, ED, EAE };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

inline constexpr std::string_view kNoneLabel = "None";

// The label set L of one dataset. "None" is reserved and never part of
// labels(); it sits after every real label in the extended order used for
// probability vectors and tie-breaking.
class LabelSchema {
 public:
  LabelSchema() = default;
  LabelSchema(Task task, std::vector<std::string> labels);

  Task task() const noexcept { return task_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  bool contains(std::string_view label) const;
  std::optional<std::size_t> index_of(std::string_view label) const;

  // Index in the extended order (labels..., None). Unknown labels yield nullopt.
  std::optional<std::size_t> extended_index(std::string_view label) const;
  std::size_t extended_size() const noexcept { return labels_.size() + 1; }
  std::string_view extended_label(std::size_t i) const;

  bool operator==(const LabelSchema& other) const {
    return task_ == other.task_ && labels_ == other.labels_;
  }

  // {"task": "NER", "labels": [...]}
  static LabelSchema load(const std::filesystem::path& path);
  static LabelSchema from_json_text(std::string_view text);
  std::string to_json_text() const;

 private:
  Task task_ = Task::NER;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Token span, start inclusive, end exclusive.
struct Span {
  int start = 0;
  int end = 0;

  int length() const noexcept { return end - start; }
  auto operator<=>(const Span&) const = default;
};

enum class UnitKind { Entity, Relation, Trigger, Argument };

std::string_view to_string(UnitKind kind);
UnitKind unit_kind_for(Task task);

// The structural part of one scorable sample: an entity span, a subject and
// object pair, a trigger word, or an event argument. Fields that a kind does
// not use stay value-initialized so that equality and ordering are exact.
struct Unit {
  UnitKind kind = UnitKind::Entity;
  Span span;           // entity, trigger, argument span; relation subject
  Span object;         // relation object
  Span trigger;        // argument's event trigger
  std::string event;   // argument's event label

  static Unit entity(Span s) { return {UnitKind::Entity, s, {}, {}, {}}; }
  static Unit trigger_word(Span s) { return {UnitKind::Trigger, s, {}, {}, {}}; }
  static Unit relation(Span subj, Span obj) {
    return {UnitKind::Relation, subj, obj, {}, {}};
  }
  static Unit argument(Span trig, std::string event_label, Span arg) {
    return {UnitKind::Argument, arg, {}, trig, std::move(event_label)};
  }

  // Largest token index touched, plus one.
  int extent() const noexcept;

  auto operator<=>(const Unit&) const = default;
};

struct GoldAnnotation {
  Unit unit;
  std::string label;

  auto operator<=>(const GoldAnnotation&) const = default;
};

struct SentenceRecord {
  std::string sentence_id;
  std::vector<std::string> tokens;
  std::vector<GoldAnnotation> annotations;

  bool is_positive() const noexcept { return !annotations.empty(); }
  bool operator==(const SentenceRecord&) const = default;
};

enum class SplitTag { Full, Train, Valid, Test };

// Immutable after construction; the constructor validates every invariant.
class Dataset {
 public:
  Dataset() = default;
  Dataset(LabelSchema schema, std::vector<SentenceRecord> sentences,
          SplitTag split = SplitTag::Full);

  const LabelSchema& schema() const noexcept { return schema_; }
  const std::vector<SentenceRecord>& sentences() const noexcept { return sentences_; }
  SplitTag split() const noexcept { return split_; }
  std::size_t size() const noexcept { return sentences_.size(); }
  bool empty() const noexcept { return sentences_.empty(); }

  const SentenceRecord* find(std::string_view sentence_id) const;

  // Annotation count per label, in schema order.
  std::vector<std::size_t> label_counts() const;
  std::size_t annotation_count() const;

 private:
  LabelSchema schema_;
  std::vector<SentenceRecord> sentences_;
  SplitTag split_ = SplitTag::Full;
  std::unordered_map<std::string, std::size_t> by_id_;
};

Dataset read_dataset(std::istream& in, const LabelSchema& schema);
Dataset load_dataset(const std::filesystem::path& path, const LabelSchema& schema);
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

struct Ratio {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  // floor(n * num / den)
  std::uint64_t scale_floor(std::uint64_t n) const { return n * num / den; }
};

struct SamplerConfig {
  int k = 5;
  std::uint64_t seed = 0;
  Ratio negative_ratio{1, 1};
  Ratio valid_fraction{1, 10};
  std::size_t valid_min_sentences = 300;
};

// Greedy K-shot sampling: rarest label first, draw sentences carrying it until
// its counter reaches K, then prune sentences whose removal keeps every counter
// at or above K. RE schemas take exactly K sentences per relation instead.
Dataset greedy_kshot_sample(const Dataset& full, const SamplerConfig& cfg);

// Appends annotation-free sentences from `full` until negatives reach
// floor(positives * ratio).
Dataset balance_negatives(const Dataset& sampled, const Dataset& full,
                          const SamplerConfig& cfg);

// Returns (train, valid). An empty valid set means "too small to split".
std::pair<Dataset, Dataset> split_train_valid(const Dataset& sampled,
                                              const SamplerConfig& cfg);

// Seeded sample of `target` sentences keeping at least one occurrence of every
// label present in `full_test`. Output keeps the input's sentence order.
Dataset downsample_test(const Dataset& full_test, std::size_t target,
                        std::uint64_t seed);

}  // namespace ftr
