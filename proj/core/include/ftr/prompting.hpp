#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ftr/corpus.hpp"
#include "ftr/filtering.hpp"

namespace ftr {

inline constexpr std::string_view kTargetMarker = "<t>";

// Label-to-choice templates plus the MCQ instruct line and the ICL instruction
// variants I0..I5 for one schema.
//
// File format, one entry per line, tab separated, '#' comments:
//   task        <NER|RE|ED|EAE>
//   instruct    <MCQ instruct line with placeholders>
//   none        <choice template for "None">
//   choice      <label>  <choice template>
//   definition  <label>  <free text>        (optional, used by I2/I5)
//   variant     <I0..I5> <instruction text> (optional override)
// Placeholders: {ent} for NER, {subj}/{obj} for RE, {evt} for ED.
class TemplateSet {
 public:
  TemplateSet() = default;

  static TemplateSet parse(std::string_view text, const LabelSchema& schema);
  static TemplateSet load(const std::filesystem::path& path, const LabelSchema& schema);

  const LabelSchema& schema() const noexcept { return schema_; }
  const std::string& instruct_template() const noexcept { return instruct_; }
  const std::string& none_template() const noexcept { return none_; }
  const std::string* choice_template(std::string_view label) const;

  // Renders the choice sentence for `label` with the unit's surface forms.
  std::string render_choice(std::string_view label, const Unit& unit,
                            std::span<const std::string> tokens) const;
  std::string render_instruct(const Unit& unit, std::span<const std::string> tokens) const;

  // Instruction variant with {types} / {definitions} expanded.
  std::string instruction(std::string_view variant_id) const;

 private:
  LabelSchema schema_;
  std::string instruct_;
  std::string none_;
  std::map<std::string, std::string, std::less<>> choices_;
  std::map<std::string, std::string, std::less<>> definitions_;
  std::map<std::string, std::string, std::less<>> variants_;
};

// Tokens of a span joined by single spaces.
std::string surface(std::span<const std::string> tokens, const Span& span);

// Sentence with the unit's span(s) wrapped in <t> markers.
std::string mark_target(std::span<const std::string> tokens, const Unit& unit);

struct DemoExample {
  std::string instruct;
  std::string sentence;  // already marked up
  std::vector<std::string> choices;
  std::optional<std::string> analysis;
  std::size_t answer_index = 0;
};

// One line of a demo file: a sentence, the target unit, its candidate labels,
// the answer label, and an optional rationale. `choices` and `instruct`, when
// present, are used verbatim instead of being rendered from templates.
struct DemoRecord {
  std::string sentence_id;
  std::vector<std::string> tokens;
  Unit target;
  std::vector<std::string> candidates;
  std::string answer;
  std::optional<std::string> analysis;
  std::vector<std::string> choices;
  std::optional<std::string> instruct;
};

std::vector<DemoRecord> load_demos(const std::filesystem::path& path, const LabelSchema& schema);
std::vector<DemoRecord> parse_demos(std::string_view text, const LabelSchema& schema);

DemoExample to_demo_example(const DemoRecord& rec, const TemplateSet& tset, bool cot);

struct PromptBundle {
  std::string instruction;
  std::vector<std::string> demo_block;  // rendered demos, in prompt order
  std::string question;
  std::vector<std::pair<char, std::string>> choice_map;  // letter -> label
  std::vector<std::string> choice_texts;                  // rendered, same order
  std::string fallback_label;  // kept when the answer cannot be parsed
  std::string sample_id;
  std::size_t token_estimate = 0;

  std::string text() const;
  const std::string* label_for(char letter) const;
};

// ceil(bytes / 4)
std::size_t estimate_tokens(std::string_view text);

struct McqOptions {
  bool cot = true;
  // Seeded shuffle of the choice order, for order-sensitivity experiments.
  std::optional<std::uint64_t> shuffle_seed;
};

std::string render_demo_text(const DemoExample& demo, bool cot);

PromptBundle render_mcq(const ScoreRecord& sample, const SentenceRecord& sentence,
                        const CandidateSet& cands, std::span<const DemoExample> demos,
                        const TemplateSet& tset, const McqOptions& opts = {});

// A sentence for the vanilla ICL prompt. For RE and EAE `focus` names the
// entity pair or the event trigger the question is about.
struct IclItem {
  const SentenceRecord* sentence = nullptr;
  std::optional<Unit> focus;
};

PromptBundle render_icl(const IclItem& query, std::span<const IclItem> demos,
                        const TemplateSet& tset, std::string_view variant_id);

enum class ParseStatus { Parsed, ParsedFallback, Failed };
std::string_view to_string(ParseStatus s);
ParseStatus parse_status_from_string(std::string_view s);

struct McqParse {
  std::string label;
  ParseStatus status = ParseStatus::Failed;
};

// Total: every input yields a label and a status.
McqParse parse_mcq_answer(std::string_view text, const PromptBundle& bundle);

struct IclAnswer {
  std::string surface;  // empty for RE
  std::string label;
};

struct IclParse {
  std::vector<IclAnswer> items;
  std::size_t dropped_unknown = 0;
  bool sentinel = false;
};

IclParse parse_icl_answer(std::string_view text, Task task, const LabelSchema& schema);

struct Alignment {
  std::optional<Span> span;
  std::size_t matches = 0;  // >1 means the leftmost of several was taken
};

// Leftmost exact token match of `surface_text` (space-separated) in `tokens`.
Alignment align_surface(std::span<const std::string> tokens, std::string_view surface_text);

}  // namespace ftr
