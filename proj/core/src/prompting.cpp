#include "ftr/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "ftr/error.hpp"
#include "json_util.hpp"
#include "rng.hpp"

namespace ftr {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::set<std::string> allowed_placeholders(Task task) {
  switch (task) {
    case Task::NER: return {"{ent}"};
    case Task::RE: return {"{subj}", "{obj}"};
    case Task::ED: return {"{evt}"};
    case Task::EAE: return {"{evt}", "{ent}"};
  }
  return {};
}

void check_placeholders(std::string_view tmpl, Task task, const std::string& where) {
  const auto allowed = allowed_placeholders(task);
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
    const auto close = tmpl.find('}', pos);
    if (close == std::string_view::npos) break;
    const std::string ph(tmpl.substr(pos, close - pos + 1));
    if (!allowed.count(ph)) {
      throw Error(ErrorCode::MalformedRecord,
                  where + ": placeholder " + ph + " does not fit task " + std::string(to_string(task)));
    }
    pos = close + 1;
  }
}

struct TaskWords {
  std::string singular;
  std::string plural;
  std::string sentinel;
  std::string answer_header;
};

TaskWords task_words(Task task) {
  switch (task) {
    case Task::NER: return {"entity", "entities", "No entities found.", "Entities:"};
    case Task::RE: return {"relation", "relations", "None", "Relation:"};
    case Task::ED: return {"event", "events", "No events found.", "Events:"};
    case Task::EAE: return {"argument", "arguments", "No arguments found.", "Arguments:"};
  }
  return {};
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

// Built-in instruction variants, from bare (I0) to role-play with definitions
// (I5). {types} and {definitions} expand per schema.
std::string default_variant(Task task, std::string_view id) {
  const auto w = task_words(task);
  const std::string fmt = "Please note that your annotation results must follow such format: `Answer: ([Type_1] <SEP> identified_" +
                          w.singular + ":[" + capitalized(w.singular) + "_1]), ([Type_2] <SEP> identified_" + w.singular +
                          ":[" + capitalized(w.singular) + "_2]), ......'.";
  const std::string none = "If you do not find any " + w.singular + " in this sentence, just output `Answer: " +
                           w.sentinel + "'";
  const std::string locate = "Identify the " + w.plural + " expressed by each sentence, and locate each " +
                             w.singular + " to words in the sentence.";
  const std::string annotator = "Assume you are an " + w.singular + "-instance annotator.";
  if (id == "I0") return "";
  if (id == "I1") return locate + " The possible " + w.singular + " types are: {types}. " + none;
  if (id == "I2") return locate + " The possible " + w.singular + " types are:\n{definitions}\n" + none;
  if (id == "I3") {
    return annotator + " Given a sentence, you need to (1) identify the word or phrase about the " + w.singular +
           " in the sentence, and (2) classify its " + w.singular + " type. The possible " + w.singular +
           " types are listed as below:\n{types}.\n" + fmt + "\n" + none;
  }
  if (id == "I4") {
    return annotator + " Your objective is to perform a series of intricate steps. Firstly, you have to identify a "
           "particular word or phrase in the sentence that corresponds to an " + w.singular +
           ". Following this, classify the " + w.singular + " into one of the potential " + w.singular +
           " types. The potential " + w.singular + " types are provided as below:\n{types}.\n" + fmt + " " + none;
  }
  if (id == "I5") {
    return annotator + " Given a sentence, you need to (1) identify the word or phrase about the " + w.singular +
           " in the sentence, and (2) classify its " + w.singular + " type. The possible " + w.singular +
           " types are listed as below:\n{definitions}\n" + fmt + " " + none;
  }
  throw Error(ErrorCode::BadVariant, "unknown instruction variant '" + std::string(id) + "'");
}

bool is_variant_id(std::string_view id) {
  return id.size() == 2 && id[0] == 'I' && id[1] >= '0' && id[1] <= '5';
}

}  // namespace

// ---------------------------------------------------------------------------
// TemplateSet

TemplateSet TemplateSet::parse(std::string_view text, const LabelSchema& schema) {
  TemplateSet t;
  t.schema_ = schema;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  bool saw_task = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view line = raw;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const std::string where = "template line " + std::to_string(line_no);
    const auto fields = split_tabs(line);
    const auto key = fields[0];
    auto need = [&](std::size_t n) {
      if (fields.size() != n) {
        throw Error(ErrorCode::MalformedRecord, where + ": '" + std::string(key) + "' expects " +
                                                    std::to_string(n - 1) + " tab-separated fields");
      }
    };
    if (key == "task") {
      need(2);
      if (parse_task(trim(fields[1])) != schema.task()) {
        throw Error(ErrorCode::SchemaMismatch, where + ": template task differs from schema task");
      }
      saw_task = true;
    } else if (key == "instruct") {
      need(2);
      t.instruct_ = std::string(fields[1]);
      check_placeholders(t.instruct_, schema.task(), where);
    } else if (key == "none") {
      need(2);
      t.none_ = std::string(fields[1]);
      check_placeholders(t.none_, schema.task(), where);
    } else if (key == "choice") {
      need(3);
      check_placeholders(fields[2], schema.task(), where);
      if (!t.choices_.emplace(std::string(fields[1]), std::string(fields[2])).second) {
        throw Error(ErrorCode::MalformedRecord, where + ": second template for '" + std::string(fields[1]) + "'");
      }
    } else if (key == "definition") {
      need(3);
      t.definitions_[std::string(fields[1])] = std::string(fields[2]);
    } else if (key == "variant") {
      need(3);
      if (!is_variant_id(fields[1])) {
        throw Error(ErrorCode::BadVariant, where + ": variant id '" + std::string(fields[1]) + "'");
      }
      std::string body(fields[2]);
      replace_all(body, "\\n", "\n");
      t.variants_[std::string(fields[1])] = std::move(body);
    } else {
      throw Error(ErrorCode::MalformedRecord, where + ": unknown key '" + std::string(key) + "'");
    }
  }
  if (!saw_task) throw Error(ErrorCode::MalformedRecord, "template file lacks a 'task' line");
  if (schema.task() != Task::EAE) {
    if (t.none_.empty()) throw Error(ErrorCode::MissingTemplate, "no template for None");
    for (const auto& label : schema.labels()) {
      if (!t.choices_.count(label)) throw Error(ErrorCode::MissingTemplate, "no template for '" + label + "'");
    }
  }
  return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path, const LabelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open templates " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), schema);
}

const std::string* TemplateSet::choice_template(std::string_view label) const {
  if (label == kNoneLabel) return none_.empty() ? nullptr : &none_;
  auto it = choices_.find(label);
  return it == choices_.end() ? nullptr : &it->second;
}

namespace {

std::string fill(std::string tmpl, const Unit& unit, std::span<const std::string> tokens) {
  switch (unit.kind) {
    case UnitKind::Entity:
      replace_all(tmpl, "{ent}", surface(tokens, unit.span));
      break;
    case UnitKind::Trigger:
      replace_all(tmpl, "{evt}", surface(tokens, unit.span));
      break;
    case UnitKind::Relation:
      replace_all(tmpl, "{subj}", surface(tokens, unit.span));
      replace_all(tmpl, "{obj}", surface(tokens, unit.object));
      break;
    case UnitKind::Argument:
      replace_all(tmpl, "{evt}", surface(tokens, unit.trigger));
      replace_all(tmpl, "{ent}", surface(tokens, unit.span));
      break;
  }
  return tmpl;
}

}  // namespace

std::string TemplateSet::render_choice(std::string_view label, const Unit& unit,
                                       std::span<const std::string> tokens) const {
  const auto* tmpl = choice_template(label);
  if (tmpl == nullptr) throw Error(ErrorCode::MissingTemplate, "no template for '" + std::string(label) + "'");
  return fill(*tmpl, unit, tokens);
}

std::string TemplateSet::render_instruct(const Unit& unit, std::span<const std::string> tokens) const {
  return fill(instruct_, unit, tokens);
}

std::string TemplateSet::instruction(std::string_view variant_id) const {
  if (!is_variant_id(variant_id)) {
    throw Error(ErrorCode::BadVariant, "unknown instruction variant '" + std::string(variant_id) + "'");
  }
  auto it = variants_.find(variant_id);
  std::string text = it != variants_.end() ? it->second : default_variant(schema_.task(), variant_id);

  std::string types;
  std::string defs;
  for (const auto& label : schema_.labels()) {
    if (!types.empty()) types += ", ";
    types += label;
    auto d = definitions_.find(label);
    defs += "- " + label + ": " + (d != definitions_.end() ? d->second : label) + "\n";
  }
  if (!defs.empty()) defs.pop_back();
  replace_all(text, "{types}", types);
  replace_all(text, "{definitions}", defs);
  return text;
}

// ---------------------------------------------------------------------------
// Rendering

std::string surface(std::span<const std::string> tokens, const Span& span) {
  std::string out;
  for (int i = std::max(0, span.start); i < span.end && i < static_cast<int>(tokens.size()); ++i) {
    if (!out.empty()) out += ' ';
    out += tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

std::string mark_target(std::span<const std::string> tokens, const Unit& unit) {
  std::vector<Span> marked{unit.span};
  if (unit.kind == UnitKind::Relation) marked.push_back(unit.object);
  std::string out;
  auto emit = [&](std::string_view piece) {
    if (!out.empty()) out += ' ';
    out += piece;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].find(kTargetMarker) != std::string::npos) {
      throw Error(ErrorCode::MarkerCollision, "token '" + tokens[i] + "' already contains <t>");
    }
    const int idx = static_cast<int>(i);
    for (const auto& s : marked) {
      if (s.start == idx) emit(kTargetMarker);
    }
    emit(tokens[i]);
    for (const auto& s : marked) {
      if (s.end - 1 == idx) emit(kTargetMarker);
    }
  }
  return out;
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::string PromptBundle::text() const {
  std::string out;
  auto add = [&](const std::string& part) {
    if (part.empty()) return;
    if (!out.empty()) out += "\n\n";
    out += part;
  };
  add(instruction);
  for (const auto& d : demo_block) add(d);
  add(question);
  return out;
}

const std::string* PromptBundle::label_for(char letter) const {
  for (const auto& [l, label] : choice_map) {
    if (l == letter) return &label;
  }
  return nullptr;
}

namespace {

char letter_at(std::size_t i) { return static_cast<char>('a' + i); }

void append_choices(std::string& out, const std::vector<std::string>& choices) {
  for (std::size_t i = 0; i < choices.size(); ++i) {
    out += "\n(";
    out += letter_at(i);
    out += ") ";
    out += choices[i];
  }
}

}  // namespace

std::string render_demo_text(const DemoExample& demo, bool cot) {
  std::string out = "Instruct: " + demo.instruct + "\nSentence: " + demo.sentence;
  append_choices(out, demo.choices);
  if (cot) {
    if (!demo.analysis) throw Error(ErrorCode::ConfigError, "chain-of-thought demo lacks an analysis");
    out += "\nAnalysis: " + *demo.analysis;
  }
  out += "\nAnswer: (";
  out += letter_at(demo.answer_index);
  out += ")";
  return out;
}

DemoExample to_demo_example(const DemoRecord& rec, const TemplateSet& tset, bool cot) {
  DemoExample d;
  d.instruct = rec.instruct ? *rec.instruct : tset.render_instruct(rec.target, rec.tokens);
  d.sentence = mark_target(rec.tokens, rec.target);
  if (!rec.choices.empty()) {
    d.choices = rec.choices;
  } else {
    for (const auto& label : rec.candidates) d.choices.push_back(tset.render_choice(label, rec.target, rec.tokens));
  }
  auto it = std::find(rec.candidates.begin(), rec.candidates.end(), rec.answer);
  if (it == rec.candidates.end()) {
    throw Error(ErrorCode::MalformedRecord, rec.sentence_id + ": demo answer is not a candidate");
  }
  d.answer_index = static_cast<std::size_t>(it - rec.candidates.begin());
  if (cot) d.analysis = rec.analysis;
  if (cot && !d.analysis) throw Error(ErrorCode::ConfigError, rec.sentence_id + ": demo lacks an analysis");
  return d;
}

std::vector<DemoRecord> parse_demos(std::string_view text, const LabelSchema& schema) {
  std::vector<DemoRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "demo line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      DemoRecord d;
      d.sentence_id = detail::require_string(j, "sentence_id");
      d.tokens = j.at("tokens").get<std::vector<std::string>>();
      d.target = detail::unit_from_json(j.at("target"));
      d.candidates = j.at("candidates").get<std::vector<std::string>>();
      d.answer = detail::require_string(j, "answer");
      if (j.contains("analysis")) d.analysis = j["analysis"].get<std::string>();
      if (j.contains("choices")) d.choices = j["choices"].get<std::vector<std::string>>();
      if (j.contains("instruct")) d.instruct = j["instruct"].get<std::string>();
      if (d.target.extent() > static_cast<int>(d.tokens.size())) {
        throw Error(ErrorCode::SpanOutOfBounds, "demo target outside sentence");
      }
      for (const auto& c : d.candidates) {
        if (!schema.extended_index(c)) throw Error(ErrorCode::UnknownLabel, "demo candidate '" + c + "'");
      }
      if (!d.choices.empty() && d.choices.size() != d.candidates.size()) {
        throw Error(ErrorCode::MalformedRecord, "choices and candidates differ in length");
      }
      if (std::find(d.candidates.begin(), d.candidates.end(), d.answer) == d.candidates.end()) {
        throw Error(ErrorCode::MalformedRecord, "answer is not among the candidates");
      }
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return out;
}

std::vector<DemoRecord> load_demos(const std::filesystem::path& path, const LabelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open demos " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_demos(buf.str(), schema);
}

PromptBundle render_mcq(const ScoreRecord& sample, const SentenceRecord& sentence,
                        const CandidateSet& cands, std::span<const DemoExample> demos,
                        const TemplateSet& tset, const McqOptions& opts) {
  if (sample.unit.kind == UnitKind::Argument) {
    throw Error(ErrorCode::WrongTask, "multiple-choice reranking covers NER, RE and ED");
  }
  if (sample.unit.extent() > static_cast<int>(sentence.tokens.size())) {
    throw Error(ErrorCode::SpanOutOfBounds, sample.sample_id + ": target outside its sentence");
  }
  if (cands.candidates.empty()) throw Error(ErrorCode::MissingTemplate, "empty candidate set");
  if (cands.candidates.size() > 26) throw Error(ErrorCode::ConfigError, "more than 26 choices");

  std::vector<std::string> labels = cands.candidates;
  if (opts.shuffle_seed) {
    detail::Rng rng(detail::derive_seed(*opts.shuffle_seed, sample.sample_id));
    detail::shuffle(labels, rng);
  }

  PromptBundle b;
  b.sample_id = sample.sample_id;
  b.fallback_label = cands.candidates.front();
  for (const auto& d : demos) b.demo_block.push_back(render_demo_text(d, opts.cot));

  std::string q = "Instruct: " + tset.render_instruct(sample.unit, sentence.tokens) +
                  "\nSentence: " + mark_target(sentence.tokens, sample.unit);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    b.choice_texts.push_back(tset.render_choice(labels[i], sample.unit, sentence.tokens));
    b.choice_map.emplace_back(letter_at(i), labels[i]);
  }
  append_choices(q, b.choice_texts);
  if (!opts.cot) q += "\nAnswer:";
  b.question = std::move(q);
  b.token_estimate = estimate_tokens(b.text());
  return b;
}

namespace {

std::string tuples_text(const std::vector<std::pair<std::string, std::string>>& items,
                        const std::string& sentinel) {
  if (items.empty()) return sentinel;
  std::string out;
  for (const auto& [label, surf] : items) {
    if (!out.empty()) out += ", ";
    out += "(" + label + ", " + surf + ")";
  }
  return out;
}

std::string sentence_text(const SentenceRecord& s) { return surface(s.tokens, {0, static_cast<int>(s.tokens.size())}); }

// One "Sentence: ..." block; with_answer=false leaves the answer slot empty.
std::string icl_block(const IclItem& item, Task task, bool with_answer) {
  const auto& s = *item.sentence;
  const auto w = task_words(task);
  std::string out = "Sentence: " + sentence_text(s);
  switch (task) {
    case Task::NER:
    case Task::ED: {
      std::vector<std::pair<std::string, std::string>> items;
      for (const auto& a : s.annotations) items.emplace_back(a.label, surface(s.tokens, a.unit.span));
      out += "\n" + w.answer_header;
      if (with_answer) out += " " + tuples_text(items, w.sentinel);
      break;
    }
    case Task::RE: {
      std::optional<Unit> pair = item.focus;
      std::string label(kNoneLabel);
      for (const auto& a : s.annotations) {
        if (!pair || a.unit == *pair) {
          pair = a.unit;
          label = a.label;
          break;
        }
      }
      if (pair) {
        out += "\nSubject: " + surface(s.tokens, pair->span);
        out += "\nObject: " + surface(s.tokens, pair->object);
      }
      out += "\n" + w.answer_header;
      if (with_answer) out += " " + label;
      break;
    }
    case Task::EAE: {
      std::optional<Unit> event = item.focus;
      if (!event && !s.annotations.empty()) event = s.annotations.front().unit;
      std::vector<std::pair<std::string, std::string>> items;
      if (event) {
        out += "\nEvent: " + event->event + " (trigger: " + surface(s.tokens, event->trigger) + ")";
        for (const auto& a : s.annotations) {
          if (a.unit.trigger == event->trigger && a.unit.event == event->event) {
            items.emplace_back(a.label, surface(s.tokens, a.unit.span));
          }
        }
      }
      out += "\n" + w.answer_header;
      if (with_answer) out += " " + tuples_text(items, w.sentinel);
      break;
    }
  }
  return out;
}

}  // namespace

PromptBundle render_icl(const IclItem& query, std::span<const IclItem> demos,
                        const TemplateSet& tset, std::string_view variant_id) {
  if (query.sentence == nullptr) throw Error(ErrorCode::ConfigError, "ICL query without a sentence");
  const Task task = tset.schema().task();
  PromptBundle b;
  b.instruction = tset.instruction(variant_id);
  b.sample_id = query.sentence->sentence_id;
  for (const auto& d : demos) b.demo_block.push_back(icl_block(d, task, true));
  b.question = icl_block(query, task, false);
  b.token_estimate = estimate_tokens(b.text());
  return b;
}

// ---------------------------------------------------------------------------
// Parsing

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::Parsed: return "parsed";
    case ParseStatus::ParsedFallback: return "parsed_fallback";
    case ParseStatus::Failed: return "failed";
  }
  return "failed";
}

ParseStatus parse_status_from_string(std::string_view s) {
  if (s == "parsed") return ParseStatus::Parsed;
  if (s == "parsed_fallback") return ParseStatus::ParsedFallback;
  if (s == "failed") return ParseStatus::Failed;
  throw Error(ErrorCode::MalformedRecord, "unknown parse status '" + std::string(s) + "'");
}

McqParse parse_mcq_answer(std::string_view text, const PromptBundle& bundle) {
  const std::string body(text);
  auto lookup = [&](char c) {
    return bundle.label_for(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  };

  static const std::regex answer_re(R"([Aa][Nn][Ss][Ww][Ee][Rr]\s*:\s*\(\s*([A-Za-z])\s*\))");
  const std::string* primary = nullptr;
  for (auto it = std::sregex_iterator(body.begin(), body.end(), answer_re); it != std::sregex_iterator(); ++it) {
    if (const auto* label = lookup((*it)[1].str()[0])) primary = label;
  }
  if (primary) return {*primary, ParseStatus::Parsed};

  std::string_view last_line;
  {
    std::string_view rest = text;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      const auto line = rest.substr(0, nl);
      if (!trim(line).empty()) last_line = line;
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  static const std::regex letter_re(R"(\(\s*([A-Za-z])\s*\))");
  const std::string tail(last_line);
  const std::string* lone = nullptr;
  std::size_t letters = 0;
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), letter_re); it != std::sregex_iterator(); ++it) {
    if (const auto* label = lookup((*it)[1].str()[0])) {
      lone = label;
      ++letters;
    }
  }
  if (letters == 1) return {*lone, ParseStatus::ParsedFallback};

  const std::string haystack = lower(text);
  const std::string* contained = nullptr;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < bundle.choice_texts.size() && i < bundle.choice_map.size(); ++i) {
    const auto needle = lower(trim(bundle.choice_texts[i]));
    if (!needle.empty() && haystack.find(needle) != std::string::npos) {
      contained = &bundle.choice_map[i].second;
      ++hits;
    }
  }
  if (hits == 1) return {*contained, ParseStatus::ParsedFallback};

  return {bundle.fallback_label, ParseStatus::Failed};
}

namespace {

// Text after the last occurrence of `header`, or nullopt.
std::optional<std::string_view> after_last(std::string_view text, std::string_view header) {
  const auto pos = text.rfind(header);
  if (pos == std::string_view::npos) return std::nullopt;
  return text.substr(pos + header.size());
}

std::string strip_label(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.remove_suffix(1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return std::string(trim(s));
}

}  // namespace

IclParse parse_icl_answer(std::string_view text, Task task, const LabelSchema& schema) {
  IclParse out;
  const auto w = task_words(task);

  // A model that keeps going invents the next demo; drop it.
  if (const auto cut = text.find("\nSentence:"); cut != std::string_view::npos) text = text.substr(0, cut);
  std::string_view answer = text;
  if (auto a = after_last(text, w.answer_header)) {
    answer = *a;
  } else if (auto b = after_last(text, "Answer:")) {
    answer = *b;
  }

  static const std::regex sentinel_re(R"(\bNo\s+\w+\s+found\b)", std::regex::icase);
  const std::string answer_str(answer);

  if (task == Task::RE) {
    const auto nl = answer.find('\n');
    const std::string label = strip_label(answer.substr(0, nl));
    if (label.empty() || label == kNoneLabel || std::regex_search(label, sentinel_re)) {
      out.sentinel = true;
      return out;
    }
    if (schema.contains(label)) {
      out.items.push_back({"", label});
    } else {
      ++out.dropped_unknown;
    }
    return out;
  }

  std::size_t pos = 0;
  bool any_tuple = false;
  while ((pos = answer_str.find('(', pos)) != std::string::npos) {
    int depth = 0;
    std::size_t end = pos;
    for (; end < answer_str.size(); ++end) {
      if (answer_str[end] == '(') ++depth;
      if (answer_str[end] == ')' && --depth == 0) break;
    }
    if (end >= answer_str.size()) break;
    const std::string_view inner = std::string_view(answer_str).substr(pos + 1, end - pos - 1);
    pos = end + 1;

    std::string_view type_part;
    std::string_view surf_part;
    if (const auto sep = inner.find("<SEP>"); sep != std::string_view::npos) {
      type_part = inner.substr(0, sep);
      surf_part = inner.substr(sep + 5);
      surf_part = trim(surf_part);
      if (surf_part.rfind("identified_", 0) == 0) {
        const auto colon = surf_part.find(':');
        if (colon != std::string_view::npos) surf_part = surf_part.substr(colon + 1);
      }
    } else if (const auto comma = inner.find(','); comma != std::string_view::npos) {
      type_part = inner.substr(0, comma);
      surf_part = inner.substr(comma + 1);
    } else {
      continue;
    }
    any_tuple = true;
    const std::string label = strip_label(type_part);
    const std::string surf(trim(surf_part));
    if (surf.empty()) continue;
    if (!schema.contains(label)) {
      ++out.dropped_unknown;
      continue;
    }
    out.items.push_back({surf, label});
  }
  if (!any_tuple && std::regex_search(answer_str, sentinel_re)) out.sentinel = true;
  return out;
}

Alignment align_surface(std::span<const std::string> tokens, std::string_view surface_text) {
  std::vector<std::string_view> words;
  {
    std::string_view rest = trim(surface_text);
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      const auto w = rest.substr(0, sp);
      if (!w.empty()) words.push_back(w);
      if (sp == std::string_view::npos) break;
      rest.remove_prefix(sp + 1);
    }
  }
  Alignment out;
  if (words.empty() || words.size() > tokens.size()) return out;
  for (std::size_t i = 0; i + words.size() <= tokens.size(); ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < words.size() && ok; ++k) ok = tokens[i + k] == words[k];
    if (ok) {
      if (!out.span) out.span = Span{static_cast<int>(i), static_cast<int>(i + words.size())};
      ++out.matches;
    }
  }
  return out;
}

}  // namespace ftr
