#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "ftr/corpus.hpp"
#include "ftr/error.hpp"
#include "oracles/oracles.hpp"
#include "support/tempdir.hpp"

using namespace ftr;

namespace {

LabelSchema ner(std::vector<std::string> labels) { return LabelSchema(Task::NER, std::move(labels)); }

SentenceRecord sent(std::string id, int n_tokens, std::vector<std::pair<Span, std::string>> anns) {
  SentenceRecord s;
  s.sentence_id = std::move(id);
  for (int i = 0; i < n_tokens; ++i) s.tokens.push_back("t" + std::to_string(i));
  for (auto& [span, label] : anns) s.annotations.push_back({Unit::entity(span), label});
  return s;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ftr::Error thrown";
  return ErrorCode::IoError;
}

}  // namespace

TEST(Schema, RejectsNoneAndDuplicates) {
  EXPECT_EQ(code_of([] { ner({"A", "None"}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { ner({"A", "A"}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { ner({"A", ""}); }), ErrorCode::ConfigError);
}

TEST(Schema, ExtendedOrderPutsNoneLast) {
  auto s = ner({"B", "A"});
  EXPECT_EQ(s.extended_size(), 3u);
  EXPECT_EQ(s.extended_label(2), "None");
  EXPECT_EQ(*s.extended_index("None"), 2u);
  EXPECT_EQ(*s.extended_index("A"), 1u);
  EXPECT_FALSE(s.extended_index("C").has_value());
  EXPECT_EQ(LabelSchema::from_json_text(s.to_json_text()), s);
}

TEST(LoadDataset, SmallestWellFormedInput) {
  std::istringstream in(R"({"sentence_id":"s1","tokens":["Bob","ran"],"annotations":[{"kind":"entity","start":0,"end":1,"label":"PER"}]})");
  auto d = read_dataset(in, ner({"PER", "ORG"}));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.annotation_count(), 1u);
}

TEST(LoadDataset, SpanOutOfBounds) {
  std::istringstream in(R"({"sentence_id":"s1","tokens":["Bob"],"annotations":[{"kind":"entity","start":0,"end":2,"label":"PER"}]})");
  EXPECT_EQ(code_of([&] { read_dataset(in, ner({"PER"})); }), ErrorCode::SpanOutOfBounds);
}

TEST(LoadDataset, UnknownLabelAndMalformed) {
  std::istringstream a(R"({"sentence_id":"s1","tokens":["Bob"],"annotations":[{"kind":"entity","start":0,"end":1,"label":"LOC"}]})");
  EXPECT_EQ(code_of([&] { read_dataset(a, ner({"PER"})); }), ErrorCode::UnknownLabel);
  std::istringstream b("{\"sentence_id\":\"s1\"");
  EXPECT_EQ(code_of([&] { read_dataset(b, ner({"PER"})); }), ErrorCode::MalformedRecord);
  std::istringstream c(R"({"sentence_id":"s1","tokens":["a","b"],"annotations":[{"kind":"entity","start":1,"end":1,"label":"PER"}]})");
  EXPECT_NE(code_of([&] { read_dataset(c, ner({"PER"})); }), ErrorCode::IoError);
}

TEST(LoadDataset, MalformedReportsLineNumber) {
  std::istringstream in("{\"sentence_id\":\"s1\",\"tokens\":[\"a\"]}\nnot json\n");
  try {
    read_dataset(in, ner({"PER"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(LoadDataset, ThreeSentenceCountsMatchRecount) {
  auto schema = ner({"PER", "ORG", "LOC"});
  Dataset d(schema, {sent("a", 6, {{{0, 1}, "PER"}, {{2, 3}, "ORG"}}),
                     sent("b", 6, {{{0, 2}, "PER"}, {{3, 4}, "PER"}, {{4, 5}, "LOC"}}),
                     sent("c", 6, {})});
  EXPECT_EQ(d.label_counts(), oracle::recount(d));
  EXPECT_EQ(d.label_counts(), (std::vector<std::size_t>{3, 1, 1}));
}

TEST(LoadDataset, RoundTripIsIdentity) {
  auto schema = LabelSchema(Task::EAE, {"Attacker", "Target"});
  SentenceRecord s;
  s.sentence_id = "x";
  s.tokens = {"He", "attacked", "the", "town", "."};
  s.annotations.push_back({Unit::argument({1, 2}, "Attack", {0, 1}), "Attacker"});
  s.annotations.push_back({Unit::argument({1, 2}, "Attack", {2, 4}), "Target"});
  Dataset d(schema, {s});
  std::ostringstream a;
  write_dataset(a, d);
  std::istringstream in(a.str());
  auto d2 = read_dataset(in, schema);
  std::ostringstream b;
  write_dataset(b, d2);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(d2.sentences(), d.sentences());
}

TEST(LoadDataset, RelationRoundTrip) {
  auto schema = LabelSchema(Task::RE, {"org:founded_by"});
  SentenceRecord s;
  s.sentence_id = "r";
  s.tokens = {"Acme", "was", "founded", "by", "Bob"};
  s.annotations.push_back({Unit::relation({0, 1}, {4, 5}), "org:founded_by"});
  Dataset d(schema, {s});
  std::ostringstream a;
  write_dataset(a, d);
  std::istringstream in(a.str());
  EXPECT_EQ(read_dataset(in, schema).sentences(), d.sentences());
}

TEST(LoadDataset, DuplicateGoldIsDeduplicated) {
  Dataset d(ner({"PER"}), {sent("a", 3, {{{0, 1}, "PER"}, {{0, 1}, "PER"}})});
  EXPECT_EQ(d.annotation_count(), 1u);
}

TEST(KShot, DisjointExactKTakesEverything) {
  auto schema = ner({"A", "B", "C"});
  std::vector<SentenceRecord> v;
  int id = 0;
  for (const char* l : {"A", "B", "C"}) {
    for (int i = 0; i < 3; ++i) v.push_back(sent("s" + std::to_string(id++), 3, {{{0, 1}, l}}));
  }
  Dataset full(schema, v);
  auto out = greedy_kshot_sample(full, {.k = 3, .seed = 7});
  EXPECT_EQ(out.size(), 9u);
  EXPECT_EQ(out.label_counts(), (std::vector<std::size_t>{3, 3, 3}));
}

TEST(KShot, SingleSentenceCarryingEveryLabel) {
  auto schema = ner({"A", "B", "C"});
  Dataset full(schema, {sent("all", 6, {{{0, 1}, "A"}, {{1, 2}, "B"}, {{2, 3}, "C"}}),
                        sent("a", 2, {{{0, 1}, "A"}}), sent("b", 2, {{{0, 1}, "B"}}),
                        sent("c", 2, {{{0, 1}, "C"}})});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto out = greedy_kshot_sample(full, {.k = 1, .seed = seed});
    for (auto c : out.label_counts()) EXPECT_GE(c, 1u);
    auto chk = oracle::check_kshot(full, out, 1);
    EXPECT_TRUE(chk.minimal && chk.replay_ok && chk.subset);
  }
  // Whenever "all" is drawn first the pass must end with it alone.
  bool saw_single = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto out = greedy_kshot_sample(full, {.k = 1, .seed = seed});
    if (out.size() == 1) {
      EXPECT_EQ(out.sentences()[0].sentence_id, "all");
      saw_single = true;
    }
  }
  EXPECT_TRUE(saw_single);
}

TEST(KShot, InsufficientSupport) {
  Dataset full(ner({"A", "B"}), {sent("a", 2, {{{0, 1}, "A"}}), sent("b", 2, {{{0, 1}, "A"}})});
  EXPECT_EQ(code_of([&] { greedy_kshot_sample(full, {.k = 1}); }), ErrorCode::InsufficientSupport);
}

TEST(KShot, FiftySentencePoolRecount) {
  auto schema = ner({"A", "B", "C", "D", "E"});
  std::mt19937_64 rng(3);
  std::vector<SentenceRecord> v;
  for (int i = 0; i < 50; ++i) {
    std::vector<std::pair<Span, std::string>> anns;
    const int n = 1 + static_cast<int>(rng() % 3);
    for (int j = 0; j < n; ++j) anns.push_back({{j, j + 1}, schema.labels()[rng() % 5]});
    v.push_back(sent("s" + std::to_string(i), 4, anns));
  }
  Dataset full(schema, v);
  auto out = greedy_kshot_sample(full, {.k = 5, .seed = 11});
  auto chk = oracle::check_kshot(full, out, 5);
  EXPECT_TRUE(chk.subset);
  EXPECT_TRUE(chk.counts_ok);
  EXPECT_TRUE(chk.replay_ok);
  EXPECT_TRUE(chk.minimal);
}

TEST(KShot, DeterministicPerSeed) {
  auto schema = ner({"A", "B"});
  std::vector<SentenceRecord> v;
  for (int i = 0; i < 40; ++i) v.push_back(sent("s" + std::to_string(i), 2, {{{0, 1}, i % 3 ? "A" : "B"}}));
  Dataset full(schema, v);
  auto a = greedy_kshot_sample(full, {.k = 4, .seed = 99});
  auto b = greedy_kshot_sample(full, {.k = 4, .seed = 99});
  EXPECT_EQ(a.sentences(), b.sentences());
}

TEST(KShot, RelationsTakeExactlyK) {
  auto schema = LabelSchema(Task::RE, {"r1", "r2"});
  std::vector<SentenceRecord> v;
  for (int i = 0; i < 20; ++i) {
    SentenceRecord s;
    s.sentence_id = "s" + std::to_string(i);
    s.tokens = {"a", "b", "c"};
    s.annotations.push_back({Unit::relation({0, 1}, {2, 3}), i % 2 ? "r1" : "r2"});
    v.push_back(s);
  }
  auto out = greedy_kshot_sample(Dataset(schema, v), {.k = 5, .seed = 1});
  EXPECT_EQ(out.size(), 10u);
  EXPECT_EQ(out.label_counts(), (std::vector<std::size_t>{5, 5}));
}

namespace {
Dataset pos_neg(int pos, int neg) {
  std::vector<SentenceRecord> v;
  for (int i = 0; i < pos; ++i) v.push_back(sent("p" + std::to_string(i), 2, {{{0, 1}, "A"}}));
  for (int i = 0; i < neg; ++i) v.push_back(sent("n" + std::to_string(i), 2, {}));
  return Dataset(ner({"A"}), v);
}
}  // namespace

TEST(BalanceNegatives, AddsExactlyRatio) {
  auto full = pos_neg(10, 30);
  auto sampled = pos_neg(10, 0);
  auto out = balance_negatives(sampled, full, {});
  std::size_t neg = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.sentences()[i].is_positive()) ++neg;
    if (i < 10) EXPECT_EQ(out.sentences()[i], sampled.sentences()[i]);
  }
  EXPECT_EQ(neg, 10u);
  std::set<std::string> ids;
  for (const auto& s : out.sentences()) ids.insert(s.sentence_id);
  EXPECT_EQ(ids.size(), out.size());
}

TEST(BalanceNegatives, ZeroPositivesUnchanged) {
  auto full = pos_neg(0, 5);
  auto sampled = pos_neg(0, 0);
  EXPECT_EQ(balance_negatives(sampled, full, {}).size(), 0u);
}

TEST(BalanceNegatives, Insufficient) {
  auto full = pos_neg(7, 5);
  auto sampled = pos_neg(7, 0);
  EXPECT_EQ(code_of([&] { balance_negatives(sampled, full, {}); }), ErrorCode::InsufficientNegatives);
}

TEST(BalanceNegatives, RatioRoundsDown) {
  auto full = pos_neg(7, 20);
  auto sampled = pos_neg(7, 0);
  SamplerConfig cfg;
  cfg.negative_ratio = {1, 2};
  auto out = balance_negatives(sampled, full, cfg);
  EXPECT_EQ(out.size(), 7u + 3u);
}

TEST(SplitTrainValid, TenPercentFloorsToWholeHundreds) {
  for (auto [n, v] : std::vector<std::pair<int, int>>{{400, 40}, {301, 30}, {200, 0}, {300, 0}}) {
    auto d = pos_neg(n, 0);
    auto [train, valid] = split_train_valid(d, {});
    EXPECT_EQ(valid.size(), static_cast<std::size_t>(v)) << n;
    EXPECT_EQ(train.size(), static_cast<std::size_t>(n - v)) << n;
    std::set<std::string> ids;
    for (const auto& s : train.sentences()) ids.insert(s.sentence_id);
    for (const auto& s : valid.sentences()) ids.insert(s.sentence_id);
    EXPECT_EQ(ids.size(), static_cast<std::size_t>(n));
  }
}

TEST(DownsampleTest, IdentityAtFullSize) {
  auto d = pos_neg(8, 4);
  auto out = downsample_test(d, d.size(), 5);
  EXPECT_EQ(out.sentences(), d.sentences());
}

TEST(DownsampleTest, CoverageAcrossSeeds) {
  std::vector<std::string> labels;
  for (int i = 0; i < 66; ++i) labels.push_back("L" + std::to_string(i));
  auto schema = ner(labels);
  std::mt19937_64 rng(5);
  std::vector<SentenceRecord> v;
  for (int i = 0; i < 1200; ++i) {
    std::vector<std::pair<Span, std::string>> anns;
    if (rng() % 4) anns.push_back({{0, 1}, labels[(rng() % 66) * (rng() % 66) / 66]});
    v.push_back(sent("s" + std::to_string(i), 3, anns));
  }
  Dataset full(schema, v);
  std::set<std::string> present;
  for (const auto& s : full.sentences())
    for (const auto& a : s.annotations) present.insert(a.label);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto out = downsample_test(full, 250, seed);
    ASSERT_EQ(out.size(), 250u);
    std::set<std::string> got;
    for (const auto& s : out.sentences())
      for (const auto& a : s.annotations) got.insert(a.label);
    EXPECT_EQ(got, present) << "seed " << seed;
  }
}

TEST(DownsampleTest, TargetTooSmall) {
  Dataset d(ner({"A", "B", "C", "D", "E"}),
            {sent("a", 2, {{{0, 1}, "A"}}), sent("b", 2, {{{0, 1}, "B"}}), sent("c", 2, {{{0, 1}, "C"}}),
             sent("d", 2, {{{0, 1}, "D"}}), sent("e", 2, {{{0, 1}, "E"}})});
  EXPECT_EQ(code_of([&] { downsample_test(d, 3, 0); }), ErrorCode::TargetTooSmall);
}

TEST(SaveLoad, FileRoundTrip) {
  fx::TempDir tmp;
  auto d = pos_neg(3, 2);
  save_dataset(d, tmp / "d.jsonl");
  EXPECT_EQ(load_dataset(tmp / "d.jsonl", d.schema()).sentences(), d.sentences());
  EXPECT_EQ(code_of([&] { load_dataset(tmp / "missing.jsonl", d.schema()); }), ErrorCode::IoError);
}
