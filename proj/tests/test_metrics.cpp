#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ftr/error.hpp"
#include "ftr/metrics.hpp"
#include "oracles/oracles.hpp"

using namespace ftr;

namespace {

Prediction pred(std::string sent, Span s, std::string label, double conf = 1.0, std::string id = "") {
  return {id.empty() ? sent + std::to_string(s.start) : id, std::move(sent), Unit::entity(s), std::move(label), conf};
}

Dataset bob_gold() {
  SentenceRecord s{"s", {"Bob", "met", "Acme"}, {{Unit::entity({0, 1}), "PER"}}};
  return Dataset(LabelSchema(Task::NER, {"PER", "ORG"}), {s});
}

}  // namespace

TEST(MicroF1, MixedHitsAndMisses) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER"), pred("s", {2, 3}, "ORG")};
  auto r = micro_f1(p, bob_gold());
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(MicroF1, EmptyPredictions) {
  auto r = micro_f1({}, bob_gold());
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.counts.fn, 1u);
}

TEST(MicroF1, NoneNeverCountsAsFalsePositive) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER"), pred("s", {2, 3}, "None")};
  auto r = micro_f1(p, bob_gold());
  EXPECT_EQ(r.counts, (Counts{1, 0, 0}));
}

TEST(MicroF1, DuplicateAddsOneFalsePositive) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER"), pred("s", {0, 1}, "PER", 1.0, "dup")};
  auto r = micro_f1(p, bob_gold());
  EXPECT_EQ(r.counts, (Counts{1, 1, 0}));
}

TEST(MicroF1, UnknownSentence) {
  std::vector<Prediction> p{pred("zzz", {0, 1}, "PER")};
  try {
    micro_f1(p, bob_gold());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownSentence);
  }
}

TEST(MicroF1, PermutationInvariantAndMatchesOracle) {
  std::mt19937_64 rng(42);
  LabelSchema schema(Task::NER, {"A", "B", "C"});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SentenceRecord> sents;
    std::vector<Prediction> preds;
    for (int s = 0; s < 3; ++s) {
      SentenceRecord r{"s" + std::to_string(s), std::vector<std::string>(8, "x"), {}};
      for (int m = 0; m < 5; ++m) {
        int a = static_cast<int>(rng() % 7);
        Span sp{a, a + 1 + static_cast<int>(rng() % (8 - a))};
        if (rng() % 2) r.annotations.push_back({Unit::entity(sp), schema.labels()[rng() % 3]});
        if (rng() % 2) {
          const char* l[] = {"A", "B", "C", "None"};
          preds.push_back(pred(r.sentence_id, sp, l[rng() % 4], 1.0, std::to_string(preds.size())));
        }
      }
      sents.push_back(r);
    }
    Dataset gold(schema, sents);
    auto r1 = micro_f1(preds, gold);
    std::shuffle(preds.begin(), preds.end(), rng);
    auto r2 = micro_f1(preds, gold);
    EXPECT_EQ(r1.counts, r2.counts);
    auto o = oracle::exact_match(preds, gold);
    EXPECT_EQ(r1.counts, (Counts{o.tp, o.fp, o.fn}));
    EXPECT_EQ(r1.f1, oracle::f1(o));
  }
}

TEST(HeadF1, SharedHeadTokenMatches) {
  LabelSchema schema(Task::EAE, {"Agent"});
  SentenceRecord s{"s", std::vector<std::string>(8, "x"), {{Unit::argument({0, 1}, "Attack", {3, 6}), "Agent"}}};
  Dataset gold(schema, {s});
  Prediction p{"p", "s", Unit::argument({0, 1}, "Attack", {5, 6}), "Agent", 1.0};
  EXPECT_EQ(head_f1(std::vector{p}, gold).counts.tp, 1u);
  Prediction exact{"q", "s", Unit::argument({0, 1}, "Attack", {3, 6}), "Agent", 1.0};
  EXPECT_EQ(head_f1(std::vector{exact}, gold).counts.tp, 1u);
  // first-token rule no longer matches the shorter span
  EXPECT_EQ(head_f1(std::vector{p}, gold, HeadRule::FirstToken).counts.tp, 0u);
}

TEST(HeadF1, WrongTask) {
  try {
    head_f1({}, bob_gold());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongTask);
  }
}

TEST(Buckets, SingleBucketEqualsOverall) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER", 0.3), pred("s", {2, 3}, "ORG", 0.8)};
  auto rows = confidence_buckets(p, p, bob_gold(), {0.0, 1.0});
  ASSERT_EQ(rows.size(), 1u);
  auto overall = micro_f1(p, bob_gold());
  EXPECT_EQ(rows[0].f1_before, overall.f1);
  EXPECT_EQ(rows[0].n, 2u);
}

TEST(Buckets, AllAtOneFallInUpperBucket) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER", 1.0), pred("s", {2, 3}, "ORG", 1.0)};
  auto rows = confidence_buckets(p, p, bob_gold(), {0.0, 0.5, 1.0});
  EXPECT_EQ(rows[0].n, 0u);
  EXPECT_EQ(rows[1].n, 2u);
}

TEST(Buckets, BadEdges) {
  for (std::vector<double> e : {std::vector<double>{0.0, 0.5, 0.5, 1.0}, {0.1, 1.0}, {0.0, 0.9}, {0.0}}) {
    try {
      confidence_buckets({}, {}, bob_gold(), e);
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::BadEdges);
    }
  }
}

TEST(Buckets, NegPosRatiosAndRecomposition) {
  // Easy bucket mostly negatives, hard bucket mostly positives.
  LabelSchema schema(Task::NER, {"A"});
  SentenceRecord s{"s", std::vector<std::string>(20, "x"), {}};
  std::vector<Prediction> p;
  for (int i = 0; i < 20; ++i) {
    const bool easy = i < 12;
    const bool positive = easy ? i < 2 : i < 17;
    if (positive) s.annotations.push_back({Unit::entity({i, i + 1}), "A"});
    p.push_back(pred("s", {i, i + 1}, i % 3 ? "A" : "None", easy ? 0.95 : 0.4, std::to_string(i)));
  }
  Dataset gold(schema, {s});
  auto rows = confidence_buckets(p, p, gold, default_bucket_edges());
  ASSERT_EQ(rows.size(), 3u);
  // hand count: easy i<12, positives i<2 -> 2 pos 10 neg; hard 12..19, positives 12..16 -> 5 pos 3 neg
  EXPECT_EQ(rows[2].positives, 2u);
  EXPECT_EQ(rows[2].negatives, 10u);
  EXPECT_DOUBLE_EQ(*rows[2].neg_pos_ratio, 5.0);
  EXPECT_EQ(rows[0].positives, 5u);
  EXPECT_EQ(rows[0].negatives, 3u);
  EXPECT_DOUBLE_EQ(*rows[0].neg_pos_ratio, 0.6);
  EXPECT_EQ(rows[1].n, 0u);
  EXPECT_FALSE(rows[1].neg_pos_ratio.has_value());
  Counts sum;
  std::size_t n = 0;
  for (const auto& r : rows) {
    sum += r.before;
    n += r.n;
  }
  EXPECT_EQ(n, p.size());
  EXPECT_EQ(sum, micro_f1(p, gold).counts);
}

TEST(RerankedSubset, ZeroRoutedGivesZeroRatio) {
  std::vector<Prediction> p{pred("s", {0, 1}, "PER")};
  auto r = reranked_subset(p, p, {}, bob_gold());
  EXPECT_EQ(r.reranked, 0u);
  EXPECT_EQ(r.reranked_ratio, 0.0);
  EXPECT_EQ(r.f1_before_on_reranked, r.f1_after_on_reranked);
}

TEST(RerankedSubset, BeforeAfterOnSubset) {
  std::vector<Prediction> before{pred("s", {0, 1}, "ORG", 0.4, "a"), pred("s", {2, 3}, "None", 0.9, "b")};
  auto after = before;
  after[0].label = "PER";
  auto r = reranked_subset(before, after, {"a"}, bob_gold());
  EXPECT_EQ(r.reranked, 1u);
  EXPECT_EQ(r.total, 2u);
  EXPECT_DOUBLE_EQ(r.reranked_ratio, 0.5);
  EXPECT_EQ(r.f1_before_on_reranked, 0.0);
  EXPECT_EQ(r.f1_after_on_reranked, 1.0);
}

TEST(Uncovered, CountsGoldUnitsWithoutSamples) {
  std::vector<Prediction> p{pred("s", {2, 3}, "None")};
  EXPECT_EQ(uncovered_gold_units(p, bob_gold()), 1u);
  p.push_back(pred("s", {0, 1}, "None"));
  EXPECT_EQ(uncovered_gold_units(p, bob_gold()), 0u);
}

TEST(Serialize, TsvIsNameTabValue) {
  auto r = micro_f1(std::vector{pred("s", {0, 1}, "PER")}, bob_gold());
  auto tsv = to_tsv(r);
  EXPECT_NE(tsv.find("f1\t1\n"), std::string::npos);
  EXPECT_NE(tsv.find("tp\t1\n"), std::string::npos);
  EXPECT_EQ(to_json(r).front(), '{');
}
