#include <benchmark/benchmark.h>

#include "ftr/pipeline.hpp"
#include "support/scenario.hpp"

using namespace ftr;

namespace {

const fx::Synthetic& fixture(std::size_t n) {
  static std::map<std::size_t, fx::Synthetic> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, fx::random_synthetic(fx::schema(Task::NER, 12), n, 7)).first;
  return it->second;
}

void BM_MicroF1(benchmark::State& state) {
  const auto& syn = fixture(static_cast<std::size_t>(state.range(0)));
  std::vector<Prediction> preds;
  for (const auto& [id, rec] : syn.scores.records) preds.push_back(filter_prediction(rec));
  for (auto _ : state) benchmark::DoNotOptimize(micro_f1(preds, syn.gold));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MicroF1)->Arg(1000)->Arg(10000);

void BM_Routing(benchmark::State& state) {
  const auto& syn = fixture(static_cast<std::size_t>(state.range(0)));
  RouterConfig cfg;
  for (auto _ : state) {
    std::size_t hard = 0;
    for (const auto& [id, rec] : syn.scores.records) {
      if (classify_difficulty(rec, cfg) == Difficulty::Hard) {
        ++hard;
        benchmark::DoNotOptimize(top_candidates(rec, cfg));
      }
    }
    benchmark::DoNotOptimize(hard);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Routing)->Arg(1000)->Arg(10000);

struct PromptFixture {
  fx::Scenario sc{fx::schema(Task::NER, 12), fx::random_synthetic(fx::schema(Task::NER, 12), 50, 9)};
  const ScoreRecord& rec() const { return sc.syn.scores.records.begin()->second; }
  const SentenceRecord& sent() const { return *sc.syn.gold.find(rec().sentence_id); }
  CandidateSet cands() const { return top_candidates(rec(), RouterConfig{}); }
};

void BM_RenderMcq(benchmark::State& state) {
  PromptFixture f;
  const auto c = f.cands();
  for (auto _ : state) benchmark::DoNotOptimize(render_mcq(f.rec(), f.sent(), c, {}, f.sc.tset));
}
BENCHMARK(BM_RenderMcq);

void BM_ParseMcq(benchmark::State& state) {
  PromptFixture f;
  const auto b = render_mcq(f.rec(), f.sent(), f.cands(), {}, f.sc.tset);
  const std::string reply = "Analysis: the context points to the second option.\nAnswer: (b)";
  for (auto _ : state) benchmark::DoNotOptimize(parse_mcq_answer(reply, b));
}
BENCHMARK(BM_ParseMcq);

}  // namespace
BENCHMARK_MAIN();
