#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "ftr/pipeline.hpp"
#include "support/scenario.hpp"
#include "support/tempdir.hpp"

using namespace ftr;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + FTR_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct CliFixture : ::testing::Test {
  fx::TempDir tmp;
  void SetUp() override {
    auto s = fx::schema(Task::NER, 5);
    fx::Scenario sc(s, fx::random_synthetic(s, 120, 3));
    sc.write_files(tmp.path());
  }
  std::string cfg(const std::string& body) {
    write_text(tmp / "cfg.json", body);
    return (tmp / "cfg.json").string();
  }
};

}  // namespace

TEST_F(CliFixture, RunSucceeds) {
  EXPECT_EQ(run_cli("run -c " + cfg(fx::Scenario::config_json("oracle"))), 0);
  EXPECT_TRUE(std::filesystem::exists(tmp / "out" / "report.json"));
  EXPECT_EQ(run_cli("report --run-dir " + (tmp / "out").string()), 0);
}

TEST_F(CliFixture, OverridesApply) {
  EXPECT_EQ(run_cli("run -c " + cfg(fx::Scenario::config_json("oracle")) + " --tau 0 --out-dir " +
                    (tmp / "o2").string()),
            0);
  const auto run = nlohmann::json::parse(read_text(tmp / "o2" / "run.json"));
  EXPECT_EQ(run["ledger"]["total_calls"], 0);
  EXPECT_EQ(run["config"]["router"]["tau"], 0.0);
}

TEST_F(CliFixture, ConfigErrorsExitTwo) {
  EXPECT_EQ(run_cli("run -c " + cfg("{\"bogus\":true}")), 2);
  EXPECT_EQ(run_cli("run -c " + (tmp / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("run --no-such-flag"), 2);
  EXPECT_EQ(run_cli("run -c " + cfg(R"({"llm":{"endpoint":"${FTR_TEST_UNSET_VAR}"}})")), 2);
}

TEST_F(CliFixture, DataErrorsExitThree) {
  write_text(tmp / "scores.jsonl", "{\"sample_id\":\"x\"}\n");
  EXPECT_EQ(run_cli("run -c " + cfg(fx::Scenario::config_json("oracle"))), 3);
}

TEST_F(CliFixture, EndpointErrorsExitFour) {
  const std::string body = R"({"mode":"filter_then_rerank",
    "paths":{"schema":"schema.json","test":"test.jsonl","scores":"scores.jsonl",
             "templates":"templates.tmpl","demos":"demos.jsonl","out_dir":"out"},
    "llm":{"backend":"http","rate_limit_rpm":0,"max_retries":0,"timeout_s":2}})";
  EXPECT_EQ(run_cli("run -c " + cfg(body), "LLM_ENDPOINT=http://127.0.0.1:1 LLM_API_KEY=k LLM_MODEL=m"), 4);
}

TEST_F(CliFixture, IngestValidates) {
  EXPECT_EQ(run_cli("ingest --schema " + (tmp / "schema.json").string() + " --scores " +
                    (tmp / "scores.jsonl").string()),
            0);
  write_text(tmp / "bad.jsonl",
             R"({"sample_id":"x","sentence_id":"s","unit":{"kind":"entity","start":0,"end":1},"probs":{"L00":0.5}})" "\n");
  EXPECT_EQ(run_cli("ingest --schema " + (tmp / "schema.json").string() + " --scores " + (tmp / "bad.jsonl").string()),
            3);
}

TEST_F(CliFixture, SampleWritesSplits) {
  EXPECT_EQ(run_cli("sample --schema " + (tmp / "schema.json").string() + " --input " + (tmp / "test.jsonl").string() +
                    " --k 1 --seed 2 --negative-ratio 0 --out-dir " + (tmp / "split").string()),
            0);
  EXPECT_TRUE(std::filesystem::exists(tmp / "split" / "train.jsonl"));
}

TEST_F(CliFixture, AblateWritesRows) {
  EXPECT_EQ(run_cli("ablate -c " + cfg(fx::Scenario::config_json("oracle")) + " --out-dir " + (tmp / "abl").string()), 0);
  const auto tsv = read_text(tmp / "abl" / "ablation.tsv");
  for (const char* row : {"full", "no_cot", "no_cot_no_demo", "no_cot_no_demo_no_lf", "no_cot_no_demo_no_lf_no_ad"}) {
    EXPECT_NE(tsv.find(std::string(row) + "\t"), std::string::npos) << row;
  }
}
