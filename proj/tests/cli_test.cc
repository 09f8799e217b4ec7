/*
* Copyright 2026 The Storylab Authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     https://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
* ============================================================================
*/
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "commands.h"
#include "gtest/gtest.h"
#include "json.hpp"

namespace storylab::cli {
namespace {

namespace fs = std::filesystem;

fs::path ScratchDir(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string name = info ? std::string(info->test_suite_name()) + "_" + info->name() : "suite";
  fs::path dir = fs::temp_directory_path() / ("storylab_cli_" + name + "_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t Lines(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

RunConfig SmallConfig(const fs::path& dir) {
  RunConfig c;
  c.data_dir = dir;
  c.seed = 5;
  c.world.n_users = 200;
  c.world.n_stories = 80;
  c.world.n_grades = 2;
  c.plan.min_interactions = 30;
  c.train.k_grid = {2};
  c.train.l2_grid = {1e-4};
  c.train.epochs = 15;
  c.train.learning_rate = 0.05;
  c.dr.bootstrap = 100;
  c.config_text = "small";
  return c;
}

// Runs the binary; returns the exit status and fills stdout/stderr.
int RunBinary(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
  fs::path dir = fs::temp_directory_path() / "storylab_cli_binary";
  fs::create_directories(dir);
  std::string cmd = std::string(STORYLAB_BINARY) + " " + args + " >" + (dir / "out").string() +
                    " 2>" + (dir / "err").string();
  int status = std::system(cmd.c_str());
  if (out) *out = Slurp(dir / "out");
  if (err) *err = Slurp(dir / "err");
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(ExitCodeTest, MapsErrorKinds) {
  EXPECT_EQ(ExitCodeFor(ErrorCode::kParse), 2);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kNonFiniteLoss), 3);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kConfig), 4);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kDegenerateArm), 5);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kRankDeficient), 5);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kCoverageViolation), 6);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kInvariant), 1);
}

TEST(ApplyGridTest, ParsesBothAxes) {
  TrainConfig t;
  ApplyGrid("k=4,8 l2=1e-4,1e-3", t);
  EXPECT_EQ(t.k_grid, (std::vector<int>{4, 8}));
  EXPECT_EQ(t.l2_grid, (std::vector<double>{1e-4, 1e-3}));
}

TEST(ApplyGridTest, RejectsUnknownKeysAndBadNumbers) {
  TrainConfig t;
  EXPECT_THROW(ApplyGrid("depth=3", t), Error);
  EXPECT_THROW(ApplyGrid("k=four", t), Error);
  EXPECT_THROW(ApplyGrid("k", t), Error);
}

class IngestCommandTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = ScratchDir("ingest"); }
  fs::path Write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }
  fs::path dir_;
};

TEST_F(IngestCommandTest, ValidFileSummarizesCounts) {
  auto log = Write("log.csv",
                   "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
                   "1,10,0,0,RECOMMENDED,1,COMPLETED\n"
                   "1,11,0,0,RECOMMENDED,2,NOT_SHOWN\n"
                   "2,10,1,0,OTHER,,SKIPPED\n");
  std::string out;
  int code = RunBinary("--data-dir " + dir_.string() + " ingest --log " + log.string(), &out);
  EXPECT_EQ(code, 0);
  EXPECT_NE(out.find("records: 3 (scored 2)"), std::string::npos) << out;
  EXPECT_NE(out.find("users: 2"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "ingested" / "log.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "ingested" / "manifest.json"));
}

TEST_F(IngestCommandTest, MalformedLineExitsWithParseCodeAndLineNumber) {
  auto log = Write("log.csv",
                   "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
                   "1,10,0,0,RECOMMENDED,1,COMPLETED\n"
                   "1,11,zero,0,RECOMMENDED,2,COMPLETED\n");
  std::string err;
  int code = RunBinary("--data-dir " + dir_.string() + " ingest --log " + log.string(), nullptr,
                       &err);
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("line 3"), std::string::npos) << err;
}

TEST_F(IngestCommandTest, SessionTrimDropsUsersAboveTenCompletions) {
  std::string text = "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n";
  for (int s = 0; s < 11; ++s) text += "1," + std::to_string(s) + ",0,0,OTHER,,COMPLETED\n";
  for (int s = 0; s < 10; ++s) text += "2," + std::to_string(s) + ",0,0,OTHER,,COMPLETED\n";
  auto log = Write("log.csv", text);
  RunConfig config = SmallConfig(dir_);
  IngestOptions options;
  options.log = log;
  options.trim = "session10";
  std::ostringstream out;
  CmdIngest(config, options, out);
  EXPECT_NE(out.str().find("dropped users: 1"), std::string::npos) << out.str();
  auto data = IngestDirectory(dir_ / "ingested").data;
  EXPECT_EQ(data.records().size(), 10u);
}

TEST_F(IngestCommandTest, UnknownTrimRuleIsAConfigError) {
  auto log = Write("log.csv", "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n");
  int code = RunBinary("--data-dir " + dir_.string() + " ingest --trim weekly --log " +
                       log.string());
  EXPECT_EQ(code, 4);
}

TEST(TrainCommandTest, GridProducesOneTuningRowPerCandidate) {
  fs::path dir = ScratchDir("grid");
  RunConfig config = SmallConfig(dir);
  std::ostringstream out;
  CmdSimulate(config, out);
  TrainOptions options;
  options.kinds = {"mf"};
  options.grid = "k=4,8 l2=1e-4,1e-3";
  CmdTrain(config, options, out);
  EXPECT_EQ(Lines(dir / "models" / "tuning.csv"), 1u + 4u);
}

TEST(TrainCommandTest, SameSeedGivesIdenticalModelFiles) {
  fs::path a = ScratchDir("a"), b = ScratchDir("b");
  std::ostringstream out;
  for (const auto& dir : {a, b}) {
    RunConfig config = SmallConfig(dir);
    CmdSimulate(config, out);
    TrainOptions options;
    options.kinds = {"mf", "twfe"};
    CmdTrain(config, options, out);
  }
  EXPECT_EQ(Slurp(a / "models" / "mf.model"), Slurp(b / "models" / "mf.model"));
  EXPECT_EQ(Slurp(a / "models" / "twfe.model"), Slurp(b / "models" / "twfe.model"));
  EXPECT_EQ(Slurp(a / "models" / "manifest.json"), Slurp(b / "models" / "manifest.json"));
}

TEST(TrainCommandTest, CompareWritesOneRowPerModel) {
  fs::path dir = ScratchDir("compare");
  RunConfig config = SmallConfig(dir);
  std::ostringstream out;
  CmdSimulate(config, out);
  TrainOptions options;
  options.kinds = {};
  options.compare = {"mean", "twfe", "mf"};
  CmdTrain(config, options, out);
  EXPECT_EQ(Lines(dir / "models" / "comparison.csv"), 4u);
  EXPECT_TRUE(fs::exists(dir / "models" / "mean.model"));
}

TEST(TrainCommandTest, UnknownModelKindIsAConfigError) {
  fs::path dir = ScratchDir("kind");
  RunConfig config = SmallConfig(dir);
  std::ostringstream out;
  CmdSimulate(config, out);
  TrainOptions options;
  options.kinds = {"forest"};
  try {
    CmdTrain(config, options, out);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(ExitCodeFor(e.code()), kExitConfig);
  }
}

TEST(ExperimentCommandTest, MissingModelsIsAConfigError) {
  fs::path dir = ScratchDir("missing");
  RunConfig config = SmallConfig(dir);
  std::ostringstream out;
  CmdSimulate(config, out);
  try {
    CmdExperiment(config, {}, out);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

// simulate -> train -> experiment -> analyze -> evaluate-policy -> report on
// a small world, shared by the tests below.
class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / "storylab_cli_pipeline");
    fs::remove_all(*dir_);
    RunConfig config = SmallConfig(*dir_);
    std::ostringstream out;
    CmdSimulate(config, out);
    CmdTrain(config, {}, out);
    CmdExperiment(config, {}, out);
    CmdAnalyze(config, {}, out);
    CmdEvaluatePolicy(config, {}, out);
    CmdReport(config, out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path* dir_;
};

fs::path* PipelineTest::dir_ = nullptr;

TEST_F(PipelineTest, AnalysisEmitsSixOutcomeRows) {
  fs::path a = *dir_ / "reports" / "analysis";
  EXPECT_EQ(Lines(a / "ate_table.txt"), 1u + 6u);
  EXPECT_EQ(Lines(a / "ate.csv"), 1u + 18u);
  for (const char* f : {"wilcoxon.csv", "subgroups.csv", "aipw_regression.csv", "rank_means.csv",
                        "session_lengths.csv", "buckets.csv", "exposure.csv", "balance.csv",
                        "mde.csv", "calibration.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
}

TEST_F(PipelineTest, PolicyComparisonHasThreePairsTimesThreeGroups) {
  std::ifstream in(*dir_ / "reports" / "offpolicy" / "policy_values.csv");
  std::string line;
  std::getline(in, line);
  int values = 0, pairs = 0;
  while (std::getline(in, line)) {
    auto first = line.find(','), second = line.find(',', first + 1);
    (second == first + 1 ? values : pairs) += 1;
  }
  EXPECT_EQ(values, 9);
  EXPECT_EQ(pairs, 9);
}

TEST_F(PipelineTest, OffPolicyOutputsAndRegressorNote) {
  fs::path o = *dir_ / "reports" / "offpolicy";
  for (const char* f : {"dr_values.csv", "rct_check.csv", "propensities_editorial.csv",
                        "propensities_topk_pers.csv", "position_effects.txt", "dr_report.txt"}) {
    EXPECT_TRUE(fs::exists(o / f)) << f;
  }
  EXPECT_NE(Slurp(o / "dr_report.txt").find("ridge"), std::string::npos);
  auto head = Slurp(o / "propensities_editorial.csv").substr(0, 26);
  EXPECT_EQ(head, "grade,story_id,probability");
}

TEST_F(PipelineTest, ManifestRecordsHashSeedsAndInputs) {
  auto doc = nlohmann::json::parse(Slurp(*dir_ / "reports" / "offpolicy" / "manifest.json"));
  EXPECT_EQ(doc["command"], "evaluate-policy");
  EXPECT_EQ(doc["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(doc["seeds"]["root"], 5);
  EXPECT_TRUE(doc["seeds"].contains("bootstrap"));
  EXPECT_TRUE(doc["inputs"].contains("evaluation_logs"));
}

TEST_F(PipelineTest, ReportCollectsTables) {
  auto text = Slurp(*dir_ / "reports" / "report.txt");
  EXPECT_NE(text.find("== analysis/ate.csv"), std::string::npos);
  EXPECT_NE(text.find("== offpolicy/policy_values.csv"), std::string::npos);
}

TEST_F(PipelineTest, RerunReproducesEveryFileByteForByte) {
  fs::path again = fs::temp_directory_path() / "storylab_cli_pipeline_again";
  fs::remove_all(again);
  RunConfig config = SmallConfig(again);
  std::ostringstream out;
  CmdSimulate(config, out);
  CmdTrain(config, {}, out);
  CmdExperiment(config, {}, out);
  CmdAnalyze(config, {}, out);
  CmdEvaluatePolicy(config, {}, out);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(again)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), again);
    if (rel.filename() == "report.txt") continue;
    EXPECT_EQ(Slurp(e.path()), Slurp(*dir_ / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 30u);
}

TEST_F(PipelineTest, LargePropensityFloorIsACoverageViolation) {
  RunConfig config = SmallConfig(*dir_);
  config.report_dir = fs::temp_directory_path() / "storylab_cli_pipeline_floor";
  config.dr.propensity_floor = 0.5;
  std::ostringstream out;
  try {
    CmdEvaluatePolicy(config, {}, out);
    FAIL() << "expected a coverage violation";
  } catch (const Error& e) {
    EXPECT_EQ(ExitCodeFor(e.code()), kExitCoverage);
  }
}

TEST_F(PipelineTest, BinaryReportsCoverageViolationExitCode) {
  int code = RunBinary("--data-dir " + dir_->string() +
                       " --n-users 200 --n-stories 80 --n-grades 2 --bootstrap 100"
                       " --report-dir " + (fs::temp_directory_path() / "storylab_cli_bin").string() +
                       " evaluate-policy --propensity-floor 0.5");
  EXPECT_EQ(code, 6);
}

TEST_F(PipelineTest, UnknownPolicyIsAConfigError) {
  int code = RunBinary("--data-dir " + dir_->string() + " evaluate-policy --policies pers,bandit");
  EXPECT_EQ(code, 4);
}

TEST(NullExperimentTest, DifferenceInMeansIntervalCoversZero) {
  fs::path dir = ScratchDir("null");
  RunConfig config = SmallConfig(dir);
  std::ostringstream out;
  CmdSimulate(config, out);
  CmdTrain(config, {}, out);
  ExperimentOptions options;
  options.null_experiment = true;
  CmdExperiment(config, options, out);
  AnalyzeOptions analyze;
  analyze.diagnostics = false;
  CmdAnalyze(config, analyze, out);
  std::ifstream in(dir / "reports" / "analysis" / "ate.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  ASSERT_EQ(line.rfind("DiffInMeans,engagement_section,", 0), 0u) << line;
  std::stringstream fields(line);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(fields, cell, ',')) cells.push_back(cell);
  double estimate = std::stod(cells[3]), se = std::stod(cells[4]);
  EXPECT_LE(std::abs(estimate), 1.96 * se);
}

}  // namespace
}  // namespace storylab::cli
