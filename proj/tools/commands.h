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
#ifndef STORYLAB_TOOLS_COMMANDS_H_
#define STORYLAB_TOOLS_COMMANDS_H_

// Subcommand implementations behind the `storylab` binary. Each command
// reads and writes the directory layout below and a JSON manifest per output
// directory:
//
//   <data_dir>/pre/          pre-period log (log.csv, users.csv, stories.csv)
//   <data_dir>/world/        editorial script, true position effects
//   <data_dir>/experiment/   experiment log, arms.csv, window.csv
//   <model_dir>/             <kind>.model, tuning.csv, comparison.csv
//   <report_dir>/analysis/   experiment analysis tables and figure data
//   <report_dir>/offpolicy/  propensities, DR values, RCT agreement check

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "storylab/common.h"
#include "storylab/offpolicy_eval.h"
#include "storylab/outcome_models.h"
#include "storylab/simulator.h"

namespace storylab::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitParse = 2,
  kExitDivergence = 3,
  kExitConfig = 4,
  kExitDegenerate = 5,
  kExitCoverage = 6,
};

int ExitCodeFor(ErrorCode code);

struct DrSettings {
  int bootstrap = 500;
  double propensity_floor = kDefaultPropensityFloor;
  double max_clipped_fraction = 0.2;
  bool monotone_position_effects = false;
  int folds = 5;
  double ridge_lambda = 1.0;
};

struct RunConfig {
  std::filesystem::path data_dir{"storylab-data"};
  std::filesystem::path model_dir;   // empty: <data_dir>/models
  std::filesystem::path report_dir;  // empty: <data_dir>/reports
  std::uint64_t seed = 1;
  int threads = 1;
  WorldConfig world;
  ExperimentPlan plan;
  TrainConfig train;
  DrSettings dr;
  // Effective configuration text; hashed into every manifest.
  std::string config_text;

  std::filesystem::path ModelDir() const;
  std::filesystem::path ReportDir() const;
  // The plan with the root seed and training settings applied.
  ExperimentPlan EffectivePlan() const;
};

struct IngestOptions {
  std::optional<std::filesystem::path> log;
  std::optional<std::filesystem::path> users;
  std::optional<std::filesystem::path> stories;
  std::optional<std::filesystem::path> input_dir;
  std::filesystem::path out;  // empty: <data_dir>/ingested
  std::string trim = "none";  // none, session10, daily5
  bool lenient = false;
};

struct TrainOptions {
  std::filesystem::path input;  // empty: <data_dir>/pre
  std::vector<std::string> kinds{"mf", "twfe"};
  std::vector<std::string> compare;
  std::string grid;  // e.g. "k=4,8 l2=1e-4,1e-3"
  std::vector<int> thresholds;
};

struct ExperimentOptions {
  std::string arms = "pers,edit";
  bool null_experiment = false;
};

struct AnalyzeOptions {
  std::vector<std::string> subgroups{"niche", "heavy", "completion", "crossed", "new"};
  bool balance = true;
  bool diagnostics = true;
  int buckets = 10;
  std::string trim = "session10";
};

struct EvaluateOptions {
  std::vector<std::string> policies{"pers", "pop", "edit"};
  bool check_against_rct = true;
  // Logs to evaluate on; empty: the control arm of the experiment.
  std::optional<std::filesystem::path> eval_logs;
};

// Commands print a short summary to `out` and throw storylab::Error on
// failure.
void CmdIngest(const RunConfig& config, const IngestOptions& options, std::ostream& out);
void CmdSimulate(const RunConfig& config, std::ostream& out);
void CmdTrain(const RunConfig& config, const TrainOptions& options, std::ostream& out);
void CmdExperiment(const RunConfig& config, const ExperimentOptions& options,
                   std::ostream& out);
void CmdAnalyze(const RunConfig& config, const AnalyzeOptions& options, std::ostream& out);
void CmdEvaluatePolicy(const RunConfig& config, const EvaluateOptions& options,
                       std::ostream& out);
void CmdReport(const RunConfig& config, std::ostream& out);

// Parses "k=4,8 l2=1e-4,1e-3" into the training grids.
void ApplyGrid(const std::string& grid, TrainConfig& train);

}  // namespace storylab::cli

#endif  // STORYLAB_TOOLS_COMMANDS_H_
