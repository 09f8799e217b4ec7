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
// storylab: simulate, train, experiment, analyze and evaluate-policy from one
// configuration file. Global options may appear before or after the
// subcommand and may be set in the file given by --config (INI or TOML).

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.h"

namespace {

using storylab::cli::RunConfig;

void AddGlobalOptions(CLI::App& app, RunConfig& c) {
  app.set_config("--config", "", "configuration file (INI or TOML)");
  app.add_option("--data-dir", c.data_dir, "data root (default $STORYLAB_DATA_ROOT)");
  app.add_option("--model-dir", c.model_dir, "model directory (default <data-dir>/models)");
  app.add_option("--report-dir", c.report_dir, "report directory (default <data-dir>/reports)");
  app.add_option("--seed", c.seed, "root seed; every stage derives its own")->capture_default_str();
  app.add_option("--threads", c.threads, "worker threads for bootstrap resampling")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  auto& w = c.world;
  app.add_option("--n-users", w.n_users)->group("World")->capture_default_str();
  app.add_option("--n-stories", w.n_stories)->group("World")->capture_default_str();
  app.add_option("--n-grades", w.n_grades)->group("World")->capture_default_str();
  app.add_option("--latent-dim", w.latent_dim)->group("World")->capture_default_str();
  app.add_option("--niche-user-share", w.niche_user_share)->group("World")->capture_default_str();
  app.add_option("--niche-story-share", w.niche_story_share)->group("World")->capture_default_str();
  app.add_option("--popularity-gap", w.popularity_gap)->group("World")->capture_default_str();
  app.add_option("--editorial-pool-fraction", w.editorial_pool_fraction)
      ->group("World")
      ->capture_default_str();
  app.add_option("--active-day-prob", w.active_day_prob)->group("World")->capture_default_str();
  app.add_option("--session-rate", w.session_rate_median)->group("World")->capture_default_str();
  app.add_flag("--elastic-usage", w.elastic_usage, "sessions lengthen with engagement")
      ->group("World");

  auto& p = c.plan;
  app.add_option("--pre-days", p.pre_days)->group("Experiment")->capture_default_str();
  app.add_option("--days", p.duration_days, "experiment length in days")
      ->group("Experiment")
      ->capture_default_str();
  app.add_option("--p", p.treatment_prob, "treatment probability")
      ->group("Experiment")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app.add_option("--min-interactions", p.min_interactions, "eligibility threshold")
      ->group("Experiment")
      ->capture_default_str();
  app.add_option("--treatment-daily-updates", p.treatment_daily_updates)
      ->group("Experiment")
      ->capture_default_str();

  auto& t = c.train;
  app.add_option("--epochs", t.epochs)->group("Training")->capture_default_str();
  app.add_option("--learning-rate", t.learning_rate)->group("Training")->capture_default_str();
  app.add_option("--batch-size", t.batch_size)->group("Training")->capture_default_str();
  app.add_option("--k-grid", t.k_grid)->group("Training")->delimiter(',')->capture_default_str();
  app.add_option("--l2-grid", t.l2_grid)->group("Training")->delimiter(',')->capture_default_str();

  auto& d = c.dr;
  app.add_option("--bootstrap", d.bootstrap, "bootstrap replicates")
      ->group("Off-policy")
      ->capture_default_str();
  app.add_option("--propensity-floor", d.propensity_floor)->group("Off-policy")->capture_default_str();
  app.add_option("--max-clipped-fraction", d.max_clipped_fraction)
      ->group("Off-policy")
      ->capture_default_str();
  app.add_flag("--monotone-position-effects", d.monotone_position_effects)->group("Off-policy");
  app.add_option("--folds", d.folds)->group("Off-policy")->capture_default_str();
  app.add_option("--ridge-lambda", d.ridge_lambda)->group("Off-policy")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = storylab::cli;
  RunConfig config;
  if (const char* root = std::getenv("STORYLAB_DATA_ROOT"); root && *root) {
    config.data_dir = root;
  }

  CLI::App app{"storylab: personalized story recommendation experiments"};
  app.require_subcommand(1);
  AddGlobalOptions(app, config);

  cli::IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "validate a log and write a dataset directory");
  ingest_cmd->add_option("--log", ingest.log, "log file");
  ingest_cmd->add_option("--users", ingest.users, "user sidecar file");
  ingest_cmd->add_option("--stories", ingest.stories, "story sidecar file");
  ingest_cmd->add_option("--input-dir", ingest.input_dir, "directory with log.csv and sidecars");
  ingest_cmd->add_option("--out", ingest.out, "output directory");
  ingest_cmd->add_option("--trim", ingest.trim, "none, session10 or daily5")->capture_default_str();
  ingest_cmd->add_flag("--lenient", ingest.lenient, "collect malformed lines instead of failing");

  auto* simulate_cmd = app.add_subcommand("simulate", "generate a world and its pre-period log");

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "fit outcome models");
  train_cmd->add_option("--input", train.input, "dataset directory (default <data-dir>/pre)");
  train_cmd->add_option("--kinds", train.kinds, "models to save")->delimiter(',')->capture_default_str();
  train_cmd->add_option("--compare", train.compare, "models for the comparison table")
      ->delimiter(',');
  train_cmd->add_option("--grid", train.grid, "hyperparameter grid, e.g. \"k=4,8 l2=1e-4,1e-3\"");
  train_cmd->add_option("--thresholds", train.thresholds, "history thresholds for the MSE grid")
      ->delimiter(',');

  cli::ExperimentOptions experiment;
  auto* experiment_cmd = app.add_subcommand("experiment", "run the randomized experiment");
  std::vector<std::string> arms{"pers", "edit"};
  experiment_cmd->add_option("--arms", arms, "treatment,control policies")
      ->delimiter(',')
      ->expected(2)
      ->capture_default_str();
  experiment_cmd->add_flag("--null", experiment.null_experiment,
                           "give the control arm the treatment policy");

  cli::AnalyzeOptions analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "estimate treatment effects");
  analyze_cmd->add_option("--subgroups", analyze.subgroups)->delimiter(',')->capture_default_str();
  analyze_cmd->add_option("--balance", analyze.balance)->capture_default_str();
  analyze_cmd->add_option("--diagnostics", analyze.diagnostics)->capture_default_str();
  analyze_cmd->add_option("--buckets", analyze.buckets)->check(CLI::PositiveNumber)->capture_default_str();
  analyze_cmd->add_option("--trim", analyze.trim, "none, session10 or daily5")->capture_default_str();

  cli::EvaluateOptions evaluate;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate-policy", "doubly robust off-policy policy values");
  evaluate_cmd->add_option("--policies", evaluate.policies)->delimiter(',')->capture_default_str();
  evaluate_cmd->add_option("--check-against-rct", evaluate.check_against_rct)->capture_default_str();
  evaluate_cmd->add_option("--eval-logs", evaluate.eval_logs,
                           "dataset directory (default: experiment control arm)");

  auto* report_cmd = app.add_subcommand("report", "collect the report tables into report.txt");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }
  config.config_text = app.config_to_str(true, false);
  experiment.arms = arms[0] + ',' + arms[1];

  try {
    if (*ingest_cmd) cli::CmdIngest(config, ingest, std::cout);
    if (*simulate_cmd) cli::CmdSimulate(config, std::cout);
    if (*train_cmd) cli::CmdTrain(config, train, std::cout);
    if (*experiment_cmd) cli::CmdExperiment(config, experiment, std::cout);
    if (*analyze_cmd) cli::CmdAnalyze(config, analyze, std::cout);
    if (*evaluate_cmd) cli::CmdEvaluatePolicy(config, evaluate, std::cout);
    if (*report_cmd) cli::CmdReport(config, std::cout);
  } catch (const storylab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitFailure;
  }
  return cli::kExitOk;
}
