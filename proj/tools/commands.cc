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
#include "commands.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "storylab/experiment_analysis.h"
#include "storylab/interaction_log.h"
#include "storylab/policy_engine.h"
#include "storylab/statistics.h"

namespace storylab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRegressorNote =
    "outcome regressor: cross-fitted ridge regression on learned representations "
    "and observed covariates (substitute for a regression forest)";

std::string Hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void WriteFile(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  body(out);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<std::string> Split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    out.push_back(cur);
  }
  return out;
}

class Manifest {
 public:
  Manifest(const RunConfig& config, std::string command) {
    doc_["command"] = std::move(command);
    doc_["config_hash"] = Hex(Fnv1a(config.config_text));
    doc_["seeds"]["root"] = config.seed;
  }
  void Seed(const std::string& stage, std::uint64_t value) { doc_["seeds"][stage] = value; }
  void Input(const std::string& name, const LogDataset& data) {
    doc_["inputs"][name] = Hex(Fingerprint(data));
  }
  void InputText(const std::string& name, const std::string& value) {
    doc_["inputs"][name] = value;
  }
  void Output(const fs::path& path) { doc_["outputs"].push_back(path.filename().string()); }
  void Note(const std::string& key, json value) { doc_["notes"][key] = std::move(value); }
  void Write(const fs::path& dir) const {
    WriteFile(dir / "manifest.json", [&](std::ostream& o) { o << doc_.dump(2) << '\n'; });
  }

 private:
  json doc_;
};

World MakeRunWorld(const RunConfig& config) {
  return MakeWorld(config.world, StageSeed(config.seed, "world"));
}

LogDataset LoadDataset(const fs::path& dir, const std::string& hint) {
  if (!fs::exists(dir / "log.csv")) {
    throw Error(ErrorCode::kConfig, "no dataset in " + dir.string() + "; " + hint);
  }
  return IngestDirectory(dir).data;
}

std::shared_ptr<const OutcomeModel> LoadModel(const RunConfig& config, const std::string& token) {
  fs::path path = config.ModelDir() / (token + ".model");
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kConfig, "missing model " + path.string() + "; run train first");
  }
  return std::make_shared<const OutcomeModel>(LoadModelFile(path));
}

ModelKind ModelKindFromToken(const std::string& token) {
  auto kind = ParseModelKind(token);
  if (!kind) throw Error(ErrorCode::kConfig, "unknown model kind '" + token + "'");
  return *kind;
}

std::string ModelFileToken(ModelKind kind) {
  std::string t(ModelKindToken(kind));
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  return t;
}

PolicyKind PolicyFromToken(const std::string& token) {
  if (token == "pers" || token == "personalized") return PolicyKind::kPersonalized;
  if (token == "pop" || token == "popularity") return PolicyKind::kPopularity;
  if (token == "edit" || token == "editorial") return PolicyKind::kEditorial;
  throw Error(ErrorCode::kConfig, "unknown policy '" + token + "' (pers, pop, edit)");
}

PolicySpec LoadPolicy(const RunConfig& config, const World* world, PolicyKind kind,
                      int first_week, int last_week) {
  const int slate = config.world.slate_size;
  switch (kind) {
    case PolicyKind::kPersonalized:
      return PolicySpec::Personalized(LoadModel(config, "mf"), slate);
    case PolicyKind::kPopularity:
      return PolicySpec::Popularity(LoadModel(config, "twfe"), slate);
    case PolicyKind::kEditorial:
      if (!world) throw Error(ErrorCode::kConfig, "editorial slates need the world");
      return PolicySpec::Editorial(world->MakeEditorialScript(first_week, last_week), slate);
  }
  throw Error(ErrorCode::kConfig, "unknown policy kind");
}

TrimResult ApplyTrim(const LogDataset& data, const std::string& rule) {
  if (rule == "none") return TrimResult{data, {}, ""};
  if (rule == "session10") return TrimOutliers(data, 10);
  if (rule == "daily5") return TrimTopDailyPercentile(data, 0.05);
  throw Error(ErrorCode::kConfig, "unknown trim rule '" + rule + "' (none, session10, daily5)");
}

// arms.csv: user_id,arm with arm in {treatment, control}.
void WriteArms(const std::map<UserId, bool>& arms, std::ostream& out) {
  out << "user_id,arm\n";
  for (const auto& [u, t] : arms) out << Raw(u) << ',' << (t ? "treatment" : "control") << '\n';
}

ArmTable ReadArms(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "missing " + path.string() + "; run experiment first");
  ArmTable arms;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (++n == 1 || line.empty()) continue;
    auto f = Split(line, ',');
    if (f.size() != 2 || (f[1] != "treatment" && f[1] != "control")) {
      throw ParseError(n, "expected user_id,arm");
    }
    arms[UserId{static_cast<std::uint32_t>(std::stoul(f[0]))}] = f[1] == "treatment";
  }
  return arms;
}

Period ReadWindow(const fs::path& path) {
  std::ifstream in(path);
  std::string header, line;
  if (!in || !std::getline(in, header) || !std::getline(in, line)) {
    throw Error(ErrorCode::kConfig, "missing " + path.string() + "; run experiment first");
  }
  auto f = Split(line, ',');
  if (f.size() != 2) throw ParseError(2, "expected first_day,last_day");
  return Period{std::stoi(f[0]), std::stoi(f[1])};
}

fs::path PreDir(const RunConfig& c) { return c.data_dir / "pre"; }
fs::path ExperimentDir(const RunConfig& c) { return c.data_dir / "experiment"; }

void PrintTrim(const TrimResult& trim, std::ostream& out) {
  out << "dropped users: " << trim.dropped_users.size();
  if (!trim.note.empty()) out << " (" << trim.note << ')';
  out << '\n';
}

}  // namespace

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return kExitParse;
    case ErrorCode::kNonFiniteLoss: return kExitDivergence;
    case ErrorCode::kConfig:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kCorruptFile:
    case ErrorCode::kIo: return kExitConfig;
    case ErrorCode::kDegenerateArm:
    case ErrorCode::kRankDeficient:
    case ErrorCode::kEmptyTrainSplit:
    case ErrorCode::kNoScorableRecords: return kExitDegenerate;
    case ErrorCode::kCoverageViolation: return kExitCoverage;
    default: return kExitFailure;
  }
}

fs::path RunConfig::ModelDir() const { return model_dir.empty() ? data_dir / "models" : model_dir; }
fs::path RunConfig::ReportDir() const {
  return report_dir.empty() ? data_dir / "reports" : report_dir;
}

ExperimentPlan RunConfig::EffectivePlan() const {
  ExperimentPlan p = plan;
  p.seed = seed;
  p.train = train;
  return p;
}

void ApplyGrid(const std::string& grid, TrainConfig& train) {
  std::istringstream in(grid);
  std::string item;
  while (in >> item) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "grid entry '" + item + "' lacks '='");
    std::string key = item.substr(0, eq);
    auto values = Split(item.substr(eq + 1), ',');
    if (values.empty()) throw Error(ErrorCode::kConfig, "grid entry '" + item + "' has no values");
    try {
      if (key == "k") {
        train.k_grid.clear();
        for (const auto& v : values) train.k_grid.push_back(std::stoi(v));
      } else if (key == "l2") {
        train.l2_grid.clear();
        for (const auto& v : values) train.l2_grid.push_back(std::stod(v));
      } else {
        throw Error(ErrorCode::kConfig, "unknown grid key '" + key + "' (k, l2)");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kConfig, "bad number in grid entry '" + item + "'");
    }
  }
}

void CmdIngest(const RunConfig& config, const IngestOptions& options, std::ostream& out) {
  LogSchema schema;
  schema.strict = !options.lenient;
  IngestResult result;
  if (options.input_dir) {
    result = IngestDirectory(*options.input_dir, schema);
  } else if (options.log) {
    result = IngestLogFile(*options.log, options.users, options.stories, schema);
  } else {
    throw Error(ErrorCode::kConfig, "ingest needs --log or --input-dir");
  }
  auto trim = ApplyTrim(result.data, options.trim);
  fs::path dir = options.out.empty() ? config.data_dir / "ingested" : options.out;
  EmitDataset(trim.data, dir);

  const auto& d = trim.data;
  std::size_t scored = 0;
  for (const auto& r : d.records()) scored += r.scored();
  out << "records: " << d.records().size() << " (scored " << scored << ")\n"
      << "users: " << d.users().size() << "\nstories: " << d.stories().size() << '\n';
  if (result.period_undefined) {
    out << "period: undefined (empty log)\n";
  } else {
    out << "period: days " << d.period()->first_day << ".." << d.period()->last_day << '\n';
  }
  for (const auto& r : result.rejected) out << "rejected line " << r.line << ": " << r.reason << '\n';
  PrintTrim(trim, out);

  Manifest m(config, "ingest");
  m.Input("raw", result.data);
  m.Note("trim", options.trim);
  m.Note("dropped_users", trim.dropped_users.size());
  m.Note("rejected_lines", result.rejected.size());
  for (const char* f : {"log.csv", "users.csv", "stories.csv"}) m.Output(f);
  m.Write(dir);
}

void CmdSimulate(const RunConfig& config, std::ostream& out) {
  World world = MakeRunWorld(config);
  ExperimentPlan plan = config.EffectivePlan();
  LogDataset pre = SimulatePrePeriod(world, plan);
  EmitDataset(pre, PreDir(config));

  fs::path world_dir = config.data_dir / "world";
  PolicySpec editorial = PrePeriodPolicy(world, plan);
  WriteFile(world_dir / "editorial_script.csv",
            [&](std::ostream& o) { WriteEditorialScript(editorial.script, o); });
  WriteFile(world_dir / "position_effects.txt",
            [&](std::ostream& o) { WritePositionEffects(world.activity.examination, o); });
  WriteFile(world_dir / "segments.csv", [&](std::ostream& o) {
    o << "user_id,segment\n";
    for (UserId u : world.user_ids) {
      o << Raw(u) << ','
        << (world.truth.user_segment[Raw(u)] == Segment::kNiche ? "niche" : "mainstream") << '\n';
    }
  });

  std::size_t scored = 0, section = 0;
  for (const auto& r : pre.records()) {
    scored += r.scored();
    section += r.scored() && r.in(kRecommendedSection);
  }
  out << "world: " << world.user_ids.size() << " users, " << world.story_ids.size()
      << " stories\npre-period: " << plan.pre_days << " days, " << scored
      << " interactions (" << section << " in the recommended section)\n";

  Manifest m(config, "simulate");
  m.Seed("world", StageSeed(config.seed, "world"));
  m.Seed("pre-period", StageSeed(config.seed, "pre-period"));
  m.Input("pre_period", pre);
  for (const char* f : {"editorial_script.csv", "position_effects.txt", "segments.csv"}) m.Output(f);
  m.Write(world_dir);
  Manifest pm(config, "simulate");
  pm.Input("pre_period", pre);
  for (const char* f : {"log.csv", "users.csv", "stories.csv"}) pm.Output(f);
  pm.Write(PreDir(config));
}

void CmdTrain(const RunConfig& config, const TrainOptions& options, std::ostream& out) {
  fs::path input = options.input.empty() ? PreDir(config) : options.input;
  LogDataset data = LoadDataset(input, "run simulate or ingest first");
  TrainConfig tc = config.train;
  if (!options.grid.empty()) ApplyGrid(options.grid, tc);
  tc.seed = StageSeed(config.seed, "train");

  std::vector<ModelKind> kinds;
  auto add = [&](const std::string& t) {
    ModelKind k = ModelKindFromToken(t);
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
  };
  for (const auto& t : options.kinds) add(t);
  for (const auto& t : options.compare) add(t);

  fs::path dir = config.ModelDir();
  Manifest m(config, "train");
  m.Seed("train", tc.seed);
  m.Input("training_data", data);
  std::ostringstream tuning;
  tuning << "model,k,l2,validation_mse,test_mse,best_epoch,selected\n";
  std::map<ModelKind, TuningReport> reports;
  for (ModelKind kind : kinds) {
    auto result = Train(kind, data, tc);
    std::string token = ModelFileToken(kind);
    SaveModelFile(result.model, dir / (token + ".model"));
    m.Output(token + ".model");
    const auto& rep = result.report;
    for (std::size_t i = 0; i < rep.candidates.size(); ++i) {
      const auto& c = rep.candidates[i];
      tuning << ModelKindToken(kind) << ',' << c.k << ',' << Num(c.l2) << ','
             << Num(c.validation_mse) << ',' << Num(c.test_mse) << ',' << c.best_epoch << ','
             << (i == rep.selected ? 1 : 0) << '\n';
    }
    out << ModelKindToken(kind) << ": k=" << rep.best().k << " l2=" << Short(rep.best().l2)
        << " validation MSE " << Short(rep.best().validation_mse) << " test MSE "
        << Short(rep.best().test_mse) << '\n';
    reports[kind] = rep;
  }
  WriteFile(dir / "tuning.csv", [&](std::ostream& o) { o << tuning.str(); });
  m.Output("tuning.csv");

  if (!options.compare.empty()) {
    WriteFile(dir / "comparison.csv", [&](std::ostream& o) {
      o << "model,k,l2,validation_mse,test_mse,n_train,n_validation,n_test\n";
      for (const auto& t : options.compare) {
        const auto& rep = reports.at(ModelKindFromToken(t));
        o << ModelKindToken(rep.kind) << ',' << rep.best().k << ',' << Num(rep.best().l2) << ','
          << Num(rep.best().validation_mse) << ',' << Num(rep.best().test_mse) << ','
          << rep.n_train << ',' << rep.n_validation << ',' << rep.n_test << '\n';
      }
    });
    m.Output("comparison.csv");
  }
  if (!options.thresholds.empty()) {
    auto grid = ThresholdGrid(data, options.thresholds, options.thresholds, tc);
    WriteFile(dir / "threshold_grid.csv", [&](std::ostream& o) {
      o << "min_user_interactions,min_story_interactions,n_test,test_mse\n";
      for (std::size_t u = 0; u < grid.user_thresholds.size(); ++u) {
        for (std::size_t s = 0; s < grid.story_thresholds.size(); ++s) {
          o << grid.user_thresholds[u] << ',' << grid.story_thresholds[s] << ','
            << grid.cell_sizes[u][s] << ',' << (grid.mse[u][s] ? Num(*grid.mse[u][s]) : "")
            << '\n';
        }
      }
    });
    m.Output("threshold_grid.csv");
  }
  m.Write(dir);
}

void CmdExperiment(const RunConfig& config, const ExperimentOptions& options,
                   std::ostream& out) {
  auto tokens = Split(options.arms, ',');
  if (tokens.size() != 2) throw Error(ErrorCode::kConfig, "--arms takes treatment,control");
  PolicyKind treatment_kind = PolicyFromToken(tokens[0]);
  PolicyKind control_kind = options.null_experiment ? treatment_kind : PolicyFromToken(tokens[1]);

  World world = MakeRunWorld(config);
  ExperimentPlan plan = config.EffectivePlan();
  LogDataset pre = LoadDataset(PreDir(config), "run simulate first");
  const int first_week = WeekOfDay(plan.pre_days);
  const int last_week = WeekOfDay(plan.pre_days + plan.duration_days - 1);
  PolicySpec treatment = LoadPolicy(config, &world, treatment_kind, first_week, last_week);
  PolicySpec control = LoadPolicy(config, &world, control_kind, first_week, last_week);
  if (options.null_experiment) plan.control_daily_updates = plan.treatment_daily_updates;
  auto result = RunExperimentWith(world, plan, pre, std::move(treatment), std::move(control));

  fs::path dir = ExperimentDir(config);
  EmitDataset(result.experiment, dir);
  WriteFile(dir / "arms.csv", [&](std::ostream& o) { WriteArms(result.arms, o); });
  WriteFile(dir / "window.csv", [&](std::ostream& o) {
    o << "first_day,last_day\n" << result.experiment_first_day << ',' << result.experiment_last_day
      << '\n';
  });
  std::size_t treated = 0;
  for (const auto& [_, t] : result.arms) treated += t;
  out << "eligible users: " << result.arms.size() << " (treatment " << treated << ", control "
      << result.arms.size() - treated << ")\nexperiment: days " << result.experiment_first_day
      << ".." << result.experiment_last_day << ", " << result.experiment.records().size()
      << " records\n";

  Manifest m(config, "experiment");
  m.Seed("experiment", StageSeed(config.seed, "experiment"));
  m.Input("pre_period", pre);
  m.Input("experiment", result.experiment);
  m.Note("arms", std::string(PolicyKindToken(treatment_kind)) + " vs " +
                     std::string(PolicyKindToken(control_kind)));
  m.Note("treatment_prob", plan.treatment_prob);
  for (const char* f : {"log.csv", "users.csv", "stories.csv", "arms.csv", "window.csv"}) {
    m.Output(f);
  }
  m.Write(dir);
}

void CmdAnalyze(const RunConfig& config, const AnalyzeOptions& options, std::ostream& out) {
  LogDataset pre = LoadDataset(PreDir(config), "run simulate first");
  LogDataset raw = LoadDataset(ExperimentDir(config), "run experiment first");
  ArmTable arms = ReadArms(ExperimentDir(config) / "arms.csv");
  Period window = ReadWindow(ExperimentDir(config) / "window.csv");
  auto trim = ApplyTrim(raw, options.trim);
  const LogDataset& exp = trim.data;
  for (UserId u : trim.dropped_users) arms.erase(u);

  auto covariates = ComputeCovariates(pre, window.first_day);
  auto outcomes = BuildOutcomes(exp, arms, kRecommendedSection, window);
  auto sample = SelectSample(outcomes, arms);
  auto cov = BuildCovariateMatrix(sample.users, exp.users(), covariates);

  fs::path dir = config.ReportDir() / "analysis";
  Manifest m(config, "analyze");
  m.Input("pre_period", pre);
  m.Input("experiment", raw);
  m.Note("trim", options.trim);
  m.Note("dropped_users", trim.dropped_users.size());
  m.Note("sample_size", sample.size());

  // Average treatment effects for the six outcomes and three estimators.
  std::vector<EstimateReport> reports;
  std::map<OutcomeName, std::array<EstimateReport, 3>> wide;
  std::vector<double> engagement_scores;
  AipwConfig aipw;
  aipw.propensity = config.plan.treatment_prob;
  aipw.seed = StageSeed(config.seed, "aipw");
  for (OutcomeName name : kAllOutcomes) {
    auto y = sample.Outcome(name);
    std::array<EstimateReport, 3> row{DiffInMeans(y, sample.arm),
                                      RegressionAdjusted(y, sample.arm, cov.x, cov.names),
                                      EstimateReport{}};
    auto a = Aipw(y, sample.arm, cov.x, aipw);
    row[2] = a.report;
    if (name == OutcomeName::kEngagementSection) engagement_scores = a.scores;
    for (auto& r : row) {
      r.outcome = std::string(OutcomeNameToken(name));
      reports.push_back(r);
    }
    wide[name] = row;
  }
  WriteFile(dir / "ate.csv", [&](std::ostream& o) { WriteEstimates(reports, o); });
  WriteFile(dir / "ate_table.txt", [&](std::ostream& o) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s %-34s %-34s %-34s\n", "outcome",
                  "difference in means", "regression adjusted", "AIPW");
    o << buf;
    for (const auto& [name, row] : wide) {
      o << std::string(OutcomeNameToken(name)) << std::string(21 - OutcomeNameToken(name).size(), ' ');
      for (const auto& r : row) {
        std::snprintf(buf, sizeof buf, "%8.4f (%.4f) p=%.3f %6.1f%%   ", r.estimate, r.std_error,
                      r.p_value, r.pct_of_baseline);
        o << buf;
      }
      o << '\n';
    }
  });
  m.Output("ate.csv");
  m.Output("ate_table.txt");

  // One-sided rank-sum test on section engagement.
  {
    auto y = sample.Outcome(OutcomeName::kEngagementSection);
    std::vector<double> t, c;
    for (std::size_t i = 0; i < y.size(); ++i) (sample.arm[i] ? t : c).push_back(y[i]);
    auto w = WilcoxonOneSided(t, c);
    WriteFile(dir / "wilcoxon.csv", [&](std::ostream& o) {
      o << "outcome,statistic,p_value,exact,fully_tied\n"
        << OutcomeNameToken(OutcomeName::kEngagementSection) << ',' << Num(w.statistic) << ','
        << Num(w.p_value) << ',' << w.exact << ',' << w.fully_tied << '\n';
    });
    m.Output("wilcoxon.csv");
  }

  auto user_cov = [&](UserId u) {
    auto it = covariates.find(u);
    return it == covariates.end() ? UserCovariates{} : it->second;
  };
  if (!options.subgroups.empty()) {
    std::vector<SubgroupSplit> splits;
    for (const auto& name : options.subgroups) {
      SubgroupSplit s;
      s.name = name;
      for (UserId u : sample.users) {
        auto c = user_cov(u);
        bool member;
        if (name == "niche") {
          member = c.is_niche;
          s.label_in = "niche";
          s.label_out = "non-niche";
        } else if (name == "heavy") {
          member = c.is_heavy_engagement;
          s.label_in = "high engagement";
          s.label_out = "low engagement";
        } else if (name == "completion") {
          member = c.is_heavy_completion;
          s.label_in = "high completion";
          s.label_out = "low completion";
        } else if (name == "crossed") {
          member = c.is_niche && c.is_heavy_engagement;
          s.label_in = "niche and high engagement";
          s.label_out = "other";
        } else if (name == "new") {
          member = !c.used_section_before;
          s.label_in = "new section users";
          s.label_out = "returning section users";
        } else {
          throw Error(ErrorCode::kConfig, "unknown subgroup '" + name +
                                              "' (niche, heavy, completion, crossed, new)");
        }
        s.member.push_back(member);
      }
      splits.push_back(std::move(s));
    }
    auto table = SubgroupAtes(sample.Outcome(OutcomeName::kEngagementSection), sample.arm, splits);
    WriteFile(dir / "subgroups.csv", [&](std::ostream& o) {
      o << "split,group,estimate,se,p,pct,n_treated,n_control\n";
      for (const auto& r : table.rows) {
        o << r.split << ',' << r.group << ',';
        if (r.report) {
          o << Num(r.report->estimate) << ',' << Num(r.report->std_error) << ','
            << Num(r.report->p_value) << ',' << Num(r.report->pct_of_baseline) << ','
            << r.report->n_treated << ',' << r.report->n_control << '\n';
        } else {
          o << ",,,,0,0\n";
        }
      }
      for (const auto& c : table.contrasts) {
        o << c.split << ",difference," << Num(c.estimate) << ',' << Num(c.std_error) << ','
          << Num(c.p_value) << ",,,\n";
      }
    });
    m.Output("subgroups.csv");
  }

  {
    const auto n = static_cast<Eigen::Index>(sample.size());
    std::vector<std::string> names{"past_engagement", "past_completed", "heavy_engagement",
                                   "heavy_completion", "niche", "niche_x_heavy"};
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto c = user_cov(sample.users[i]);
      x.row(i) << c.past_total_engagement, c.past_stories_completed, c.is_heavy_engagement,
          c.is_heavy_completion, c.is_niche, c.is_niche && c.is_heavy_engagement;
    }
    auto fit = AipwScoreRegression(engagement_scores, x, names);
    WriteFile(dir / "aipw_regression.csv", [&](std::ostream& o) {
      o << "term,coef,se,p\n";
      for (std::size_t k = 0; k < fit.names.size(); ++k) {
        o << fit.names[k] << ',' << Num(fit.coef(k)) << ',' << Num(fit.std_error(k)) << ','
          << Num(fit.p_value(k)) << '\n';
      }
      for (const auto& d : fit.dropped) o << d << ",,,\n";
    });
    m.Output("aipw_regression.csv");
  }

  if (options.diagnostics) {
    WriteFile(dir / "rank_means.csv", [&](std::ostream& o) {
      o << "arm,rank,n,mean,se,ci_lo,ci_hi\n";
      for (const auto& r : MeanEngagementByRank(exp, arms, kRecommendedSection)) {
        o << (r.arm ? "treatment" : "control") << ',' << r.rank << ',' << r.n << ','
          << Num(r.mean) << ',' << Num(r.std_error) << ',' << Num(r.ci_low) << ','
          << Num(r.ci_high) << '\n';
      }
    });
    auto hist = SessionLengthDistribution(exp, arms, kRecommendedSection);
    WriteFile(dir / "session_lengths.csv", [&](std::ostream& o) {
      o << "arm,length,frequency\n";
      for (const auto& h : hist) {
        for (const auto& [len, f] : h.frequency) {
          o << (h.arm ? "treatment" : "control") << ',' << len << ',' << Num(f) << '\n';
        }
      }
    });
    WriteFile(dir / "session_summary.csv", [&](std::ostream& o) {
      o << "arm,sessions,mean_length\n";
      for (const auto& h : hist) {
        o << (h.arm ? "treatment" : "control") << ',' << h.sessions << ',' << Num(h.mean_length)
          << '\n';
      }
      o << "dominance," << Num(DominanceStatistic(hist[0], hist[1])) << ",\n";
    });
    std::vector<UserId> arm_users;
    for (const auto& [u, _] : arms) arm_users.push_back(u);
    auto arm_cov = BuildCovariateMatrix(arm_users, exp.users(), covariates);
    WriteFile(dir / "buckets.csv", [&](std::ostream& o) {
      o << "bucket,stories,treatment_impressions,n_treatment,n_control,treatment_mean,"
           "control_mean,difference,se,p,estimable\n";
      for (const auto& b : BucketEngagementAnalysis(exp, arms, options.buckets, arm_cov,
                                                    kRecommendedSection)) {
        o << b.bucket << ',' << b.stories << ',' << b.treatment_impressions << ','
          << b.n_treatment << ',' << b.n_control << ',' << Num(b.treatment_mean) << ','
          << Num(b.control_mean) << ',' << Num(b.difference) << ',' << Num(b.std_error) << ','
          << Num(b.p_value) << ',' << b.estimable << '\n';
      }
    });
    std::map<UserId, bool> niche;
    for (const auto& [u, _] : arms) niche[u] = user_cov(u).is_niche;
    WriteFile(dir / "exposure.csv", [&](std::ostream& o) {
      o << "arm,niche_rank,other_rank,niche_percentile,other_percentile,difference,se,p,"
           "niche_users,other_users,degenerate\n";
      for (const auto& e : StoryPopularityExposure(exp, arms, niche, kRecommendedSection)) {
        o << (e.arm ? "treatment" : "control") << ',' << Num(e.niche_rank) << ','
          << Num(e.other_rank) << ',' << Num(e.niche_percentile) << ','
          << Num(e.other_percentile) << ',' << Num(e.difference) << ',' << Num(e.std_error)
          << ',' << Num(e.p_value) << ',' << e.niche_users << ',' << e.other_users << ','
          << e.degenerate << '\n';
      }
    });
    for (const char* f : {"rank_means.csv", "session_lengths.csv", "session_summary.csv",
                          "buckets.csv", "exposure.csv"}) {
      m.Output(f);
    }
    if (fs::exists(config.ModelDir() / "mf.model")) {
      auto model = LoadModel(config, "mf");
      WriteFile(dir / "calibration.csv", [&](std::ostream& o) {
        o << "group,n,slope,se,p,r_squared\n";
        for (const auto& c :
             CalibrationByArmAndFrequency(*model, exp, arms, pre, kRecommendedSection)) {
          o << c.group << ',' << c.n << ',' << Num(c.slope) << ',' << Num(c.std_error) << ','
            << Num(c.p_value) << ',' << Num(c.r_squared) << '\n';
        }
      });
      m.Output("calibration.csv");
    }
  }

  if (options.balance) {
    WriteFile(dir / "balance.csv", [&](std::ostream& o) {
      o << "covariate,mean_treatment,mean_control,sd_treatment,sd_control,p\n";
      for (const auto& b : BalanceTable(cov.x, cov.names, sample.arm)) {
        o << b.covariate << ',' << Num(b.mean_treatment) << ',' << Num(b.mean_control) << ','
          << Num(b.sd_treatment) << ',' << Num(b.sd_control) << ',' << Num(b.p_value) << '\n';
      }
    });
    auto y = sample.Outcome(OutcomeName::kEngagementAll);
    double sd = std::sqrt(SampleVariance(y));
    std::size_t nt = std::count(sample.arm.begin(), sample.arm.end(), 1);
    std::size_t nc = sample.size() - nt;
    WriteFile(dir / "mde.csv", [&](std::ostream& o) {
      o << "outcome,sd,n_treated,n_control,mde,mde_sd_units\n";
      double mde = MinimumDetectableEffect(sd, nt, nc);
      o << OutcomeNameToken(OutcomeName::kEngagementAll) << ',' << Num(sd) << ',' << nt << ','
        << nc << ',' << Num(mde) << ',' << Num(mde / sd) << '\n';
    });
    m.Output("balance.csv");
    m.Output("mde.csv");
  }
  m.Write(dir);

  const auto& headline = wide.at(OutcomeName::kEngagementSection);
  out << "sample: " << sample.size() << " users\nsection engagement ATE: "
      << Short(headline[0].estimate) << " (se " << Short(headline[0].std_error) << ", "
      << Short(headline[0].pct_of_baseline) << "% of control)\n";
  PrintTrim(trim, out);
}

void CmdEvaluatePolicy(const RunConfig& config, const EvaluateOptions& options,
                       std::ostream& out) {
  LogDataset pre = LoadDataset(PreDir(config), "run simulate first");
  LogDataset eval;
  std::optional<ArmTable> arms;
  if (options.eval_logs) {
    eval = LoadDataset(*options.eval_logs, "no evaluation logs");
  } else {
    LogDataset exp = LoadDataset(ExperimentDir(config), "run experiment first");
    arms = ReadArms(ExperimentDir(config) / "arms.csv");
    eval = exp.FilterRecords([&](const InteractionRecord& r) {
      auto it = arms->find(r.user);
      return it != arms->end() && !it->second;
    });
  }
  if (!eval.period()) throw Error(ErrorCode::kNoScorableRecords, "evaluation logs are empty");
  const int first_day = eval.period()->first_day;
  auto covariates = ComputeCovariates(pre, first_day);
  const double floor = config.dr.propensity_floor;

  auto effects = EstimatePositionEffects(pre, config.world.slate_size,
                                         config.dr.monotone_position_effects, floor);
  PropensityModel logging = EditorialPropensity(eval, floor);
  std::vector<StoryId> candidates;
  for (const auto& [id, _] : eval.stories()) candidates.push_back(id);

  std::vector<std::pair<std::string, PropensityModel>> targets;
  for (const auto& token : options.policies) {
    PolicyKind kind = PolicyFromToken(token);
    if (kind == PolicyKind::kEditorial) {
      targets.emplace_back(token, logging);
    } else {
      targets.emplace_back(token, PropensityModel::TopK(LoadPolicy(config, nullptr, kind, 0, 0),
                                                        effects.probability, eval.users(),
                                                        candidates, floor));
    }
  }

  TrainConfig tc = config.train;
  tc.seed = StageSeed(config.seed, "representations");
  auto representations = Train(ModelKind::kMatrixFactorization, eval, tc).model;
  RegressorConfig rc;
  rc.folds = config.dr.folds;
  rc.ridge_lambda = config.dr.ridge_lambda;
  rc.seed = StageSeed(config.seed, "regressor");
  auto regressor = OutcomeRegressor::Fit(eval, representations, covariates, rc);
  OutcomePredictor y_hat = [&](UserId u, StoryId s) { return regressor.Predict(u, s); };

  DrConfig dc;
  dc.bootstrap_replicates = config.dr.bootstrap;
  dc.seed = StageSeed(config.seed, "bootstrap");
  dc.max_clipped_fraction = config.dr.max_clipped_fraction;
  dc.threads = config.threads;

  fs::path dir = config.ReportDir() / "offpolicy";
  Manifest m(config, "evaluate-policy");
  m.Input("pre_period", pre);
  m.Input("evaluation_logs", eval);
  m.Seed("representations", tc.seed);
  m.Seed("regressor", rc.seed);
  m.Seed("bootstrap", dc.seed);
  m.Note("outcome_regressor", kRegressorNote);

  std::set<UserId> eval_users;
  std::size_t section_logs = 0;
  for (const auto& r : eval.records()) {
    if (r.in(kRecommendedSection) && r.scored()) {
      eval_users.insert(r.user);
      ++section_logs;
    }
  }
  const double per_user = arms ? static_cast<double>(section_logs) /
                                     std::count_if(arms->begin(), arms->end(),
                                                   [](const auto& a) { return !a.second; })
                               : static_cast<double>(section_logs) / eval_users.size();

  std::ostringstream values;
  values << "policy,value,se,n_logs,n_users,min_weight,max_weight,ess,clipped_frac,"
            "total_per_user,total_se\n";
  std::map<std::string, DrEstimate> estimates;
  for (const auto& [name, target] : targets) {
    auto logs = PrepareDrLogs(eval, target, logging, y_hat);
    auto e = DrValue(logs, dc);
    auto total = PerUserTotal(e, per_user);
    estimates[name] = e;
    const auto& d = e.diagnostics;
    values << name << ',' << Num(e.value) << ',' << Num(e.std_error) << ',' << e.n_logs << ','
           << e.n_users << ',' << Num(d.min_weight) << ',' << Num(d.max_weight) << ','
           << Num(d.effective_sample_size) << ',' << Num(d.clipped_fraction) << ','
           << Num(total.estimate) << ',' << Num(total.std_error) << '\n';
    out << name << ": " << Short(e.value) << " per interaction (se " << Short(e.std_error)
        << ", ESS " << Short(d.effective_sample_size) << ")\n";
  }
  WriteFile(dir / "dr_values.csv", [&](std::ostream& o) { o << values.str(); });

  std::map<UserId, double> past;
  for (const auto& [u, c] : covariates) past[u] = c.past_total_engagement;
  std::vector<UserId> users(eval_users.begin(), eval_users.end());
  auto heavy = HeavyUsers(past, users);
  std::vector<NamedPolicy> named;
  for (const auto& [name, target] : targets) named.push_back({name, &target});
  auto rows = ComparePolicies(eval, named, logging, y_hat, heavy, dc);
  WriteFile(dir / "policy_values.csv", [&](std::ostream& o) { WriteComparison(rows, o); });

  WriteFile(dir / "position_effects.txt",
            [&](std::ostream& o) { WritePositionEffects(effects.probability, o); });
  WriteFile(dir / "position_effects.csv", [&](std::ostream& o) {
    o << "rank,interactions,raw,probability,never_observed\n";
    for (std::size_t r = 0; r < effects.probability.size(); ++r) {
      bool never = std::find(effects.never_observed.begin(), effects.never_observed.end(),
                             static_cast<int>(r + 1)) != effects.never_observed.end();
      o << r + 1 << ',' << effects.interactions[r] << ',' << Num(effects.raw[r]) << ','
        << Num(effects.probability[r]) << ',' << never << '\n';
    }
  });
  WriteFile(dir / "propensities_editorial.csv",
            [&](std::ostream& o) { WriteEditorialPropensities(logging, o); });
  for (const auto& [name, target] : targets) {
    if (target.kind() != PropensityKind::kTopK) continue;
    WriteFile(dir / ("propensities_topk_" + name + ".csv"), [&](std::ostream& o) {
      WriteTopKPropensities(target, users, WeekOfDay(first_day), o);
    });
    m.Output("propensities_topk_" + name + ".csv");
  }
  for (const char* f : {"dr_values.csv", "policy_values.csv", "position_effects.txt",
                        "position_effects.csv", "propensities_editorial.csv"}) {
    m.Output(f);
  }

  const bool can_check = arms && estimates.count("pers") && estimates.count("edit");
  if (options.check_against_rct && can_check) {
    LogDataset exp = LoadDataset(ExperimentDir(config), "run experiment first");
    std::vector<double> y;
    std::vector<std::array<double, 2>> rows_x;
    OlsOptions ols;
    ols.variance = VarianceKind::kClusterRobust;
    for (const auto& r : exp.records()) {
      auto it = arms->find(r.user);
      if (it == arms->end() || !r.in(kRecommendedSection) || !r.scored()) continue;
      y.push_back(*r.value());
      rows_x.push_back({it->second ? 1.0 : 0.0, past.count(r.user) ? past.at(r.user) : 0.0});
      ols.clusters.push_back(Raw(r.user));
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(y.size()), 2);
    for (std::size_t i = 0; i < y.size(); ++i) {
      x(static_cast<Eigen::Index>(i), 0) = rows_x[i][0];
      x(static_cast<Eigen::Index>(i), 1) = rows_x[i][1];
    }
    Eigen::VectorXd yy = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    auto fit = FitOls(yy, x, {"treatment", "past_utilization"}, ols);
    auto k = fit.Index("treatment");
    ScaledEstimate on{fit.coef(k), fit.std_error(k), ValueScale::kPerInteraction};
    const ComparisonRow* dr_row = nullptr;
    double sign = 1.0;
    for (const auto& r : rows) {
      if (r.group != "all") continue;
      if (r.policy_a == "pers" && r.policy_b == "edit") dr_row = &r;
      if (r.policy_a == "edit" && r.policy_b == "pers") {
        dr_row = &r;
        sign = -1.0;
      }
    }
    ScaledEstimate off{sign * dr_row->estimate, dr_row->std_error, ValueScale::kPerInteraction};
    auto test = OnPolicyVsOffPolicyCheck(on, off);
    WriteFile(dir / "rct_check.csv", [&](std::ostream& o) {
      o << "on_policy_estimate,on_policy_se,off_policy_estimate,off_policy_se,difference,se,z,p\n"
        << Num(on.estimate) << ',' << Num(on.std_error) << ',' << Num(off.estimate) << ','
        << Num(off.std_error) << ',' << Num(test.difference) << ',' << Num(test.std_error) << ','
        << Num(test.z) << ',' << Num(test.p_value) << '\n';
    });
    m.Output("rct_check.csv");
    out << "RCT vs off-policy (per interaction): " << Short(on.estimate) << " vs "
        << Short(off.estimate) << ", p=" << Short(test.p_value) << '\n';
  }
  WriteFile(dir / "dr_report.txt", [&](std::ostream& o) {
    o << "# " << kRegressorNote << "\n# values are per section interaction; totals multiply by "
      << Short(per_user) << " interactions per user in the evaluation period\n";
    for (const auto& [name, e] : estimates) {
      o << name << ' ' << Num(e.value) << ' ' << Num(e.std_error) << '\n';
    }
  });
  m.Output("dr_report.txt");
  m.Write(dir);
}

void CmdReport(const RunConfig& config, std::ostream& out) {
  fs::path root = config.ReportDir();
  std::ostringstream text;
  std::vector<fs::path> files;
  for (const char* sub : {"analysis", "offpolicy"}) {
    fs::path d = root / sub;
    if (!fs::exists(d)) continue;
    for (const auto& e : fs::directory_iterator(d)) {
      auto ext = e.path().extension();
      if (ext == ".csv" || ext == ".txt") files.push_back(e.path());
    }
  }
  fs::path model_dir = config.ModelDir();
  for (const char* f : {"comparison.csv", "threshold_grid.csv"}) {
    if (fs::exists(model_dir / f)) files.push_back(model_dir / f);
  }
  if (files.empty()) throw Error(ErrorCode::kConfig, "nothing to report in " + root.string());
  std::sort(files.begin(), files.end());
  text << "# " << kRegressorNote << "\n\n";
  for (const auto& path : files) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> cells;
    std::string line;
    while (std::getline(in, line)) cells.push_back(Split(line, ','));
    text << "== " << path.parent_path().filename().string() << '/' << path.filename().string()
         << '\n';
    if (path.extension() == ".txt") {
      for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) text << (i ? "," : "") << row[i];
        text << '\n';
      }
      text << '\n';
      continue;
    }
    std::vector<std::size_t> width;
    for (auto& row : cells) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        char* end = nullptr;
        double v = std::strtod(row[i].c_str(), &end);
        if (!row[i].empty() && end && *end == '\0' && row[i].find('.') != std::string::npos) {
          row[i] = Short(v);
        }
        if (width.size() <= i) width.push_back(0);
        width[i] = std::max(width[i], row[i].size());
      }
    }
    for (const auto& row : cells) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        text << row[i] << std::string(width[i] - row[i].size() + 2, ' ');
      }
      text << '\n';
    }
    text << '\n';
  }
  WriteFile(root / "report.txt", [&](std::ostream& o) { o << text.str(); });
  out << text.str();
}

}  // namespace storylab::cli
