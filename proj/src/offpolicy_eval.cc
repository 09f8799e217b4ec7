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
#include "storylab/offpolicy_eval.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <thread>

#include "text_io.h"

namespace storylab {

namespace {

void CheckFloor(double floor) {
  if (!(floor > 0.0 && floor < 1.0)) {
    throw Error(ErrorCode::kConfig, "propensity floor must lie in (0, 1)");
  }
}

// Pool-adjacent-violators for a non-increasing fit with unit weights.
std::vector<double> DecreasingIsotonic(const std::vector<double>& v) {
  std::vector<double> level;
  std::vector<std::size_t> width;
  for (double x : v) {
    level.push_back(x);
    width.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] < level.back()) {
      std::size_t w = width.back() + width[width.size() - 2];
      double merged = (level.back() * width.back() +
                       level[level.size() - 2] * width[width.size() - 2]) / w;
      level.pop_back();
      width.pop_back();
      level.back() = merged;
      width.back() = w;
    }
  }
  std::vector<double> out;
  for (std::size_t b = 0; b < level.size(); ++b) out.insert(out.end(), width[b], level[b]);
  return out;
}

std::vector<double> Normalized(std::vector<double> v) {
  double total = std::accumulate(v.begin(), v.end(), 0.0);
  if (total > 0) {
    for (double& x : v) x /= total;
  }
  return v;
}

void CheckBootstrap(const DrConfig& config) {
  if (config.bootstrap_replicates < 100) {
    throw Error(ErrorCode::kConfig, "the bootstrap needs at least 100 replicates");
  }
}

double MeanTerm(std::span<const DrLog> logs, std::span<const std::size_t> idx) {
  double s = 0.0;
  for (std::size_t i : idx) s += logs[i].Term();
  return idx.empty() ? 0.0 : s / idx.size();
}

}  // namespace

PositionEffects EstimatePositionEffects(const LogDataset& logs, int n_ranks, bool monotone,
                                        double floor, std::string_view section) {
  CheckFloor(floor);
  if (n_ranks < 1) throw Error(ErrorCode::kConfig, "need at least one rank");
  PositionEffects out;
  out.interactions.assign(n_ranks, 0);
  for (const auto& r : logs.records()) {
    if (!r.in(section) || !r.scored() || !r.slate_rank) continue;
    int rank = *r.slate_rank;
    if (rank >= 1 && rank <= n_ranks) ++out.interactions[rank - 1];
  }
  std::vector<double> share(out.interactions.begin(), out.interactions.end());
  out.raw = Normalized(share);
  if (std::accumulate(out.raw.begin(), out.raw.end(), 0.0) == 0.0) {
    throw Error(ErrorCode::kNoScorableRecords, "no ranked section interactions in the logs");
  }
  std::vector<double> p = out.raw;
  if (monotone) {
    p = DecreasingIsotonic(p);
    out.smoothed = p != out.raw;
  }
  for (int r = 0; r < n_ranks; ++r) {
    if (out.interactions[r] == 0) out.never_observed.push_back(r + 1);
    p[r] = std::max(p[r], floor);
  }
  out.probability = Normalized(p);
  return out;
}

PropensityModel PropensityModel::Editorial(std::map<int, std::map<StoryId, double>> frequency,
                                           std::map<UserId, UserProfile> users,
                                           std::vector<StoryId> catalog, double floor) {
  CheckFloor(floor);
  PropensityModel m;
  m.kind_ = PropensityKind::kEditorial;
  m.floor_ = floor;
  m.frequency_ = std::move(frequency);
  m.users_ = std::move(users);
  m.catalog_ = std::move(catalog);
  std::sort(m.catalog_.begin(), m.catalog_.end());
  for (const auto& [grade, table] : m.frequency_) {
    double mass = 0.0;
    for (const auto& [_, p] : table) {
      if (p < 0.0) throw Error(ErrorCode::kPropensityOutOfRange, "negative exposure frequency");
      mass += p;
    }
    if (mass > 1.0 + 1e-9) {
      throw Error(ErrorCode::kPropensityOutOfRange,
                  "exposure frequencies of grade " + std::to_string(grade) + " exceed 1");
    }
  }
  return m;
}

PropensityModel PropensityModel::TopK(PolicySpec policy, std::vector<double> position_effects,
                                      std::map<UserId, UserProfile> users,
                                      std::vector<StoryId> candidates, double floor) {
  CheckFloor(floor);
  PropensityModel m;
  m.kind_ = PropensityKind::kTopK;
  m.floor_ = floor;
  m.policy_ = std::move(policy);
  m.effects_ = std::move(position_effects);
  m.users_ = std::move(users);
  m.catalog_ = std::move(candidates);
  std::sort(m.catalog_.begin(), m.catalog_.end());
  return m;
}

const PropensityModel::Support& PropensityModel::SupportFor(UserId user, int week) const {
  const int key_week = kind_ == PropensityKind::kEditorial ? 0 : week;
  auto key = std::make_pair(user, key_week);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  auto uit = users_.find(user);
  if (uit == users_.end()) {
    throw Error(ErrorCode::kInvariant, "propensity model has no profile for user " +
                                           std::to_string(Raw(user)));
  }
  Support support;
  if (kind_ == PropensityKind::kEditorial) {
    auto git = frequency_.find(uit->second.grade);
    if (git == frequency_.end()) {
      for (StoryId s : catalog_) support.emplace_back(s, 1.0 / catalog_.size());
    } else {
      for (const auto& [s, p] : git->second) {
        if (p > 0.0) support.emplace_back(s, p);
      }
    }
  } else {
    auto slate = WeeklyRefresh(*policy_, uit->second, week, catalog_).slate;
    for (const auto& [s, p] : ExposureDistribution(slate, effects_)) {
      if (p > 0.0) support.emplace_back(s, p);
    }
  }
  return cache_.emplace(key, std::move(support)).first->second;
}

double PropensityModel::Probability(UserId user, StoryId story, int week) const {
  const auto& support = SupportFor(user, week);
  auto it = std::lower_bound(support.begin(), support.end(), story,
                             [](const auto& e, StoryId s) { return e.first < s; });
  return it != support.end() && it->first == story ? it->second : 0.0;
}

double PropensityModel::Floored(UserId user, StoryId story, int week) const {
  return std::max(Probability(user, story, week), floor_);
}

bool PropensityModel::UsesUniformFallback(UserId user) const {
  if (kind_ != PropensityKind::kEditorial) return false;
  auto it = users_.find(user);
  return it == users_.end() || !frequency_.count(it->second.grade);
}

PropensityModel EditorialPropensity(const LogDataset& logs, double floor,
                                    std::string_view section) {
  std::map<int, std::map<StoryId, double>> counts;
  std::map<int, double> totals;
  for (const auto& r : logs.records()) {
    if (!r.in(section) || !r.scored()) continue;
    int grade = logs.FindUser(r.user)->grade;
    counts[grade][r.story] += 1.0;
    totals[grade] += 1.0;
  }
  for (auto& [grade, table] : counts) {
    for (auto& [_, c] : table) c /= totals[grade];
  }
  std::vector<StoryId> catalog;
  for (const auto& [id, _] : logs.stories()) catalog.push_back(id);
  return PropensityModel::Editorial(std::move(counts), logs.users(), std::move(catalog), floor);
}

void WriteEditorialPropensities(const PropensityModel& model, std::ostream& out) {
  out << "grade,story_id,probability\n";
  for (const auto& [grade, table] : model.editorial_frequency()) {
    for (const auto& [story, p] : table) {
      if (p > 0.0) out << grade << ',' << Raw(story) << ',' << text_io::FormatReal(p) << '\n';
    }
  }
}

void WriteTopKPropensities(const PropensityModel& model, std::span<const UserId> users,
                           int week, std::ostream& out) {
  out << "user_id,story_id,probability\n";
  for (UserId u : users) {
    for (const auto& [story, p] : model.SupportFor(u, week)) {
      out << Raw(u) << ',' << Raw(story) << ',' << text_io::FormatReal(p) << '\n';
    }
  }
}

OutcomeRegressor OutcomeRegressor::Fit(const LogDataset& logs,
                                       const OutcomeModel& representations,
                                       const std::map<UserId, UserCovariates>& covariates,
                                       const RegressorConfig& config) {
  OutcomeRegressor reg;
  reg.representations_ = representations;
  reg.users_ = logs.users();
  reg.stories_ = logs.stories();
  for (const auto& [u, c] : covariates) reg.past_[u] = c.past_total_engagement;
  std::set<int> grades;
  for (const auto& [_, p] : reg.users_) grades.insert(p.grade);
  reg.grades_.assign(grades.begin(), grades.end());
  std::set<std::string> tags;
  for (const auto& [_, s] : reg.stories_) tags.insert(s.collection_tag);
  reg.tags_.assign(tags.begin(), tags.end());

  const int k = representations.k();
  for (int d = 0; d < k; ++d) reg.names_.push_back("user_latent_" + std::to_string(d));
  for (int d = 0; d < k; ++d) reg.names_.push_back("story_latent_" + std::to_string(d));
  for (int d = 0; d < k; ++d) reg.names_.push_back("latent_product_" + std::to_string(d));
  reg.names_.insert(reg.names_.end(), {"user_effect", "story_effect", "model_prediction"});
  for (std::size_t g = 1; g < reg.grades_.size(); ++g) {
    reg.names_.push_back("grade_" + std::to_string(reg.grades_[g]));
  }
  reg.names_.insert(reg.names_.end(), {"channel_B2B", "channel_PAID"});
  for (std::size_t t = 1; t < reg.tags_.size(); ++t) reg.names_.push_back("tag_" + reg.tags_[t]);
  reg.names_.push_back("past_utilization");

  std::vector<const InteractionRecord*> rows;
  std::set<UserId> seen;
  for (const auto& r : logs.records()) {
    if (!r.in(config.section) || !r.scored()) continue;
    rows.push_back(&r);
    seen.insert(r.user);
  }
  if (rows.empty()) throw Error(ErrorCode::kNoScorableRecords, "no section interactions to fit");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(reg.names_.size()));
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = reg.Features(rows[i]->user, rows[i]->story);
    y(i) = *rows[i]->value();
  }
  reg.full_model_ = RidgeModel::Fit(x, y, config.ridge_lambda);

  std::vector<UserId> users(seen.begin(), seen.end());
  if (users.size() >= 2 && config.folds >= 2) {
    const int folds = std::min<int>(config.folds, static_cast<int>(users.size()));
    auto label = FoldAssignment(users.size(), folds, config.seed);
    for (std::size_t i = 0; i < users.size(); ++i) reg.fold_[users[i]] = label[i];
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (reg.fold_.at(rows[i]->user) != f) keep.push_back(i);
      }
      Eigen::MatrixXd xf(static_cast<Eigen::Index>(keep.size()), x.cols());
      Eigen::VectorXd yf(static_cast<Eigen::Index>(keep.size()));
      for (std::size_t j = 0; j < keep.size(); ++j) {
        xf.row(static_cast<Eigen::Index>(j)) = x.row(keep[j]);
        yf(static_cast<Eigen::Index>(j)) = y(keep[j]);
      }
      reg.fold_models_.push_back(RidgeModel::Fit(xf, yf, config.ridge_lambda));
    }
  }
  return reg;
}

Eigen::RowVectorXd OutcomeRegressor::Features(UserId user, StoryId story) const {
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(names_.size()));
  const int k = representations_.k();
  auto ui = representations_.UserIndex(user);
  auto si = representations_.StoryIndex(story);
  Eigen::Index c = 0;
  for (int d = 0; d < k; ++d) f(c++) = ui ? representations_.user_latent(*ui)[d] : 0.0;
  for (int d = 0; d < k; ++d) f(c++) = si ? representations_.story_latent(*si)[d] : 0.0;
  for (int d = 0; d < k; ++d) f(c++) = f(d) * f(k + d);
  f(c++) = ui ? representations_.user_effect(*ui) : 0.0;
  f(c++) = si ? representations_.story_effect(*si) : 0.0;
  f(c++) = representations_.Predict(user, story);
  auto uit = users_.find(user);
  for (std::size_t g = 1; g < grades_.size(); ++g) {
    f(c++) = uit != users_.end() && uit->second.grade == grades_[g];
  }
  f(c++) = uit != users_.end() && uit->second.channel == Channel::kB2B;
  f(c++) = uit != users_.end() && uit->second.channel == Channel::kPaid;
  auto sit = stories_.find(story);
  for (std::size_t t = 1; t < tags_.size(); ++t) {
    f(c++) = sit != stories_.end() && sit->second.collection_tag == tags_[t];
  }
  auto pit = past_.find(user);
  f(c++) = pit == past_.end() ? 0.0 : pit->second;
  return f;
}

double OutcomeRegressor::Predict(UserId user, StoryId story) const {
  auto row = Features(user, story);
  auto it = fold_.find(user);
  const RidgeModel& model = it == fold_.end() ? full_model_ : fold_models_[it->second];
  return std::clamp(model.PredictRow(row), 0.0, 1.0);
}

std::vector<DrLog> PrepareDrLogs(const LogDataset& logs, const PropensityModel& target,
                                 const PropensityModel& logging,
                                 const OutcomePredictor& y_hat, std::string_view section) {
  std::vector<DrLog> out;
  std::map<std::pair<UserId, int>, double> model_term;
  for (const auto& r : logs.records()) {
    if (!r.in(section) || !r.scored()) continue;
    DrLog d;
    d.user = r.user;
    d.story = r.story;
    d.week = WeekOfDay(r.day);
    d.y = *r.value();
    d.y_hat = y_hat(r.user, r.story);
    d.target_propensity = target.Probability(r.user, r.story, d.week);
    double raw = logging.Probability(r.user, r.story, d.week);
    d.clipped = raw < logging.floor();
    d.logging_propensity = std::max(raw, logging.floor());
    auto key = std::make_pair(r.user, d.week);
    auto it = model_term.find(key);
    if (it == model_term.end()) {
      double m = 0.0;
      for (const auto& [story, p] : target.SupportFor(r.user, d.week)) m += p * y_hat(r.user, story);
      it = model_term.emplace(key, m).first;
    }
    d.model_term = it->second;
    out.push_back(d);
  }
  return out;
}

double EffectiveSampleSize(std::span<const double> weights) {
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    s += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

double DrPoint(std::span<const DrLog> logs) {
  double s = 0.0;
  for (const auto& l : logs) s += l.Term();
  return logs.empty() ? 0.0 : s / logs.size();
}

DrDiagnostics ComputeDiagnostics(std::span<const DrLog> logs) {
  DrDiagnostics d;
  if (logs.empty()) return d;
  std::vector<double> w;
  std::size_t clipped = 0;
  for (const auto& l : logs) {
    w.push_back(l.weight());
    clipped += l.clipped;
  }
  d.min_weight = *std::min_element(w.begin(), w.end());
  d.max_weight = *std::max_element(w.begin(), w.end());
  d.effective_sample_size = EffectiveSampleSize(w);
  d.clipped_fraction = static_cast<double>(clipped) / logs.size();
  return d;
}

double ClusterBootstrapSe(std::span<const UserId> log_users, int replicates,
                          std::uint64_t seed,
                          const std::function<double(std::span<const std::size_t>)>& statistic,
                          int threads) {
  if (replicates < 2) throw Error(ErrorCode::kConfig, "the bootstrap needs replicates");
  std::map<UserId, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < log_users.size(); ++i) by_user[log_users[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> clusters;
  for (const auto& [_, idx] : by_user) clusters.push_back(&idx);
  if (clusters.empty()) return 0.0;
  std::vector<double> stats(replicates);
  auto run = [&](int first, int step) {
    std::vector<std::size_t> sample;
    for (int b = first; b < replicates; b += step) {
      std::mt19937_64 rng(HashCombine(seed, static_cast<std::uint64_t>(b)));
      std::uniform_int_distribution<std::size_t> pick(0, clusters.size() - 1);
      sample.clear();
      for (std::size_t c = 0; c < clusters.size(); ++c) {
        const auto& idx = *clusters[pick(rng)];
        sample.insert(sample.end(), idx.begin(), idx.end());
      }
      stats[b] = statistic(sample);
    }
  };
  const int workers = std::clamp(threads, 1, replicates);
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(run, t, workers);
    for (auto& t : pool) t.join();
  }
  return std::sqrt(SampleVariance(stats));
}

DrEstimate DrValue(std::span<const DrLog> logs, const DrConfig& config) {
  CheckBootstrap(config);
  if (logs.empty()) throw Error(ErrorCode::kNoScorableRecords, "no logs to evaluate");
  DrEstimate e;
  e.diagnostics = ComputeDiagnostics(logs);
  if (e.diagnostics.clipped_fraction > config.max_clipped_fraction) {
    throw Error(ErrorCode::kCoverageViolation,
                "logging propensity floored for " +
                    text_io::FormatReal(e.diagnostics.clipped_fraction) + " of the logs");
  }
  e.value = DrPoint(logs);
  e.n_logs = logs.size();
  std::vector<UserId> users;
  for (const auto& l : logs) users.push_back(l.user);
  e.n_users = std::set<UserId>(users.begin(), users.end()).size();
  e.std_error = ClusterBootstrapSe(
      users, config.bootstrap_replicates, config.seed,
      [&](std::span<const std::size_t> idx) { return MeanTerm(logs, idx); }, config.threads);
  return e;
}

std::map<UserId, bool> HeavyUsers(const std::map<UserId, double>& past_utilization,
                                  std::span<const UserId> users) {
  std::vector<UserId> order(users.begin(), users.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  auto past = [&](UserId u) {
    auto it = past_utilization.find(u);
    return it == past_utilization.end() ? 0.0 : it->second;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](UserId a, UserId b) { return past(a) > past(b); });
  std::map<UserId, bool> heavy;
  for (std::size_t i = 0; i < order.size(); ++i) heavy[order[i]] = i < order.size() / 2;
  return heavy;
}

std::vector<ComparisonRow> ComparePolicies(const LogDataset& logs,
                                           std::span<const NamedPolicy> policies,
                                           const PropensityModel& logging,
                                           const OutcomePredictor& y_hat,
                                           const std::map<UserId, bool>& heavy,
                                           const DrConfig& config) {
  CheckBootstrap(config);
  std::vector<std::vector<DrLog>> prepared;
  for (const auto& p : policies) prepared.push_back(PrepareDrLogs(logs, *p.target, logging, y_hat));
  if (prepared.empty() || prepared.front().empty()) {
    throw Error(ErrorCode::kNoScorableRecords, "no logs to evaluate");
  }
  const auto& base = prepared.front();
  if (ComputeDiagnostics(base).clipped_fraction > config.max_clipped_fraction) {
    throw Error(ErrorCode::kCoverageViolation, "logging propensity floored for too many logs");
  }
  const double z = NormalQuantile(0.975);
  const std::vector<std::string> groups{"all", "heavy", "light"};
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto it = heavy.find(base[i].user);
    bool h = it != heavy.end() && it->second;
    members["all"].push_back(i);
    members[h ? "heavy" : "light"].push_back(i);
  }

  std::vector<ComparisonRow> rows;
  auto emit = [&](std::size_t a, std::optional<std::size_t> b, const std::string& group) {
    const auto& idx = members[group];
    ComparisonRow row;
    row.policy_a = policies[a].name;
    row.policy_b = b ? policies[*b].name : "";
    row.group = group;
    if (idx.empty()) {
      rows.push_back(row);
      return;
    }
    std::vector<DrLog> sub_a, sub_b;
    std::vector<UserId> users;
    for (std::size_t i : idx) {
      sub_a.push_back(prepared[a][i]);
      if (b) sub_b.push_back(prepared[*b][i]);
      users.push_back(base[i].user);
    }
    auto stat = [&](std::span<const std::size_t> s) {
      double v = MeanTerm(sub_a, s);
      return b ? v - MeanTerm(sub_b, s) : v;
    };
    std::vector<std::size_t> all(sub_a.size());
    std::iota(all.begin(), all.end(), 0);
    row.estimate = stat(all);
    row.std_error =
        ClusterBootstrapSe(users, config.bootstrap_replicates, config.seed, stat, config.threads);
    row.ci_low = row.estimate - z * row.std_error;
    row.ci_high = row.estimate + z * row.std_error;
    auto diag = ComputeDiagnostics(sub_a);
    row.ess = diag.effective_sample_size;
    row.clipped_fraction = diag.clipped_fraction;
    rows.push_back(row);
  };
  for (std::size_t a = 0; a < policies.size(); ++a) {
    for (const auto& g : groups) emit(a, std::nullopt, g);
  }
  for (std::size_t a = 0; a < policies.size(); ++a) {
    for (std::size_t b = a + 1; b < policies.size(); ++b) {
      for (const auto& g : groups) emit(a, b, g);
    }
  }
  return rows;
}

void WriteComparison(std::span<const ComparisonRow> rows, std::ostream& out) {
  out << "policy_A,policy_B,group,estimate,se,ci_lo,ci_hi,ess,clipped_frac\n";
  for (const auto& r : rows) {
    out << r.policy_a << ',' << r.policy_b << ',' << r.group << ','
        << text_io::FormatReal(r.estimate) << ',' << text_io::FormatReal(r.std_error) << ','
        << text_io::FormatReal(r.ci_low) << ',' << text_io::FormatReal(r.ci_high) << ','
        << text_io::FormatReal(r.ess) << ',' << text_io::FormatReal(r.clipped_fraction) << '\n';
  }
}

ScaledEstimate PerUserTotal(const DrEstimate& dr, double mean_interactions_per_user) {
  return ScaledEstimate{dr.value * mean_interactions_per_user,
                        dr.std_error * mean_interactions_per_user, ValueScale::kPerUserTotal};
}

AgreementTest OnPolicyVsOffPolicyCheck(const ScaledEstimate& on_policy,
                                       const ScaledEstimate& off_policy) {
  if (on_policy.scale != off_policy.scale) {
    throw Error(ErrorCode::kScaleMismatch,
                "on-policy and off-policy estimates are on different scales");
  }
  AgreementTest t;
  t.difference = on_policy.estimate - off_policy.estimate;
  t.std_error = std::hypot(on_policy.std_error, off_policy.std_error);
  t.z = t.std_error > 0 ? t.difference / t.std_error : 0.0;
  t.p_value = TwoSidedNormalP(t.difference, t.std_error);
  return t;
}

}  // namespace storylab
