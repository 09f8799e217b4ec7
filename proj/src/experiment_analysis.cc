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
#include "storylab/experiment_analysis.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>

#include "text_io.h"

namespace storylab {

namespace {

constexpr const char* kTreatmentName = "treatment";

double PctOfBaseline(double estimate, double control_mean) {
  return control_mean != 0.0 ? 100.0 * estimate / control_mean
                             : std::numeric_limits<double>::quiet_NaN();
}

void CheckSameSize(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::kInvariant, "outcome and arm vectors differ in length");
}

std::pair<std::vector<double>, std::vector<double>> SplitByArm(
    std::span<const double> y, std::span<const int> arm) {
  CheckSameSize(y.size(), arm.size());
  std::vector<double> t, c;
  for (std::size_t i = 0; i < y.size(); ++i) (arm[i] ? t : c).push_back(y[i]);
  return {t, c};
}

bool InWindow(int day, const std::optional<Period>& window) {
  return !window || (day >= window->first_day && day <= window->last_day);
}

}  // namespace

std::string_view OutcomeNameToken(OutcomeName name) {
  switch (name) {
    case OutcomeName::kEngagementSection: return "engagement_section";
    case OutcomeName::kStoriesSection: return "stories_section";
    case OutcomeName::kReadingSection: return "reading_section";
    case OutcomeName::kEngagementAll: return "engagement_all";
    case OutcomeName::kStoriesAll: return "stories_all";
    case OutcomeName::kReadingAll: return "reading_all";
  }
  return "?";
}

double OutcomeValue(const OutcomeVector& v, OutcomeName name) {
  switch (name) {
    case OutcomeName::kEngagementSection: return v.engagement_section;
    case OutcomeName::kStoriesSection: return v.stories_section;
    case OutcomeName::kReadingSection: return v.reading_section;
    case OutcomeName::kEngagementAll: return v.engagement_all;
    case OutcomeName::kStoriesAll: return v.stories_all;
    case OutcomeName::kReadingAll: return v.reading_all;
  }
  return 0.0;
}

std::string_view EstimatorToken(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kDiffInMeans: return "DiffInMeans";
    case EstimatorKind::kRegressionAdjusted: return "RegressionAdjusted";
    case EstimatorKind::kAipw: return "AIPW";
  }
  return "?";
}

std::map<UserId, OutcomeVector> BuildOutcomes(const LogDataset& data,
                                              const ArmTable& arms,
                                              std::string_view section,
                                              std::optional<Period> window) {
  std::map<UserId, OutcomeVector> out;
  for (const auto& [user, _] : arms) out[user];
  for (const auto& r : data.records()) {
    auto it = out.find(r.user);
    if (it == out.end() || !InWindow(r.day, window)) continue;
    OutcomeVector& v = it->second;
    v.launched_app = true;
    if (!r.scored()) continue;
    const double value = *r.value();
    const bool completed = r.outcome == OutcomeKind::kCompleted;
    const StoryMeta* meta = data.FindStory(r.story);
    const double minutes = completed && meta ? meta->ReadingTimeMidpoint() : 0.0;
    v.engagement_all += value;
    v.stories_all += completed;
    v.reading_all += minutes;
    if (r.in(section)) {
      v.engagement_section += value;
      v.stories_section += completed;
      v.reading_section += minutes;
    }
  }
  return out;
}

std::vector<double> AnalysisSample::Outcome(OutcomeName name) const {
  std::vector<double> y;
  y.reserve(outcomes.size());
  for (const auto& o : outcomes) y.push_back(OutcomeValue(o, name));
  return y;
}

AnalysisSample SelectSample(const std::map<UserId, OutcomeVector>& outcomes,
                            const ArmTable& arms) {
  AnalysisSample s;
  for (const auto& [user, treated] : arms) {
    auto it = outcomes.find(user);
    if (it == outcomes.end() || !it->second.launched_app) continue;
    s.users.push_back(user);
    s.arm.push_back(treated ? 1 : 0);
    s.outcomes.push_back(it->second);
  }
  return s;
}

EstimateReport DiffInMeans(std::span<const double> y, std::span<const int> arm) {
  auto [t, c] = SplitByArm(y, arm);
  if (t.size() < 2 || c.size() < 2) {
    throw Error(ErrorCode::kDegenerateArm, "each arm needs at least two users");
  }
  EstimateReport r;
  r.estimator = EstimatorKind::kDiffInMeans;
  r.n_treated = t.size();
  r.n_control = c.size();
  r.control_mean = Mean(c);
  r.estimate = Mean(t) - r.control_mean;
  r.std_error = std::sqrt(SampleVariance(t) / t.size() + SampleVariance(c) / c.size());
  r.p_value = TwoSidedNormalP(r.estimate, r.std_error);
  r.pct_of_baseline = PctOfBaseline(r.estimate, r.control_mean);
  return r;
}

Eigen::MatrixXd CovariateMatrix::Rows(std::span<const UserId> wanted) const {
  std::map<UserId, Eigen::Index> index;
  for (std::size_t i = 0; i < users.size(); ++i) index[users[i]] = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(wanted.size()), x.cols());
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    auto it = index.find(wanted[i]);
    if (it == index.end()) {
      throw Error(ErrorCode::kInvariant, "no covariates for user " + std::to_string(Raw(wanted[i])));
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(it->second);
  }
  return out;
}

CovariateMatrix BuildCovariateMatrix(
    std::span<const UserId> users, const std::map<UserId, UserProfile>& profiles,
    const std::map<UserId, UserCovariates>& covariates) {
  CovariateMatrix m;
  m.users.assign(users.begin(), users.end());
  std::set<int> grades;
  for (UserId u : users) grades.insert(profiles.at(u).grade);
  std::vector<int> dummy_grades(grades.begin(), grades.end());
  if (!dummy_grades.empty()) dummy_grades.erase(dummy_grades.begin());
  for (int g : dummy_grades) m.names.push_back("grade_" + std::to_string(g));
  m.names.insert(m.names.end(), {"channel_B2B", "channel_PAID", "past_engagement",
                                 "past_completed", "niche", "used_section_before"});
  m.x.resize(static_cast<Eigen::Index>(users.size()), static_cast<Eigen::Index>(m.names.size()));
  m.x.setZero();
  for (std::size_t i = 0; i < users.size(); ++i) {
    const auto& p = profiles.at(users[i]);
    auto cit = covariates.find(users[i]);
    UserCovariates c = cit == covariates.end() ? UserCovariates{} : cit->second;
    Eigen::Index col = 0;
    auto row = static_cast<Eigen::Index>(i);
    for (int g : dummy_grades) m.x(row, col++) = p.grade == g;
    m.x(row, col++) = p.channel == Channel::kB2B;
    m.x(row, col++) = p.channel == Channel::kPaid;
    m.x(row, col++) = c.past_total_engagement;
    m.x(row, col++) = c.past_stories_completed;
    m.x(row, col++) = c.is_niche;
    m.x(row, col++) = c.used_section_before;
  }
  return m;
}

EstimateReport RegressionAdjusted(std::span<const double> y,
                                  std::span<const int> arm,
                                  const Eigen::MatrixXd& covariates,
                                  const std::vector<std::string>& names) {
  CheckSameSize(y.size(), arm.size());
  const auto n = static_cast<Eigen::Index>(y.size());
  if (covariates.rows() != n) throw Error(ErrorCode::kInvariant, "covariate rows differ from outcomes");
  auto [t, c] = SplitByArm(y, arm);
  if (t.size() < 2 || c.size() < 2) {
    throw Error(ErrorCode::kDegenerateArm, "each arm needs at least two users");
  }
  Eigen::MatrixXd design(n, covariates.cols() + 1);
  for (Eigen::Index i = 0; i < n; ++i) design(i, 0) = arm[i];
  design.rightCols(covariates.cols()) = covariates;
  std::vector<std::string> all{kTreatmentName};
  all.insert(all.end(), names.begin(), names.end());
  Eigen::VectorXd yy = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  auto table = FitOls(yy, design, all);
  auto k = table.Index(kTreatmentName);

  EstimateReport r;
  r.estimator = EstimatorKind::kRegressionAdjusted;
  r.n_treated = t.size();
  r.n_control = c.size();
  r.control_mean = Mean(c);
  r.estimate = table.coef(k);
  r.std_error = table.std_error(k);
  r.p_value = table.p_value(k);
  r.pct_of_baseline = PctOfBaseline(r.estimate, r.control_mean);
  return r;
}

AipwResult AipwFromNuisance(std::span<const double> y, std::span<const int> arm,
                            std::span<const double> m1, std::span<const double> m0,
                            double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kPropensityOutOfRange, "assignment probability must lie in (0, 1)");
  }
  CheckSameSize(y.size(), arm.size());
  CheckSameSize(y.size(), m1.size());
  CheckSameSize(y.size(), m0.size());
  auto [t, c] = SplitByArm(y, arm);
  if (t.size() < 2 || c.size() < 2) {
    throw Error(ErrorCode::kDegenerateArm, "each arm needs at least two users");
  }
  AipwResult out;
  out.scores.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double a = arm[i] ? 1.0 : 0.0;
    out.scores[i] = m1[i] - m0[i] + a * (y[i] - m1[i]) / p -
                    (1.0 - a) * (y[i] - m0[i]) / (1.0 - p);
  }
  EstimateReport& r = out.report;
  r.estimator = EstimatorKind::kAipw;
  r.n_treated = t.size();
  r.n_control = c.size();
  r.control_mean = Mean(c);
  r.estimate = Mean(out.scores);
  r.std_error = std::sqrt(SampleVariance(out.scores) / out.scores.size());
  r.p_value = TwoSidedNormalP(r.estimate, r.std_error);
  r.pct_of_baseline = PctOfBaseline(r.estimate, r.control_mean);
  return out;
}

AipwResult Aipw(std::span<const double> y, std::span<const int> arm,
                const Eigen::MatrixXd& covariates, const AipwConfig& config) {
  if (!(config.propensity > 0.0 && config.propensity < 1.0)) {
    throw Error(ErrorCode::kPropensityOutOfRange, "assignment probability must lie in (0, 1)");
  }
  CheckSameSize(y.size(), arm.size());
  const std::size_t n = y.size();
  if (covariates.rows() != static_cast<Eigen::Index>(n)) {
    throw Error(ErrorCode::kInvariant, "covariate rows differ from outcomes");
  }
  auto fold = FoldAssignment(n, config.folds, config.seed);
  std::vector<double> m1(n), m0(n);
  for (int k = 0; k < config.folds; ++k) {
    for (int a = 0; a <= 1; ++a) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] != k && arm[i] == a) rows.push_back(static_cast<Eigen::Index>(i));
      }
      std::vector<double>& target = a ? m1 : m0;
      if (rows.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
          if (fold[i] == k) target[i] = 0.0;
        }
        continue;
      }
      Eigen::MatrixXd xk(static_cast<Eigen::Index>(rows.size()), covariates.cols());
      Eigen::VectorXd yk(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        xk.row(static_cast<Eigen::Index>(r)) = covariates.row(rows[r]);
        yk(static_cast<Eigen::Index>(r)) = y[rows[r]];
      }
      auto model = RidgeModel::Fit(xk, yk, config.ridge_lambda);
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] == k) target[i] = model.PredictRow(covariates.row(static_cast<Eigen::Index>(i)));
      }
    }
  }
  return AipwFromNuisance(y, arm, m1, m0, config.propensity);
}

WilcoxonResult WilcoxonOneSided(std::span<const double> treated,
                                std::span<const double> control,
                                WilcoxonMethod method) {
  if (treated.empty() || control.empty()) {
    throw Error(ErrorCode::kDegenerateArm, "rank-sum test needs two non-empty samples");
  }
  const std::size_t nt = treated.size(), nc = control.size(), n = nt + nc;
  std::vector<std::pair<double, int>> pooled;
  for (double v : treated) pooled.emplace_back(v, 1);
  for (double v : control) pooled.emplace_back(v, 0);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Doubled midranks are integers.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    long twice_mid = static_cast<long>(i + 1 + j);  // 2 * ((i+1) + j) / 2
    for (std::size_t k = i; k < j; ++k) rank2[k] = twice_mid;
    double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (pooled[i].second) w2 += rank2[i];
  }
  WilcoxonResult out;
  out.statistic = 0.5 * static_cast<double>(w2);
  if (pooled.front().first == pooled.back().first) {
    out.fully_tied = true;
    out.p_value = 0.5;
    return out;
  }
  bool exact = method == WilcoxonMethod::kExact || (method == WilcoxonMethod::kAuto && n <= 12);
  if (exact) {
    // count[k][s]: subsets of size k with doubled rank sum s.
    const long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<std::vector<long double>> count(nt + 1, std::vector<long double>(max_sum + 1, 0.0L));
    count[0][0] = 1.0L;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = std::min(i + 1, nt); k >= 1; --k) {
        for (long s = max_sum; s >= rank2[i]; --s) count[k][s] += count[k - 1][s - rank2[i]];
      }
    }
    long double total = 0.0L, tail = 0.0L;
    for (long s = 0; s <= max_sum; ++s) {
      total += count[nt][s];
      if (s >= w2) tail += count[nt][s];
    }
    out.exact = true;
    out.p_value = static_cast<double>(tail / total);
    return out;
  }
  const double dn = static_cast<double>(n);
  const double mean = nt * (dn + 1.0) / 2.0;
  const double var = static_cast<double>(nt) * nc / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  const double z = (out.statistic - mean - 0.5) / std::sqrt(var);
  out.p_value = 1.0 - NormalCdf(z);
  return out;
}

SubgroupTable SubgroupAtes(std::span<const double> y, std::span<const int> arm,
                           std::span<const SubgroupSplit> splits) {
  CheckSameSize(y.size(), arm.size());
  SubgroupTable table;
  for (const auto& split : splits) {
    CheckSameSize(y.size(), split.member.size());
    std::optional<EstimateReport> side[2];
    for (int in = 1; in >= 0; --in) {
      std::vector<double> ys;
      std::vector<int> as;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if ((split.member[i] != 0) == (in == 1)) {
          ys.push_back(y[i]);
          as.push_back(arm[i]);
        }
      }
      SubgroupRow row{split.name, in ? split.label_in : split.label_out, std::nullopt};
      try {
        row.report = DiffInMeans(ys, as);
        row.report->filter = row.group;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateArm) throw;
      }
      side[in] = row.report;
      table.rows.push_back(std::move(row));
    }
    if (side[0] && side[1]) {
      SubgroupContrast c;
      c.split = split.name;
      c.estimate = side[1]->estimate - side[0]->estimate;
      c.std_error = std::hypot(side[1]->std_error, side[0]->std_error);
      c.p_value = TwoSidedNormalP(c.estimate, c.std_error);
      table.contrasts.push_back(c);
    }
  }
  return table;
}

RegressionTable AipwScoreRegression(std::span<const double> scores,
                                    const Eigen::MatrixXd& covariates,
                                    const std::vector<std::string>& names) {
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(scores.data(),
                                                        static_cast<Eigen::Index>(scores.size()));
  return FitOls(y, covariates, names);
}

std::vector<RankMean> MeanEngagementByRank(const LogDataset& data,
                                           const ArmTable& arms,
                                           std::string_view section,
                                           int max_rank) {
  std::map<std::pair<int, int>, std::vector<double>> values;
  std::tuple<UserId, int> current{UserId{0}, -1};
  bool have_current = false;
  int order = 0;
  for (const auto& r : data.records()) {
    auto it = arms.find(r.user);
    if (it == arms.end() || !r.in(section) || !r.scored()) continue;
    std::tuple<UserId, int> key{r.user, r.day};
    if (!have_current || key != current) {
      current = key;
      have_current = true;
      order = 0;
    }
    ++order;
    if (order <= max_rank) values[{it->second ? 1 : 0, order}].push_back(*r.value());
  }
  std::vector<RankMean> out;
  const double z = NormalQuantile(0.975);
  for (const auto& [key, v] : values) {
    RankMean m;
    m.arm = key.first;
    m.rank = key.second;
    m.n = v.size();
    m.mean = Mean(v);
    m.std_error = v.size() > 1 ? std::sqrt(SampleVariance(v) / v.size()) : 0.0;
    m.ci_low = m.mean - z * m.std_error;
    m.ci_high = m.mean + z * m.std_error;
    out.push_back(m);
  }
  return out;
}

std::vector<SessionHistogram> SessionLengthDistribution(const LogDataset& data,
                                                        const ArmTable& arms,
                                                        std::string_view section) {
  std::map<std::tuple<UserId, int, int>, int> length;
  for (const auto& r : data.records()) {
    if (!arms.count(r.user) || !r.in(section) || !r.scored()) continue;
    ++length[{r.user, r.day, r.session}];
  }
  std::vector<SessionHistogram> out(2);
  out[0].arm = 0;
  out[1].arm = 1;
  for (const auto& [key, len] : length) {
    auto& h = out[arms.at(std::get<0>(key)) ? 1 : 0];
    h.frequency[len] += 1.0;
    h.sessions += 1;
    h.mean_length += len;
  }
  for (auto& h : out) {
    if (h.sessions == 0) continue;
    for (auto& [len, f] : h.frequency) f /= h.sessions;
    h.mean_length /= h.sessions;
  }
  return {out[1], out[0]};
}

double DominanceStatistic(const SessionHistogram& treatment,
                          const SessionHistogram& control) {
  std::set<int> lengths;
  for (const auto& [l, _] : treatment.frequency) lengths.insert(l);
  for (const auto& [l, _] : control.frequency) lengths.insert(l);
  double ft = 0.0, fc = 0.0, best = -1.0;
  for (int l : lengths) {
    if (auto it = treatment.frequency.find(l); it != treatment.frequency.end()) ft += it->second;
    if (auto it = control.frequency.find(l); it != control.frequency.end()) fc += it->second;
    best = std::max(best, fc - ft);
  }
  return lengths.empty() ? 0.0 : best;
}

std::vector<BucketRow> BucketEngagementAnalysis(const LogDataset& data,
                                                const ArmTable& arms,
                                                int n_buckets,
                                                const CovariateMatrix& covariates,
                                                std::string_view section) {
  if (n_buckets < 1) throw Error(ErrorCode::kConfig, "need at least one bucket");
  std::map<StoryId, std::size_t> impressions;
  for (const auto& [id, _] : data.stories()) impressions[id] = 0;
  std::size_t total = 0;
  for (const auto& r : data.records()) {
    auto it = arms.find(r.user);
    if (it == arms.end() || !it->second || !r.in(section)) continue;
    ++impressions[r.story];
    ++total;
  }
  std::vector<std::pair<std::size_t, StoryId>> order;
  for (const auto& [s, n] : impressions) order.emplace_back(n, s);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::map<StoryId, int> bucket_of;
  std::vector<BucketRow> rows(n_buckets);
  std::size_t cumulative = 0;
  for (const auto& [n, s] : order) {
    int b = n_buckets - 1;
    if (n > 0) {
      b = static_cast<int>(std::min<std::size_t>(n_buckets - 1, cumulative * n_buckets / total));
    }
    cumulative += n;
    bucket_of[s] = b;
    rows[b].stories += 1;
    rows[b].treatment_impressions += n;
  }

  std::map<UserId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < covariates.users.size(); ++i) {
    row_of[covariates.users[i]] = static_cast<Eigen::Index>(i);
  }
  std::vector<std::vector<const InteractionRecord*>> members(n_buckets);
  for (const auto& r : data.records()) {
    if (!arms.count(r.user) || !r.in(section) || !r.scored() || !row_of.count(r.user)) continue;
    members[bucket_of.at(r.story)].push_back(&r);
  }

  for (int b = 0; b < n_buckets; ++b) {
    BucketRow& row = rows[b];
    row.bucket = b;
    const auto& recs = members[b];
    const auto m = static_cast<Eigen::Index>(recs.size());
    Eigen::VectorXd y(m);
    Eigen::MatrixXd x(m, covariates.x.cols() + 1);
    OlsOptions options;
    options.variance = VarianceKind::kClusterRobust;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& r = *recs[i];
      bool treated = arms.at(r.user);
      (treated ? row.n_treatment : row.n_control) += 1;
      y(i) = *r.value();
      x(i, 0) = treated;
      x.row(i).tail(covariates.x.cols()) = covariates.x.row(row_of.at(r.user));
      options.clusters.push_back(Raw(r.user));
    }
    if (row.n_treatment < 2 || row.n_control < 2) continue;
    std::vector<std::string> names{kTreatmentName};
    names.insert(names.end(), covariates.names.begin(), covariates.names.end());
    RegressionTable fit;
    Eigen::MatrixXd used = x;
    try {
      fit = FitOls(y, x, names, options);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kRankDeficient) throw;
      used = x.leftCols(1);
      fit = FitOls(y, used, {kTreatmentName}, options);
    }
    double base = 0.0;
    for (std::size_t k = 0; k < fit.names.size(); ++k) {
      const auto& name = fit.names[k];
      if (name == kInterceptName) {
        base += fit.coef(k);
      } else if (name != kTreatmentName) {
        auto col = std::find(names.begin(), names.end(), name) - names.begin();
        base += fit.coef(k) * x.col(col).mean();
      }
    }
    auto k = fit.Index(kTreatmentName);
    row.control_mean = base;
    row.difference = fit.coef(k);
    row.treatment_mean = base + row.difference;
    row.std_error = fit.std_error(k);
    row.p_value = fit.p_value(k);
    row.estimable = true;
  }
  return rows;
}

std::vector<ExposureRow> StoryPopularityExposure(const LogDataset& data,
                                                 const ArmTable& arms,
                                                 const std::map<UserId, bool>& is_niche,
                                                 std::string_view section) {
  std::vector<ExposureRow> out;
  for (int a = 1; a >= 0; --a) {
    ExposureRow row;
    row.arm = a;
    std::map<StoryId, std::size_t> impressions;
    for (const auto& r : data.records()) {
      auto it = arms.find(r.user);
      if (it == arms.end() || it->second != (a == 1) || !r.in(section)) continue;
      ++impressions[r.story];
    }
    std::vector<std::pair<std::size_t, StoryId>> order;
    for (const auto& [s, n] : impressions) order.emplace_back(n, s);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    std::map<StoryId, double> rank;
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i].second] = static_cast<double>(i + 1);
    const double shown = static_cast<double>(order.size());
    row.degenerate = order.size() <= 1;

    std::map<UserId, std::pair<double, double>> per_user;  // rank sum, count
    for (const auto& r : data.records()) {
      auto it = arms.find(r.user);
      if (it == arms.end() || it->second != (a == 1) || !r.in(section)) continue;
      auto& acc = per_user[r.user];
      acc.first += rank.at(r.story);
      acc.second += 1.0;
    }
    std::vector<double> niche, other;
    for (const auto& [u, acc] : per_user) {
      auto nit = is_niche.find(u);
      bool n = nit != is_niche.end() && nit->second;
      (n ? niche : other).push_back(acc.first / acc.second);
    }
    row.niche_users = niche.size();
    row.other_users = other.size();
    row.niche_rank = Mean(niche);
    row.other_rank = Mean(other);
    row.niche_percentile = shown > 0 ? row.niche_rank / shown : 0.0;
    row.other_percentile = shown > 0 ? row.other_rank / shown : 0.0;
    row.difference = row.niche_rank - row.other_rank;
    if (niche.size() >= 2 && other.size() >= 2) {
      auto t = WelchTTest(niche, other);
      row.std_error = t.std_error;
      row.p_value = t.p_value;
    } else {
      row.degenerate = true;
    }
    out.push_back(row);
  }
  return out;
}

std::vector<BalanceRow> BalanceTable(const Eigen::MatrixXd& covariates,
                                     const std::vector<std::string>& names,
                                     std::span<const int> arm) {
  CheckSameSize(static_cast<std::size_t>(covariates.rows()), arm.size());
  std::vector<BalanceRow> out;
  for (Eigen::Index c = 0; c < covariates.cols(); ++c) {
    std::vector<double> t, k;
    for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
      (arm[i] ? t : k).push_back(covariates(i, c));
    }
    auto test = WelchTTest(t, k);
    BalanceRow row;
    row.covariate = names.at(c);
    row.mean_treatment = Mean(t);
    row.mean_control = Mean(k);
    row.sd_treatment = std::sqrt(SampleVariance(t));
    row.sd_control = std::sqrt(SampleVariance(k));
    row.p_value = test.p_value;
    out.push_back(row);
  }
  return out;
}

double MinimumDetectableEffect(double outcome_sd, std::size_t n_treated,
                               std::size_t n_control, double alpha, double power) {
  if (!(outcome_sd > 0) || n_treated == 0 || n_control == 0 || !(alpha > 0 && alpha < 1) ||
      !(power > 0 && power < 1)) {
    throw Error(ErrorCode::kConfig, "minimum detectable effect needs positive inputs");
  }
  double multiplier = NormalQuantile(1.0 - alpha / 2.0) + NormalQuantile(power);
  return multiplier * outcome_sd * std::sqrt(1.0 / n_treated + 1.0 / n_control);
}

std::vector<CalibrationRow> CalibrationRegression(std::span<const double> predicted,
                                                  std::span<const double> observed,
                                                  std::span<const std::string> groups) {
  CheckSameSize(predicted.size(), observed.size());
  CheckSameSize(predicted.size(), groups.size());
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  OlsOptions options;
  options.add_intercept = false;
  std::vector<CalibrationRow> out;
  for (const auto& [group, idx] : members) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i) = observed[idx[i]];
      x(i, 0) = predicted[idx[i]];
    }
    CalibrationRow row;
    row.group = group;
    row.n = idx.size();
    auto fit = FitOls(y, x, {"predicted"}, options);
    row.slope = fit.coef(0);
    row.std_error = fit.std_error(0);
    row.p_value = fit.p_value(0);
    row.r_squared = fit.r_squared;
    out.push_back(row);
  }
  return out;
}

std::vector<CalibrationRow> CalibrationByArmAndFrequency(
    const OutcomeModel& model, const LogDataset& data, const ArmTable& arms,
    const LogDataset& frequency_data, std::string_view section) {
  auto counts = CountInteractions(frequency_data).per_user;
  std::vector<double> freq;
  for (const auto& [u, _] : arms) {
    auto it = counts.find(u);
    freq.push_back(it == counts.end() ? 0.0 : it->second);
  }
  std::sort(freq.begin(), freq.end());
  double median = freq.empty() ? 0.0
                               : (freq.size() % 2 ? freq[freq.size() / 2]
                                                  : 0.5 * (freq[freq.size() / 2 - 1] +
                                                           freq[freq.size() / 2]));
  std::vector<double> pred, obs;
  std::vector<std::string> by_arm, by_freq;
  for (const auto& r : data.records()) {
    auto it = arms.find(r.user);
    if (it == arms.end() || !r.in(section) || !r.scored()) continue;
    pred.push_back(model.Predict(r.user, r.story));
    obs.push_back(*r.value());
    by_arm.push_back(it->second ? "treatment" : "control");
    auto c = counts.find(r.user);
    double f = c == counts.end() ? 0.0 : c->second;
    by_freq.push_back(f > median ? "high-frequency" : "low-frequency");
  }
  auto out = CalibrationRegression(pred, obs, by_arm);
  auto more = CalibrationRegression(pred, obs, by_freq);
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

void WriteEstimates(std::span<const EstimateReport> reports, std::ostream& out) {
  out << "estimator,outcome,filter,estimate,se,p,pct\n";
  for (const auto& r : reports) {
    out << EstimatorToken(r.estimator) << ',' << r.outcome << ',' << r.filter << ','
        << text_io::FormatReal(r.estimate) << ',' << text_io::FormatReal(r.std_error) << ','
        << text_io::FormatReal(r.p_value) << ',' << text_io::FormatReal(r.pct_of_baseline)
        << '\n';
  }
}

}  // namespace storylab
