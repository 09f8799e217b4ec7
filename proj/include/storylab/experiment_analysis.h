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
// Analysis of a two-arm experiment: per-user outcomes, average treatment
// effect estimators, heterogeneity and diagnostic tables.
//
// Arms are given as a map from user to a treatment flag. Per-user outcome
// samples only keep users who launched the app during the window.
#ifndef STORYLAB_EXPERIMENT_ANALYSIS_H_
#define STORYLAB_EXPERIMENT_ANALYSIS_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "storylab/common.h"
#include "storylab/interaction_log.h"
#include "storylab/outcome_models.h"
#include "storylab/statistics.h"

namespace storylab {

using ArmTable = std::map<UserId, bool>;

struct OutcomeVector {
  double engagement_section = 0.0;
  double engagement_all = 0.0;
  // Completed stories.
  int stories_section = 0;
  int stories_all = 0;
  // Minutes: reading-time midpoints of completed stories.
  double reading_section = 0.0;
  double reading_all = 0.0;
  bool launched_app = false;

  bool operator==(const OutcomeVector&) const = default;
};

enum class OutcomeName : std::uint8_t {
  kEngagementSection,
  kStoriesSection,
  kReadingSection,
  kEngagementAll,
  kStoriesAll,
  kReadingAll,
};

inline constexpr OutcomeName kAllOutcomes[] = {
    OutcomeName::kEngagementSection, OutcomeName::kStoriesSection,
    OutcomeName::kReadingSection,    OutcomeName::kEngagementAll,
    OutcomeName::kStoriesAll,        OutcomeName::kReadingAll};

std::string_view OutcomeNameToken(OutcomeName name);
double OutcomeValue(const OutcomeVector& v, OutcomeName name);

// Per-user sums over records in [window.first_day, window.last_day] (the
// whole log when absent) for every user in `arms`.
std::map<UserId, OutcomeVector> BuildOutcomes(
    const LogDataset& data, const ArmTable& arms,
    std::string_view section = kRecommendedSection,
    std::optional<Period> window = std::nullopt);

// Users that launched the app, ordered by id, with their arm.
struct AnalysisSample {
  std::vector<UserId> users;
  std::vector<int> arm;  // 1 treatment, 0 control
  std::vector<OutcomeVector> outcomes;

  std::vector<double> Outcome(OutcomeName name) const;
  std::size_t size() const { return users.size(); }
};

AnalysisSample SelectSample(const std::map<UserId, OutcomeVector>& outcomes,
                            const ArmTable& arms);

enum class EstimatorKind : std::uint8_t {
  kDiffInMeans,
  kRegressionAdjusted,
  kAipw,
};

std::string_view EstimatorToken(EstimatorKind kind);

struct EstimateReport {
  EstimatorKind estimator = EstimatorKind::kDiffInMeans;
  std::string outcome;
  std::string filter = "all";
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double pct_of_baseline = 0.0;
  double control_mean = 0.0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;

  double CiLow() const { return estimate - NormalQuantile(0.975) * std_error; }
  double CiHigh() const { return estimate + NormalQuantile(0.975) * std_error; }
};

// mean(treated) - mean(control) with the Welch standard error and a normal
// p-value. Throws Error(kDegenerateArm) when an arm has fewer than two users.
EstimateReport DiffInMeans(std::span<const double> y, std::span<const int> arm);

// Covariates per user, column names alongside.
struct CovariateMatrix {
  std::vector<UserId> users;
  Eigen::MatrixXd x;
  std::vector<std::string> names;

  // Rows for `users`, in that order. Throws Error(kInvariant) for unknown users.
  Eigen::MatrixXd Rows(std::span<const UserId> users) const;
};

// Grade and channel dummies (lowest grade and B2C as baselines), past total
// engagement, past completions, niche indicator and past section use.
CovariateMatrix BuildCovariateMatrix(
    std::span<const UserId> users, const std::map<UserId, UserProfile>& profiles,
    const std::map<UserId, UserCovariates>& covariates);

// OLS of y on [1, arm, covariates] with HC2 standard errors; constant
// covariate columns are dropped. Throws Error(kRankDeficient).
EstimateReport RegressionAdjusted(std::span<const double> y,
                                  std::span<const int> arm,
                                  const Eigen::MatrixXd& covariates,
                                  const std::vector<std::string>& names);

struct AipwConfig {
  double propensity = 0.5;
  int folds = 5;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 17;
};

struct AipwResult {
  EstimateReport report;
  std::vector<double> scores;
};

// Augmented inverse propensity weighting with cross-fitted ridge outcome
// models per arm. Throws Error(kPropensityOutOfRange) unless 0 < p < 1.
AipwResult Aipw(std::span<const double> y, std::span<const int> arm,
                const Eigen::MatrixXd& covariates, const AipwConfig& config = {});

// Same with given nuisance predictions m1 (treated) and m0 (control).
AipwResult AipwFromNuisance(std::span<const double> y, std::span<const int> arm,
                            std::span<const double> m1, std::span<const double> m0,
                            double propensity);

enum class WilcoxonMethod : std::uint8_t { kAuto, kExact, kNormal };

struct WilcoxonResult {
  // Rank sum of the treated sample, midranks for ties.
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
  bool fully_tied = false;
};

// One-sided rank-sum test of "treated > control": p = P(W >= observed).
// kAuto enumerates exactly when the combined size is at most 12 and otherwise
// uses the normal approximation with tie-corrected variance and a 0.5
// continuity correction. Fully tied samples give p = 0.5, flagged.
WilcoxonResult WilcoxonOneSided(std::span<const double> treated,
                                std::span<const double> control,
                                WilcoxonMethod method = WilcoxonMethod::kAuto);

struct SubgroupSplit {
  std::string name;         // e.g. "niche"
  std::string label_in;     // e.g. "niche"
  std::string label_out;    // e.g. "non-niche"
  std::vector<int> member;  // 1 if the user is in the group
};

struct SubgroupRow {
  std::string split;
  std::string group;
  std::optional<EstimateReport> report;  // empty when an arm has < 2 users
};

struct SubgroupContrast {
  std::string split;
  double estimate = 0.0;  // ATE(in) - ATE(out)
  double std_error = 0.0;
  double p_value = 1.0;
};

struct SubgroupTable {
  std::vector<SubgroupRow> rows;
  std::vector<SubgroupContrast> contrasts;
};

SubgroupTable SubgroupAtes(std::span<const double> y, std::span<const int> arm,
                           std::span<const SubgroupSplit> splits);

// Least squares of AIPW scores on covariates (with intercept), HC2 errors.
RegressionTable AipwScoreRegression(std::span<const double> scores,
                                    const Eigen::MatrixXd& covariates,
                                    const std::vector<std::string>& names);

struct RankMean {
  int arm = 0;
  int rank = 0;
  std::size_t n = 0;
  double mean = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// Mean engagement by interaction order within a user-day in `section`
// (1 = first interaction of the day), per arm, up to `max_rank`.
std::vector<RankMean> MeanEngagementByRank(
    const LogDataset& data, const ArmTable& arms,
    std::string_view section = kRecommendedSection, int max_rank = 15);

struct SessionHistogram {
  int arm = 0;
  std::map<int, double> frequency;  // session length -> share of sessions
  std::size_t sessions = 0;
  double mean_length = 0.0;
};

// Distribution of scored section interactions per session, per arm; sessions
// without a section interaction are omitted.
std::vector<SessionHistogram> SessionLengthDistribution(
    const LogDataset& data, const ArmTable& arms,
    std::string_view section = kRecommendedSection);

// max over L of F_control(L) - F_treatment(L); positive when the treatment
// distribution puts less mass at or below some length.
double DominanceStatistic(const SessionHistogram& treatment,
                          const SessionHistogram& control);

struct BucketRow {
  int bucket = 0;  // 0 = most shown
  std::size_t stories = 0;
  std::size_t treatment_impressions = 0;
  std::size_t n_treatment = 0;
  std::size_t n_control = 0;
  // Covariate-adjusted engagement per interaction, evaluated at the bucket's
  // mean covariates.
  double treatment_mean = 0.0;
  double control_mean = 0.0;
  double difference = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  bool estimable = false;
};

// Stories sorted by treatment-arm impressions (section records, NotShown
// included; ties by ascending id) and cut into `n_buckets` groups of roughly
// equal treatment impressions. Stories never shown to the treatment arm join
// the last bucket. Within a bucket, engagement of scored section interactions
// is regressed on [1, arm, covariates] with standard errors clustered by user.
std::vector<BucketRow> BucketEngagementAnalysis(
    const LogDataset& data, const ArmTable& arms, int n_buckets,
    const CovariateMatrix& covariates,
    std::string_view section = kRecommendedSection);

struct ExposureRow {
  int arm = 0;
  // Mean over users of the average impression rank (1 = most shown story in
  // the arm) and percentile (rank / shown stories) of the stories they saw.
  double niche_rank = 0.0;
  double other_rank = 0.0;
  double niche_percentile = 0.0;
  double other_percentile = 0.0;
  double difference = 0.0;  // niche - other, in rank
  double std_error = 0.0;
  double p_value = 1.0;
  std::size_t niche_users = 0;
  std::size_t other_users = 0;
  bool degenerate = false;
};

std::vector<ExposureRow> StoryPopularityExposure(
    const LogDataset& data, const ArmTable& arms,
    const std::map<UserId, bool>& is_niche,
    std::string_view section = kRecommendedSection);

struct BalanceRow {
  std::string covariate;
  double mean_treatment = 0.0;
  double mean_control = 0.0;
  double sd_treatment = 0.0;
  double sd_control = 0.0;
  double p_value = 1.0;
};

std::vector<BalanceRow> BalanceTable(const Eigen::MatrixXd& covariates,
                                     const std::vector<std::string>& names,
                                     std::span<const int> arm);

// (z_{1 - alpha/2} + z_{power}) * sd * sqrt(1/n_t + 1/n_c).
double MinimumDetectableEffect(double outcome_sd, std::size_t n_treated,
                               std::size_t n_control, double alpha = 0.05,
                               double power = 0.8);

struct CalibrationRow {
  std::string group;
  std::size_t n = 0;
  double slope = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double r_squared = 0.0;
};

// Observed engagement on predicted engagement, no intercept, HC2 errors and
// uncentered R^2, per group label.
std::vector<CalibrationRow> CalibrationRegression(
    std::span<const double> predicted, std::span<const double> observed,
    std::span<const std::string> groups);

// Scored section records of users in `arms` with the model's predictions,
// grouped by arm and by user frequency (above or below the median number
// of records in `frequency_data`).
std::vector<CalibrationRow> CalibrationByArmAndFrequency(
    const OutcomeModel& model, const LogDataset& data, const ArmTable& arms,
    const LogDataset& frequency_data,
    std::string_view section = kRecommendedSection);

// One estimator result per line:
// `estimator,outcome,filter,estimate,se,p,pct`.
void WriteEstimates(std::span<const EstimateReport> reports, std::ostream& out);

}  // namespace storylab

#endif  // STORYLAB_EXPERIMENT_ANALYSIS_H_
