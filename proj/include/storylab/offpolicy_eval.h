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
#ifndef STORYLAB_OFFPOLICY_EVAL_H_
#define STORYLAB_OFFPOLICY_EVAL_H_

// Doubly robust off-policy evaluation of slate policies from logged section
// interactions: position effects, logging and target propensities, a
// cross-fitted outcome regressor, the DR value with a user-clustered
// bootstrap, and pairwise policy comparisons.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "storylab/interaction_log.h"
#include "storylab/outcome_models.h"
#include "storylab/policy_engine.h"
#include "storylab/statistics.h"

namespace storylab {

inline constexpr double kDefaultPropensityFloor = 1e-3;

struct PositionEffects {
  // Normalized share of interactions per rank, before flooring.
  std::vector<double> raw;
  // Floored at `floor` and renormalized; this is the vector to use.
  std::vector<double> probability;
  std::vector<std::size_t> interactions;
  // Ranks with no interaction at all; they received the floor mass.
  std::vector<int> never_observed;
  bool smoothed = false;
};

// Share of scored section interactions at each slate rank 1..n_ranks. The
// simulator logs every examined rank of a session and NotShown rows for the
// gaps, so the share is proportional to the examination probability.
// `monotone` applies a decreasing isotonic fit to the raw shares.
PositionEffects EstimatePositionEffects(
    const LogDataset& logs, int n_ranks = kMaxSlateRank, bool monotone = false,
    double floor = kDefaultPropensityFloor,
    std::string_view section = kRecommendedSection);

enum class PropensityKind : std::uint8_t { kEditorial, kTopK };

// Probability that a section interaction of `user` in `week` is with a given
// story.
class PropensityModel {
 public:
  using Support = std::vector<std::pair<StoryId, double>>;

  // Per-grade exposure frequencies. Users of a grade absent from the table
  // get the uniform distribution over `catalog`.
  static PropensityModel Editorial(std::map<int, std::map<StoryId, double>> frequency,
                                   std::map<UserId, UserProfile> users,
                                   std::vector<StoryId> catalog,
                                   double floor = kDefaultPropensityFloor);
  // Exposure over the policy's weekly top-K slate given position effects.
  static PropensityModel TopK(PolicySpec policy, std::vector<double> position_effects,
                              std::map<UserId, UserProfile> users,
                              std::vector<StoryId> candidates,
                              double floor = kDefaultPropensityFloor);

  PropensityKind kind() const { return kind_; }
  double floor() const { return floor_; }

  // Unfloored probability; zero off the support.
  double Probability(UserId user, StoryId story, int week) const;
  // max(Probability, floor).
  double Floored(UserId user, StoryId story, int week) const;
  // Stories with positive probability, ascending by id.
  const Support& SupportFor(UserId user, int week) const;
  bool UsesUniformFallback(UserId user) const;

  const std::map<int, std::map<StoryId, double>>& editorial_frequency() const {
    return frequency_;
  }

 private:
  PropensityKind kind_ = PropensityKind::kEditorial;
  double floor_ = kDefaultPropensityFloor;
  std::map<UserId, UserProfile> users_;
  std::vector<StoryId> catalog_;
  std::map<int, std::map<StoryId, double>> frequency_;
  std::optional<PolicySpec> policy_;
  std::vector<double> effects_;
  mutable std::map<std::pair<UserId, int>, Support> cache_;
};

// Empirical share of each story among the scored section interactions of
// each grade.
PropensityModel EditorialPropensity(const LogDataset& logs,
                                    double floor = kDefaultPropensityFloor,
                                    std::string_view section = kRecommendedSection);

// `grade,story_id,probability` for every positive editorial frequency.
void WriteEditorialPropensities(const PropensityModel& model, std::ostream& out);
// `user_id,story_id,probability` over each user's support in `week`.
void WriteTopKPropensities(const PropensityModel& model,
                           std::span<const UserId> users, int week,
                           std::ostream& out);

struct RegressorConfig {
  int folds = 5;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 23;
  std::string section{kRecommendedSection};
};

// Ridge regression of engagement on learned representations (latent
// vectors, their elementwise product, additive effects and the model's own
// prediction) plus grade, channel and collection dummies and past
// utilization. Cross-fitted by user: a user's predictions come from the
// model that did not see that user. Predictions are clipped to [0, 1].
class OutcomeRegressor {
 public:
  static OutcomeRegressor Fit(const LogDataset& logs,
                              const OutcomeModel& representations,
                              const std::map<UserId, UserCovariates>& covariates,
                              const RegressorConfig& config = {});

  double Predict(UserId user, StoryId story) const;
  Eigen::RowVectorXd Features(UserId user, StoryId story) const;
  const std::vector<std::string>& feature_names() const { return names_; }

 private:
  OutcomeModel representations_;
  std::map<UserId, UserProfile> users_;
  std::map<StoryId, StoryMeta> stories_;
  std::map<UserId, double> past_;
  std::vector<int> grades_;
  std::vector<std::string> tags_;
  std::vector<std::string> names_;
  std::map<UserId, int> fold_;
  std::vector<RidgeModel> fold_models_;
  RidgeModel full_model_;
};

using OutcomePredictor = std::function<double(UserId, StoryId)>;

// One logged section interaction prepared for the DR sum.
struct DrLog {
  UserId user{};
  StoryId story{};
  int week = 0;
  double y = 0.0;
  double y_hat = 0.0;
  double target_propensity = 0.0;
  // Logging propensity after flooring.
  double logging_propensity = 0.0;
  bool clipped = false;
  // E over the target policy of the predicted engagement for this user.
  double model_term = 0.0;

  double weight() const { return target_propensity / logging_propensity; }
  // w * (y - y_hat) + model term.
  double Term() const { return weight() * (y - y_hat) + model_term; }
};

std::vector<DrLog> PrepareDrLogs(const LogDataset& logs,
                                 const PropensityModel& target,
                                 const PropensityModel& logging,
                                 const OutcomePredictor& y_hat,
                                 std::string_view section = kRecommendedSection);

// (sum w)^2 / sum w^2; zero for an empty or all-zero input.
double EffectiveSampleSize(std::span<const double> weights);

struct DrDiagnostics {
  double min_weight = 0.0;
  double max_weight = 0.0;
  double effective_sample_size = 0.0;
  double clipped_fraction = 0.0;
};

struct DrEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_logs = 0;
  std::size_t n_users = 0;
  DrDiagnostics diagnostics;
};

struct DrConfig {
  int bootstrap_replicates = 500;
  std::uint64_t seed = 31;
  double max_clipped_fraction = 0.2;
  // Bootstrap replicates are seeded individually, so the result does not
  // depend on the thread count.
  int threads = 1;
};

// Mean of DrLog::Term over the logs.
double DrPoint(std::span<const DrLog> logs);
DrDiagnostics ComputeDiagnostics(std::span<const DrLog> logs);

// Standard deviation of the statistic over user-level resamples: users are
// drawn with replacement and keep all their logs. `statistic` receives the
// per-log indices of one resample and must be safe to call concurrently.
double ClusterBootstrapSe(std::span<const UserId> log_users, int replicates,
                          std::uint64_t seed,
                          const std::function<double(std::span<const std::size_t>)>& statistic,
                          int threads = 1);

// Point estimate, bootstrap standard error and diagnostics. Throws
// Error(kCoverageViolation) when more than `max_clipped_fraction` of the logs
// have a floored logging propensity, and Error(kNoScorableRecords) for an
// empty input.
DrEstimate DrValue(std::span<const DrLog> logs, const DrConfig& config = {});

struct NamedPolicy {
  std::string name;
  const PropensityModel* target = nullptr;
};

struct ComparisonRow {
  std::string policy_a;
  std::string policy_b;  // empty for a single-policy value row
  std::string group;     // all, heavy, light
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ess = 0.0;
  double clipped_fraction = 0.0;
};

// Splits users into the top half ("heavy") and the rest ("light") by past
// utilization; ties break by ascending id.
std::map<UserId, bool> HeavyUsers(const std::map<UserId, double>& past_utilization,
                                  std::span<const UserId> users);

// Value rows for each policy, then Q(A) - Q(B) for every pair in list order,
// each for all users and the heavy and light halves. Paired bootstrap: both
// policies are evaluated on the same user resample.
std::vector<ComparisonRow> ComparePolicies(const LogDataset& logs,
                                           std::span<const NamedPolicy> policies,
                                           const PropensityModel& logging,
                                           const OutcomePredictor& y_hat,
                                           const std::map<UserId, bool>& heavy,
                                           const DrConfig& config = {});

void WriteComparison(std::span<const ComparisonRow> rows, std::ostream& out);

enum class ValueScale : std::uint8_t { kPerInteraction, kPerUserTotal };

struct ScaledEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  ValueScale scale = ValueScale::kPerInteraction;
};

// Period total per user from a per-interaction value and the mean number of
// section interactions per user in the evaluation period.
ScaledEstimate PerUserTotal(const DrEstimate& dr, double mean_interactions_per_user);

struct AgreementTest {
  double difference = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

// z-test of on-policy minus off-policy. Throws Error(kScaleMismatch) when
// the two estimates are on different scales.
AgreementTest OnPolicyVsOffPolicyCheck(const ScaledEstimate& on_policy,
                                       const ScaledEstimate& off_policy);

}  // namespace storylab

#endif  // STORYLAB_OFFPOLICY_EVAL_H_
