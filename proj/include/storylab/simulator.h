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
// Synthetic worlds with known engagement preferences.
//
// Expected engagement of user i with story j is
//
//   mu_ij = sigmoid(intercept + a_i + c_j + x_i . z_j)
//
// where users and stories belong to a mainstream or a niche segment whose
// latent vectors point in opposite directions along the first axis. Niche
// stories carry lower additive effects, so they are unpopular among
// mainstream users.
//
// Each simulated day a user opens the app with a user-specific probability.
// On an open day the user runs Poisson(session_rate) sessions in the
// recommended section. In a session every slate rank r is examined
// independently with probability examination[r]; each examined story becomes
// one interaction whose outcome is drawn from the cascade rule below. Rank
// alone drives exposure and the story alone drives the outcome. The user also
// browses the unranked other section, choosing Poisson(other_rate) distinct
// stories with probability proportional to exp(tau * logit(mu_ij)).
//
// Outcome cascade: view with probability g, start given view with g, and
// complete given start with g, where g solves
//
//   0.5 g^3 + 0.2 g^2 + 0.3 g = mu
//
// so the expected engagement value of a draw is exactly mu on [0, 1].
#ifndef STORYLAB_SIMULATOR_H_
#define STORYLAB_SIMULATOR_H_

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "storylab/common.h"
#include "storylab/interaction_log.h"
#include "storylab/outcome_models.h"
#include "storylab/policy_engine.h"

namespace storylab {

enum class Segment : std::uint8_t { kMainstream, kNiche };

struct WorldConfig {
  int n_users = 600;
  int n_stories = 400;
  int n_grades = 4;
  int latent_dim = 2;
  double niche_user_share = 0.3;
  double niche_story_share = 0.3;

  double intercept = -0.4;
  double user_effect_sd = 0.3;
  double story_effect_sd = 0.4;
  // Mean additive effect of mainstream stories minus that of niche stories.
  double popularity_gap = 0.6;
  // Segment loading on the first latent axis, and idiosyncratic noise on
  // every axis.
  double latent_scale = 1.0;
  double latent_noise = 0.3;

  // Mean of the per-user Beta-distributed probability of opening the app.
  double active_day_prob = 0.6;
  double active_day_concentration = 6.0;
  // Section sessions per open day ~ Poisson(theta), theta ~ LogNormal.
  double session_rate_median = 1.2;
  double session_rate_log_sd = 0.4;
  // Other-section stories per open day ~ Poisson(lambda), lambda ~ LogNormal.
  double other_rate_median = 6.0;
  double other_rate_log_sd = 0.4;
  double other_choice_temperature = 1.0;
  bool simulate_other_section = true;

  // Per-rank examination probabilities; empty means 0.55 * 0.82^(r-1).
  std::vector<double> examination;
  // Log NotShown rows for unexamined ranks above the deepest interaction.
  bool log_not_shown = true;

  // Elastic usage: after a section session with mean engagement v the user
  // starts another session with probability elastic_strength * v, at most
  // elastic_max_extra times a day.
  bool elastic_usage = false;
  double elastic_strength = 0.8;
  int elastic_max_extra = 4;

  // Editorial scripts: the top `editorial_pool_fraction` of stories by
  // mainstream appeal, rotated by one slate per week.
  double editorial_pool_fraction = 0.5;
  double editorial_noise = 0.3;
  int editorial_grade_stride = 7;
  int slate_size = kDefaultSlateSize;
};

std::vector<double> DefaultExamination();

// Throws Error(kConfig) for non-positive sizes, shares outside [0, 1] and
// invalid examination vectors.
void ValidateWorldConfig(const WorldConfig& config);

struct GroundTruth {
  double intercept = 0.0;
  std::vector<double> user_effect;
  std::vector<double> story_effect;
  Eigen::MatrixXd user_latent;   // n_users x latent_dim
  Eigen::MatrixXd story_latent;  // n_stories x latent_dim
  std::vector<Segment> user_segment;
  std::vector<Segment> story_segment;

  double Logit(std::size_t user, std::size_t story) const;
  double Mu(std::size_t user, std::size_t story) const {
    return Sigmoid(Logit(user, story));
  }
};

struct ActivityModel {
  std::vector<double> active_prob;
  std::vector<double> session_rate;
  std::vector<double> other_rate;
  std::vector<double> examination;

  // Expected section interactions of a user per day, without elastic usage.
  double ExpectedSectionInteractionsPerDay(std::size_t user) const;
};

// User and story ids are their indices 0..n-1.
struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  GroundTruth truth;
  ActivityModel activity;
  std::map<UserId, UserProfile> users;
  std::map<StoryId, StoryMeta> stories;
  std::vector<UserId> user_ids;
  std::vector<StoryId> story_ids;

  double Mu(UserId user, StoryId story) const {
    return truth.Mu(Raw(user), Raw(story));
  }
  // Editorial script for every grade and weeks first_week..last_week.
  EditorialScript MakeEditorialScript(int first_week, int last_week) const;
};

World MakeWorld(const WorldConfig& config, std::uint64_t seed);

// Cascade level g with 0.5 g^3 + 0.2 g^2 + 0.3 g = mu, for mu in [0, 1].
double CascadeLevel(double mu);

struct OutcomeProbabilities {
  double completed = 0.0;
  double started = 0.0;
  double viewed = 0.0;
  double skipped = 0.0;
};

OutcomeProbabilities CascadeProbabilities(double mu);
OutcomeKind DrawOutcome(double mu, std::mt19937_64& rng);

// Policy per user; every user of the world must be covered.
using PolicyAssignment = std::map<UserId, const PolicySpec*>;

struct PeriodSpec {
  int first_day = 0;
  int days = 14;
  std::uint64_t seed = 0;
  // Overrides the world's examination probabilities when non-empty.
  std::vector<double> examination;
};

// Simulates every user independently from a stream seeded by
// (spec.seed, user id). Slates refresh at the start of each week (and on the
// first simulated day) and follow DailyUpdate after each open day when the
// policy enables daily updates.
LogDataset SimulatePeriod(const World& world, const PolicyAssignment& policies,
                          const PeriodSpec& spec,
                          std::vector<SlateDumpRow>* slate_dump = nullptr);

// Same policy for everyone.
LogDataset SimulatePeriod(const World& world, const PolicySpec& policy,
                          const PeriodSpec& spec,
                          std::vector<SlateDumpRow>* slate_dump = nullptr);

struct ExperimentPlan {
  int pre_days = 28;
  int duration_days = kDaysPerWeek * 2;
  double treatment_prob = 0.5;
  std::uint64_t seed = 1;
  // Eligibility: at least this many scored pre-period records.
  int min_interactions = 60;
  PolicyKind treatment = PolicyKind::kPersonalized;
  PolicyKind control = PolicyKind::kEditorial;
  bool treatment_daily_updates = true;
  bool control_daily_updates = false;
  TrainConfig train;
};

// Arm membership is a pure function of (user id, seed).
bool AssignedToTreatment(UserId user, std::uint64_t seed, double p);

struct ExperimentResult {
  LogDataset pre_period;
  LogDataset experiment;
  // Eligible users only: true for treatment.
  std::map<UserId, bool> arms;
  int experiment_first_day = 0;
  int experiment_last_day = 0;
  PolicySpec treatment_policy;
  PolicySpec control_policy;
  // Model used by the treatment policy, when it has one.
  std::shared_ptr<const OutcomeModel> model;
};

// Editorial pre-period for everyone, model training on the pre-period, then
// the experiment window with arm-specific policies in the recommended section.
// Ineligible users stay on the control policy and are not part of `arms`.
ExperimentResult RunExperiment(const World& world, const ExperimentPlan& plan);

// The editorial policy of the pre-period, scripted through the last
// experiment week.
PolicySpec PrePeriodPolicy(const World& world, const ExperimentPlan& plan);
LogDataset SimulatePrePeriod(const World& world, const ExperimentPlan& plan);

// The experiment stage alone, for a given pre-period and policies. The
// plan's daily-update flags override those of the policies.
ExperimentResult RunExperimentWith(const World& world, const ExperimentPlan& plan,
                                   LogDataset pre_period, PolicySpec treatment,
                                   PolicySpec control);

// Builds a policy of `kind` for the given weeks, training the needed model on
// `training_data` when the kind requires one.
PolicySpec BuildPolicy(const World& world, PolicyKind kind,
                       const LogDataset& training_data,
                       const TrainConfig& train, int first_week, int last_week,
                       std::shared_ptr<const OutcomeModel>* model_out = nullptr);

// Expected engagement per interaction on a fixed slate:
// sum_r p_r * mu(slate[r]) with p the normalized examination vector.
double ExpectedSlateValue(std::span<const double> mu_by_rank,
                          std::span<const double> examination);

struct PolicyValue {
  // Expected engagement per section interaction, weighting users by their
  // expected interaction counts.
  double per_interaction = 0.0;
  // Expected section engagement per user over the period.
  double per_user_total = 0.0;
  std::map<UserId, double> user_total;
};

// Exact value of `policy` over [first_day, first_day + days) for `users`,
// using the weekly-refresh slates (daily updates not applied) and the
// world's activity model without elastic usage.
PolicyValue TruePolicyValue(const World& world, const PolicySpec& policy,
                            std::span<const UserId> users, int first_day,
                            int days,
                            std::span<const double> examination = {});

}  // namespace storylab

#endif  // STORYLAB_SIMULATOR_H_
