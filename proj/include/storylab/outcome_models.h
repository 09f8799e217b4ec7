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
// Story Engagement prediction models.
//
// All three models share the sigmoid link and one flat parameter layout:
//
//   [beta0][user effects][story effects][user latents (k each)][story latents]
//
//   mean:  sigma(beta0)
//   twfe:  sigma(beta0 + user_effect + story_effect)
//   mf:    sigma(story_latent . user_latent + beta0 + user_effect + story_effect)
//
// Training minimises the squared error between the observed engagement value
// and the prediction plus an L2 penalty on the parameters touched by each
// observation, using mini-batch Adam.

#ifndef STORYLAB_OUTCOME_MODELS_H_
#define STORYLAB_OUTCOME_MODELS_H_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "storylab/common.h"
#include "storylab/interaction_log.h"

namespace storylab {

enum class ModelKind : std::uint8_t {
  kMean,
  kTwoWayFixedEffects,
  kMatrixFactorization,
};

std::string_view ModelKindToken(ModelKind kind);  // MEAN, TWFE, MF
std::optional<ModelKind> ParseModelKind(std::string_view token);

inline double Sigmoid(double x) {
  // Split form avoids overflow in exp for large |x|.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// One scorable interaction: observed engagement value for (user, story).
struct Observation {
  UserId user{};
  StoryId story{};
  double target = 0.0;
  int day = 0;
};

// Scored records as observations. Skipped rows (value 0) are kept unless
// `include_skipped` is false.
std::vector<Observation> ScorableObservations(const LogDataset& data,
                                              bool include_skipped = true);

struct Prediction {
  double value = 0.5;
  // The user or story is unknown; only the available additive terms were
  // used.
  bool cold_start = false;
};

class OutcomeModel {
 public:
  OutcomeModel() = default;
  // `users`/`stories` must be free of duplicates. Mean models ignore them.
  OutcomeModel(ModelKind kind, int k, std::vector<UserId> users,
               std::vector<StoryId> stories);

  ModelKind kind() const { return kind_; }
  int k() const { return k_; }
  const std::vector<UserId>& users() const { return users_; }
  const std::vector<StoryId>& stories() const { return stories_; }

  std::optional<std::size_t> UserIndex(UserId id) const;
  std::optional<std::size_t> StoryIndex(StoryId id) const;

  // Offsets into the flat parameter vector.
  std::size_t UserEffectOffset(std::size_t u) const { return 1 + u; }
  std::size_t StoryEffectOffset(std::size_t s) const {
    return 1 + users_.size() + s;
  }
  std::size_t UserLatentOffset(std::size_t u) const {
    return 1 + users_.size() + stories_.size() + u * k_;
  }
  std::size_t StoryLatentOffset(std::size_t s) const {
    return 1 + users_.size() + stories_.size() + users_.size() * k_ + s * k_;
  }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  double beta0() const { return params_[0]; }
  void set_beta0(double v) { params_[0] = v; }
  double& user_effect(std::size_t u) { return params_[UserEffectOffset(u)]; }
  double& story_effect(std::size_t s) { return params_[StoryEffectOffset(s)]; }
  std::span<double> user_latent(std::size_t u) {
    return std::span<double>(params_).subspan(UserLatentOffset(u), k_);
  }
  std::span<double> story_latent(std::size_t s) {
    return std::span<double>(params_).subspan(StoryLatentOffset(s), k_);
  }
  double user_effect(std::size_t u) const {
    return params_[UserEffectOffset(u)];
  }
  double story_effect(std::size_t s) const {
    return params_[StoryEffectOffset(s)];
  }
  std::span<const double> user_latent(std::size_t u) const {
    return std::span<const double>(params_).subspan(UserLatentOffset(u), k_);
  }
  std::span<const double> story_latent(std::size_t s) const {
    return std::span<const double>(params_).subspan(StoryLatentOffset(s), k_);
  }

  // Linear predictor before the sigmoid.
  double Logit(UserId user, StoryId story, bool* cold_start = nullptr) const;
  Prediction PredictDetailed(UserId user, StoryId story) const;
  double Predict(UserId user, StoryId story) const {
    return PredictDetailed(user, story).value;
  }

  // Training provenance, persisted with the model.
  double l2 = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t data_fingerprint = 0;

  bool operator==(const OutcomeModel& other) const;

 private:
  ModelKind kind_ = ModelKind::kMean;
  int k_ = 0;
  std::vector<UserId> users_;
  std::vector<StoryId> stories_;
  std::unordered_map<UserId, std::size_t> user_index_;
  std::unordered_map<StoryId, std::size_t> story_index_;
  std::vector<double> params_ = std::vector<double>(1, 0.0);
};

// Gradient over the flat parameter vector; entries are (offset, value).
struct SparseGradient {
  std::vector<std::pair<std::size_t, double>> entries;
};

// Per-observation loss: (target - prediction)^2 + l2 * |touched params|^2.
double ObservationLoss(const OutcomeModel& model, const Observation& obs,
                       double l2);
SparseGradient Gradient(const OutcomeModel& model, const Observation& obs,
                        double l2);

double EvaluateMse(const OutcomeModel& model,
                   std::span<const Observation> observations);
// Mean squared error over scored records (Skipped included). Throws
// Error(kNoScorableRecords) when there is nothing to score.
double EvaluateMse(const OutcomeModel& model, const LogDataset& data);

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 50;
  int batch_size = 256;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<double> l2_grid{1e-5, 1e-4, 1e-3};
  std::vector<int> k_grid{4, 8, 16};
  std::uint64_t seed = 42;
  int early_stop_patience = 5;
  bool include_skipped = true;
};

enum class SplitMode : std::uint8_t { kRandom, kTemporalThenRandom };

struct SplitSpec {
  double train_frac = 0.8;
  double validation_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 7;
  SplitMode mode = SplitMode::kRandom;
  // kTemporalThenRandom: observations on or after this day form the test set;
  // earlier ones are split at random between train and validation.
  int temporal_cut_day = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

SplitIndices SplitObservations(std::span<const Observation> observations,
                               const SplitSpec& split);

struct CandidateResult {
  int k = 0;
  double l2 = 0.0;
  double validation_mse = 0.0;
  double test_mse = 0.0;
  int best_epoch = 0;
};

struct TuningReport {
  ModelKind kind = ModelKind::kMean;
  std::vector<CandidateResult> candidates;
  std::size_t selected = 0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;

  const CandidateResult& best() const { return candidates[selected]; }
};

struct TrainResult {
  // Winning hyperparameters refit on every observation.
  OutcomeModel model;
  // The winning candidate as fit on the train split only; use it for
  // held-out scoring.
  OutcomeModel tuned_model;
  TuningReport report;
  SplitIndices split;
};

// Grid search on the train split scored on the validation split, then a refit
// of the winner on every observation.
TrainResult Train(ModelKind kind, const LogDataset& data,
                  const TrainConfig& config, const SplitSpec& split = {});
TrainResult Train(ModelKind kind, std::span<const Observation> observations,
                  const TrainConfig& config, const SplitSpec& split = {});

struct FitOutcome {
  OutcomeModel model;
  int best_epoch = 0;
  double best_validation_mse = 0.0;
};

// Fits one hyperparameter setting. With a validation set, training stops
// after `early_stop_patience` epochs without improvement and the best epoch's
// parameters are returned; without one, exactly `epochs` epochs run.
FitOutcome FitModel(ModelKind kind, int k, double l2,
                    const std::vector<UserId>& users,
                    const std::vector<StoryId>& stories,
                    std::span<const Observation> train,
                    std::span<const Observation> validation,
                    const TrainConfig& config, int epochs);

struct HistoryFilter {
  int min_user_interactions = 0;
  int min_story_interactions = 0;
};

// Keeps records of users and stories that meet both minima, counted once on
// the input (no iteration to a fixed point).
LogDataset ApplyHistoryFilter(const LogDataset& data,
                              const HistoryFilter& filter);

struct ThresholdGridResult {
  std::vector<int> user_thresholds;
  std::vector<int> story_thresholds;
  // [user threshold][story threshold]; empty optional marks an empty cell.
  std::vector<std::vector<std::optional<double>>> mse;
  std::vector<std::vector<std::size_t>> cell_sizes;
  TuningReport training;
};

// Trains once on the loosest filter and scores the held-out test split
// restricted to each cell of the threshold grid.
ThresholdGridResult ThresholdGrid(const LogDataset& data,
                                  const std::vector<int>& user_thresholds,
                                  const std::vector<int>& story_thresholds,
                                  const TrainConfig& config,
                                  const SplitSpec& split = {},
                                  ModelKind kind = ModelKind::kMatrixFactorization);

struct Eligibility {
  std::vector<UserId> users;
  std::vector<StoryId> stories;
};

// Users and stories with at least `min_interactions` scored records
// (inclusive), each counted independently on the raw dataset.
Eligibility ComputeEligibility(const LogDataset& data, int min_interactions = 60);

inline constexpr int kModelFormatVersion = 1;

void SaveModel(const OutcomeModel& model, std::ostream& out);
OutcomeModel LoadModel(std::istream& in);
void SaveModelFile(const OutcomeModel& model, const std::filesystem::path& path);
OutcomeModel LoadModelFile(const std::filesystem::path& path);

}  // namespace storylab

#endif  // STORYLAB_OUTCOME_MODELS_H_
