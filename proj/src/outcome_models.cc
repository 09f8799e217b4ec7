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
#include "storylab/outcome_models.h"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "storylab/adam.h"

namespace storylab {

std::string_view ModelKindToken(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMean: return "MEAN";
    case ModelKind::kTwoWayFixedEffects: return "TWFE";
    case ModelKind::kMatrixFactorization: return "MF";
  }
  return "";
}

std::optional<ModelKind> ParseModelKind(std::string_view token) {
  std::string t(token);
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  for (auto kind : {ModelKind::kMean, ModelKind::kTwoWayFixedEffects,
                    ModelKind::kMatrixFactorization}) {
    if (ModelKindToken(kind) == t) return kind;
  }
  return std::nullopt;
}

std::vector<Observation> ScorableObservations(const LogDataset& data,
                                              bool include_skipped) {
  std::vector<Observation> out;
  out.reserve(data.records().size());
  for (const auto& r : data.records()) {
    if (!r.scored()) continue;
    if (!include_skipped && r.outcome == OutcomeKind::kSkipped) continue;
    out.push_back({r.user, r.story, *r.value(), r.day});
  }
  return out;
}

OutcomeModel::OutcomeModel(ModelKind kind, int k, std::vector<UserId> users,
                           std::vector<StoryId> stories)
    : kind_(kind) {
  if (kind == ModelKind::kMean) {
    users.clear();
    stories.clear();
  }
  k_ = kind == ModelKind::kMatrixFactorization ? std::max(k, 0) : 0;
  users_ = std::move(users);
  stories_ = std::move(stories);
  for (std::size_t i = 0; i < users_.size(); ++i) {
    if (!user_index_.emplace(users_[i], i).second) {
      throw Error(ErrorCode::kInvariant, "duplicate user in model index");
    }
  }
  for (std::size_t i = 0; i < stories_.size(); ++i) {
    if (!story_index_.emplace(stories_[i], i).second) {
      throw Error(ErrorCode::kInvariant, "duplicate story in model index");
    }
  }
  params_.assign(1 + (users_.size() + stories_.size()) * (1 + k_), 0.0);
}

std::optional<std::size_t> OutcomeModel::UserIndex(UserId id) const {
  auto it = user_index_.find(id);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> OutcomeModel::StoryIndex(StoryId id) const {
  auto it = story_index_.find(id);
  if (it == story_index_.end()) return std::nullopt;
  return it->second;
}

double OutcomeModel::Logit(UserId user, StoryId story, bool* cold_start) const {
  double s = params_[0];
  bool cold = false;
  if (kind_ != ModelKind::kMean) {
    auto u = UserIndex(user);
    auto j = StoryIndex(story);
    cold = !u || !j;
    if (u) s += user_effect(*u);
    if (j) s += story_effect(*j);
    if (u && j && k_ > 0) {
      auto x = user_latent(*u);
      auto z = story_latent(*j);
      s += std::inner_product(x.begin(), x.end(), z.begin(), 0.0);
    }
  }
  if (cold_start) *cold_start = cold;
  return s;
}

Prediction OutcomeModel::PredictDetailed(UserId user, StoryId story) const {
  Prediction p;
  p.value = Sigmoid(Logit(user, story, &p.cold_start));
  return p;
}

bool OutcomeModel::operator==(const OutcomeModel& other) const {
  return kind_ == other.kind_ && k_ == other.k_ && users_ == other.users_ &&
         stories_ == other.stories_ && params_ == other.params_ &&
         l2 == other.l2 && seed == other.seed &&
         data_fingerprint == other.data_fingerprint;
}

namespace {

// Calls emit(offset, d loss / d param) for every parameter the observation
// touches and returns the residual-squared term of the loss.
template <typename Emit>
double VisitGradient(const OutcomeModel& model, const Observation& obs,
                     double l2, Emit&& emit) {
  auto params = model.parameters();
  std::optional<std::size_t> u, j;
  if (model.kind() != ModelKind::kMean) {
    u = model.UserIndex(obs.user);
    j = model.StoryIndex(obs.story);
  }
  const bool latent = u && j && model.k() > 0;
  double s = params[0];
  if (u) s += params[model.UserEffectOffset(*u)];
  if (j) s += params[model.StoryEffectOffset(*j)];
  if (latent) {
    auto x = model.user_latent(*u);
    auto z = model.story_latent(*j);
    s += std::inner_product(x.begin(), x.end(), z.begin(), 0.0);
  }
  const double p = Sigmoid(s);
  const double residual = obs.target - p;
  const double dlogit = -2.0 * residual * p * (1.0 - p);

  emit(std::size_t{0}, dlogit + 2.0 * l2 * params[0]);
  if (u) {
    auto off = model.UserEffectOffset(*u);
    emit(off, dlogit + 2.0 * l2 * params[off]);
  }
  if (j) {
    auto off = model.StoryEffectOffset(*j);
    emit(off, dlogit + 2.0 * l2 * params[off]);
  }
  if (latent) {
    auto uoff = model.UserLatentOffset(*u);
    auto soff = model.StoryLatentOffset(*j);
    for (int d = 0; d < model.k(); ++d) {
      emit(uoff + d, dlogit * params[soff + d] + 2.0 * l2 * params[uoff + d]);
      emit(soff + d, dlogit * params[uoff + d] + 2.0 * l2 * params[soff + d]);
    }
  }
  return residual * residual;
}

}  // namespace

double ObservationLoss(const OutcomeModel& model, const Observation& obs,
                       double l2) {
  auto params = model.parameters();
  double penalty = 0.0;
  double sq = VisitGradient(model, obs, l2, [&](std::size_t off, double) {
    penalty += params[off] * params[off];
  });
  return sq + l2 * penalty;
}

SparseGradient Gradient(const OutcomeModel& model, const Observation& obs,
                        double l2) {
  SparseGradient g;
  VisitGradient(model, obs, l2, [&](std::size_t off, double v) {
    g.entries.emplace_back(off, v);
  });
  return g;
}

double EvaluateMse(const OutcomeModel& model,
                   std::span<const Observation> observations) {
  if (observations.empty()) {
    throw Error(ErrorCode::kNoScorableRecords, "no observations to score");
  }
  double sum = 0.0;
  for (const auto& o : observations) {
    double r = o.target - model.Predict(o.user, o.story);
    sum += r * r;
  }
  return sum / static_cast<double>(observations.size());
}

double EvaluateMse(const OutcomeModel& model, const LogDataset& data) {
  auto obs = ScorableObservations(data, true);
  return EvaluateMse(model, obs);
}

SplitIndices SplitObservations(std::span<const Observation> observations,
                               const SplitSpec& split) {
  if (split.train_frac <= 0 || split.validation_frac < 0 ||
      split.test_frac < 0 ||
      std::abs(split.train_frac + split.validation_frac + split.test_frac -
               1.0) > 1e-9) {
    throw Error(ErrorCode::kConfig, "split fractions must be positive and sum to 1");
  }
  std::mt19937_64 rng(StageSeed(split.seed, "split"));
  SplitIndices out;
  std::vector<std::size_t> pool;
  if (split.mode == SplitMode::kRandom) {
    pool.resize(observations.size());
    std::iota(pool.begin(), pool.end(), 0);
  } else {
    for (std::size_t i = 0; i < observations.size(); ++i) {
      if (observations[i].day >= split.temporal_cut_day) {
        out.test.push_back(i);
      } else {
        pool.push_back(i);
      }
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  const double n = static_cast<double>(pool.size());
  std::size_t n_train, n_val;
  if (split.mode == SplitMode::kRandom) {
    n_train = static_cast<std::size_t>(std::llround(split.train_frac * n));
    n_val = static_cast<std::size_t>(std::llround(split.validation_frac * n));
  } else {
    double share = split.train_frac / (split.train_frac + split.validation_frac);
    n_train = static_cast<std::size_t>(std::llround(share * n));
    n_val = pool.size() - n_train;
  }
  n_train = std::min(n_train, pool.size());
  n_val = std::min(n_val, pool.size() - n_train);
  out.train.assign(pool.begin(), pool.begin() + n_train);
  out.validation.assign(pool.begin() + n_train, pool.begin() + n_train + n_val);
  if (split.mode == SplitMode::kRandom) {
    out.test.assign(pool.begin() + n_train + n_val, pool.end());
  }
  for (auto* v : {&out.train, &out.validation, &out.test}) {
    std::sort(v->begin(), v->end());
  }
  return out;
}

FitOutcome FitModel(ModelKind kind, int k, double l2,
                    const std::vector<UserId>& users,
                    const std::vector<StoryId>& stories,
                    std::span<const Observation> train,
                    std::span<const Observation> validation,
                    const TrainConfig& config, int epochs) {
  if (train.empty()) {
    throw Error(ErrorCode::kEmptyTrainSplit, "no training observations");
  }
  OutcomeModel model(kind, k, users, stories);
  model.l2 = l2;
  model.seed = config.seed;
  if (model.k() > 0) {
    std::mt19937_64 init_rng(StageSeed(config.seed, "init"));
    std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(model.k()));
    auto params = model.parameters();
    for (std::size_t i = model.UserLatentOffset(0); i < params.size(); ++i) {
      params[i] = normal(init_rng);
    }
  }

  AdamParameters adam_params{config.learning_rate, config.adam_beta1,
                             config.adam_beta2, config.adam_eps};
  auto params = model.parameters();
  SparseAdam adam(params.size(), adam_params);
  std::vector<double> grad(params.size(), 0.0);
  std::vector<char> touched_flag(params.size(), 0);
  std::vector<std::size_t> touched;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(StageSeed(config.seed, "shuffle"));

  FitOutcome out;
  out.best_validation_mse = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  int since_best = 0;
  const std::size_t batch = static_cast<std::size_t>(std::max(config.batch_size, 1));

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        epoch_loss += VisitGradient(model, train[order[b]], l2,
                                    [&](std::size_t off, double g) {
                                      if (!touched_flag[off]) {
                                        touched_flag[off] = 1;
                                        touched.push_back(off);
                                      }
                                      grad[off] += g * scale;
                                    });
      }
      adam.BeginStep();
      for (auto off : touched) {
        adam.Update(off, grad[off], params[off]);
        grad[off] = 0.0;
        touched_flag[off] = 0;
      }
      touched.clear();
    }
    if (!std::isfinite(epoch_loss) ||
        !std::all_of(params.begin(), params.end(),
                     [](double v) { return std::isfinite(v); })) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "training diverged at epoch " + std::to_string(epoch));
    }
    if (validation.empty()) {
      out.best_epoch = epoch;
      continue;
    }
    double val = EvaluateMse(model, validation);
    if (val < out.best_validation_mse) {
      out.best_validation_mse = val;
      out.best_epoch = epoch;
      best_params.assign(params.begin(), params.end());
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  if (!best_params.empty()) {
    std::copy(best_params.begin(), best_params.end(), params.begin());
  }
  if (validation.empty()) out.best_validation_mse = EvaluateMse(model, train);
  out.model = std::move(model);
  return out;
}

namespace {

std::vector<Observation> Gather(std::span<const Observation> obs,
                                const std::vector<std::size_t>& idx) {
  std::vector<Observation> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(obs[i]);
  return out;
}

}  // namespace

TrainResult Train(ModelKind kind, std::span<const Observation> observations,
                  const TrainConfig& config, const SplitSpec& split) {
  if (observations.empty()) {
    throw Error(ErrorCode::kEmptyTrainSplit, "no scorable observations");
  }
  if (config.l2_grid.empty() ||
      (kind == ModelKind::kMatrixFactorization && config.k_grid.empty())) {
    throw Error(ErrorCode::kConfig, "hyperparameter grids must be non-empty");
  }
  std::set<UserId> user_set;
  std::set<StoryId> story_set;
  for (const auto& o : observations) {
    user_set.insert(o.user);
    story_set.insert(o.story);
  }
  std::vector<UserId> users(user_set.begin(), user_set.end());
  std::vector<StoryId> stories(story_set.begin(), story_set.end());

  TrainResult result;
  result.split = SplitObservations(observations, split);
  auto train = Gather(observations, result.split.train);
  auto validation = Gather(observations, result.split.validation);
  auto test = Gather(observations, result.split.test);
  if (train.empty()) {
    throw Error(ErrorCode::kEmptyTrainSplit, "train split is empty");
  }

  TuningReport& report = result.report;
  report.kind = kind;
  report.n_train = train.size();
  report.n_validation = validation.size();
  report.n_test = test.size();
  std::vector<int> ks = kind == ModelKind::kMatrixFactorization
                            ? config.k_grid
                            : std::vector<int>{0};
  double best = std::numeric_limits<double>::infinity();
  for (int k : ks) {
    for (double l2 : config.l2_grid) {
      auto fit = FitModel(kind, k, l2, users, stories, train, validation,
                          config, config.epochs);
      CandidateResult c;
      c.k = k;
      c.l2 = l2;
      c.validation_mse = fit.best_validation_mse;
      c.test_mse = test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                : EvaluateMse(fit.model, test);
      c.best_epoch = fit.best_epoch;
      if (c.validation_mse < best) {
        best = c.validation_mse;
        report.selected = report.candidates.size();
        result.tuned_model = std::move(fit.model);
      }
      report.candidates.push_back(c);
    }
  }
  const auto& win = report.best();
  auto refit = FitModel(kind, win.k, win.l2, users, stories, observations, {},
                        config, std::max(win.best_epoch, 1));
  result.model = std::move(refit.model);
  return result;
}

TrainResult Train(ModelKind kind, const LogDataset& data,
                  const TrainConfig& config, const SplitSpec& split) {
  auto obs = ScorableObservations(data, config.include_skipped);
  auto result = Train(kind, obs, config, split);
  result.model.data_fingerprint = Fingerprint(data);
  result.tuned_model.data_fingerprint = result.model.data_fingerprint;
  return result;
}

LogDataset ApplyHistoryFilter(const LogDataset& data,
                              const HistoryFilter& filter) {
  auto counts = CountInteractions(data);
  auto user_ok = [&](UserId id) {
    auto it = counts.per_user.find(id);
    int n = it == counts.per_user.end() ? 0 : it->second;
    return n >= filter.min_user_interactions;
  };
  auto story_ok = [&](StoryId id) {
    auto it = counts.per_story.find(id);
    int n = it == counts.per_story.end() ? 0 : it->second;
    return n >= filter.min_story_interactions;
  };
  std::vector<InteractionRecord> records;
  for (const auto& r : data.records()) {
    if (user_ok(r.user) && story_ok(r.story)) records.push_back(r);
  }
  std::map<UserId, UserProfile> users;
  for (const auto& [id, p] : data.users()) {
    if (user_ok(id)) users.emplace(id, p);
  }
  std::map<StoryId, StoryMeta> stories;
  for (const auto& [id, m] : data.stories()) {
    if (story_ok(id)) stories.emplace(id, m);
  }
  return LogDataset::Create(std::move(records), std::move(users),
                            std::move(stories));
}

ThresholdGridResult ThresholdGrid(const LogDataset& data,
                                  const std::vector<int>& user_thresholds,
                                  const std::vector<int>& story_thresholds,
                                  const TrainConfig& config,
                                  const SplitSpec& split, ModelKind kind) {
  if (user_thresholds.empty() || story_thresholds.empty() ||
      !std::is_sorted(user_thresholds.begin(), user_thresholds.end()) ||
      !std::is_sorted(story_thresholds.begin(), story_thresholds.end())) {
    throw Error(ErrorCode::kConfig, "thresholds must be non-empty and ascending");
  }
  auto counts = CountInteractions(data);
  auto loosest = ApplyHistoryFilter(
      data, {user_thresholds.front(), story_thresholds.front()});
  auto obs = ScorableObservations(loosest, config.include_skipped);
  auto trained = Train(kind, obs, config, split);

  ThresholdGridResult out;
  out.user_thresholds = user_thresholds;
  out.story_thresholds = story_thresholds;
  out.training = trained.report;
  for (int ut : user_thresholds) {
    std::vector<std::optional<double>> row;
    std::vector<std::size_t> sizes;
    for (int st : story_thresholds) {
      std::vector<Observation> cell;
      for (auto i : trained.split.test) {
        const auto& o = obs[i];
        if (counts.per_user[o.user] >= ut && counts.per_story[o.story] >= st) {
          cell.push_back(o);
        }
      }
      sizes.push_back(cell.size());
      if (cell.empty()) {
        row.push_back(std::nullopt);
      } else {
        row.push_back(EvaluateMse(trained.tuned_model, cell));
      }
    }
    out.mse.push_back(std::move(row));
    out.cell_sizes.push_back(std::move(sizes));
  }
  return out;
}

Eligibility ComputeEligibility(const LogDataset& data, int min_interactions) {
  auto counts = CountInteractions(data);
  Eligibility out;
  for (const auto& [id, _] : data.users()) {
    auto it = counts.per_user.find(id);
    int n = it == counts.per_user.end() ? 0 : it->second;
    if (n >= min_interactions) out.users.push_back(id);
  }
  for (const auto& [id, _] : data.stories()) {
    auto it = counts.per_story.find(id);
    int n = it == counts.per_story.end() ? 0 : it->second;
    if (n >= min_interactions) out.stories.push_back(id);
  }
  return out;
}

// Model file, text, one record per line:
//
//   STORYLAB-MODEL <version>
//   kind <MEAN|TWFE|MF>
//   k <int>
//   l2 <hex float>
//   seed <uint64>
//   fingerprint <16 hex digits>
//   users <count>
//   stories <count>
//   beta0 <hex float>
//   U <user_id> <user_effect> <latent_1> ... <latent_k>      (users rows)
//   S <story_id> <story_effect> <latent_1> ... <latent_k>    (stories rows)
//   END
//
// Reals are C99 hexadecimal floats so the round trip is exact.

namespace {

std::string Hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

[[noreturn]] void Corrupt(const std::string& why) {
  throw Error(ErrorCode::kCorruptFile, why);
}

double ReadReal(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) Corrupt("unexpected end of file");
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) Corrupt("malformed real '" + tok + "'");
  return v;
}

void Expect(std::istream& in, const std::string& key) {
  std::string tok;
  if (!(in >> tok)) Corrupt("unexpected end of file, wanted '" + key + "'");
  if (tok != key) Corrupt("expected '" + key + "', got '" + tok + "'");
}

}  // namespace

void SaveModel(const OutcomeModel& model, std::ostream& out) {
  char fp[32];
  std::snprintf(fp, sizeof(fp), "%016" PRIx64, model.data_fingerprint);
  out << "STORYLAB-MODEL " << kModelFormatVersion << '\n'
      << "kind " << ModelKindToken(model.kind()) << '\n'
      << "k " << model.k() << '\n'
      << "l2 " << Hex(model.l2) << '\n'
      << "seed " << model.seed << '\n'
      << "fingerprint " << fp << '\n'
      << "users " << model.users().size() << '\n'
      << "stories " << model.stories().size() << '\n'
      << "beta0 " << Hex(model.beta0()) << '\n';
  for (std::size_t u = 0; u < model.users().size(); ++u) {
    out << "U " << Raw(model.users()[u]) << ' ' << Hex(model.user_effect(u));
    for (double v : model.user_latent(u)) out << ' ' << Hex(v);
    out << '\n';
  }
  for (std::size_t s = 0; s < model.stories().size(); ++s) {
    out << "S " << Raw(model.stories()[s]) << ' ' << Hex(model.story_effect(s));
    for (double v : model.story_latent(s)) out << ' ' << Hex(v);
    out << '\n';
  }
  out << "END\n";
}

OutcomeModel LoadModel(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic) || magic != "STORYLAB-MODEL") Corrupt("missing magic");
  if (!(in >> version)) Corrupt("missing format version");
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "model format version " + std::to_string(version));
  }
  std::string kind_token, fp_token;
  int k = 0;
  std::uint64_t seed = 0;
  std::size_t n_users = 0, n_stories = 0;
  Expect(in, "kind");
  if (!(in >> kind_token)) Corrupt("missing kind");
  auto kind = ParseModelKind(kind_token);
  if (!kind) Corrupt("unknown model kind " + kind_token);
  Expect(in, "k");
  if (!(in >> k) || k < 0) Corrupt("bad k");
  Expect(in, "l2");
  double l2 = ReadReal(in);
  Expect(in, "seed");
  if (!(in >> seed)) Corrupt("bad seed");
  Expect(in, "fingerprint");
  if (!(in >> fp_token)) Corrupt("bad fingerprint");
  Expect(in, "users");
  if (!(in >> n_users)) Corrupt("bad user count");
  Expect(in, "stories");
  if (!(in >> n_stories)) Corrupt("bad story count");
  Expect(in, "beta0");
  double beta0 = ReadReal(in);
  std::string rest;
  std::getline(in, rest);

  struct Row {
    std::uint32_t id;
    std::vector<double> values;
  };
  auto read_rows = [&](char tag, std::size_t count) {
    std::vector<Row> rows;
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) Corrupt("truncated parameter block");
      std::istringstream ls(line);
      std::string t;
      Row row{};
      if (!(ls >> t) || t.size() != 1 || t[0] != tag || !(ls >> row.id)) {
        Corrupt(std::string("expected row tagged ") + tag);
      }
      while (ls >> t) {
        char* end = nullptr;
        row.values.push_back(std::strtod(t.c_str(), &end));
        if (end != t.c_str() + t.size()) Corrupt("malformed real '" + t + "'");
      }
      if (row.values.size() != static_cast<std::size_t>(1 + k)) {
        throw Error(ErrorCode::kVersionMismatch,
                    "row carries " + std::to_string(row.values.size() - 1) +
                        " latents but header declares k=" + std::to_string(k));
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };
  auto user_rows = read_rows('U', n_users);
  auto story_rows = read_rows('S', n_stories);
  std::string end_tag;
  if (!(in >> end_tag) || end_tag != "END") Corrupt("missing END marker");

  std::vector<UserId> users;
  for (const auto& r : user_rows) users.push_back(UserId{r.id});
  std::vector<StoryId> stories;
  for (const auto& r : story_rows) stories.push_back(StoryId{r.id});
  if (*kind != ModelKind::kMatrixFactorization && k != 0) {
    throw Error(ErrorCode::kVersionMismatch, "non-MF model with k > 0");
  }
  OutcomeModel model(*kind, k, users, stories);
  if (model.k() != k) {
    throw Error(ErrorCode::kVersionMismatch, "k does not match model kind");
  }
  model.set_beta0(beta0);
  for (std::size_t u = 0; u < user_rows.size(); ++u) {
    model.user_effect(u) = user_rows[u].values[0];
    auto lat = model.user_latent(u);
    std::copy(user_rows[u].values.begin() + 1, user_rows[u].values.end(),
              lat.begin());
  }
  for (std::size_t s = 0; s < story_rows.size(); ++s) {
    model.story_effect(s) = story_rows[s].values[0];
    auto lat = model.story_latent(s);
    std::copy(story_rows[s].values.begin() + 1, story_rows[s].values.end(),
              lat.begin());
  }
  model.l2 = l2;
  model.seed = seed;
  model.data_fingerprint = std::strtoull(fp_token.c_str(), nullptr, 16);
  return model;
}

void SaveModelFile(const OutcomeModel& model,
                   const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  SaveModel(model, out);
}

OutcomeModel LoadModelFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return LoadModel(in);
}

}  // namespace storylab
