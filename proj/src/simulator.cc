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
#include "storylab/simulator.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace storylab {

namespace {

constexpr const char* kTags[] = {"animals", "adventure", "science",
                                 "fables",  "history",   "sports"};

double Uniform(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double DrawBeta(std::mt19937_64& rng, double mean, double concentration) {
  if (mean <= 0.0 || mean >= 1.0) return mean;
  std::gamma_distribution<double> a(mean * concentration, 1.0);
  std::gamma_distribution<double> b((1.0 - mean) * concentration, 1.0);
  double x = a(rng), y = b(rng);
  return x / (x + y);
}

// Marks round(share * n) entries of a random permutation as niche.
std::vector<Segment> DrawSegments(int n, double share, std::mt19937_64& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int n_niche = static_cast<int>(std::lround(share * n));
  std::vector<Segment> out(n, Segment::kMainstream);
  for (int i = 0; i < n_niche; ++i) out[order[i]] = Segment::kNiche;
  return out;
}

double Sign(Segment s) { return s == Segment::kMainstream ? 1.0 : -1.0; }

}  // namespace

std::vector<double> DefaultExamination() {
  std::vector<double> e(kMaxSlateRank);
  for (int r = 0; r < kMaxSlateRank; ++r) e[r] = 0.55 * std::pow(0.82, r);
  return e;
}

void ValidateWorldConfig(const WorldConfig& c) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, "world config: " + what);
  };
  if (c.n_users < 1 || c.n_stories < 1 || c.n_grades < 1) fail("sizes must be positive");
  if (c.latent_dim < 1) fail("latent_dim must be at least 1");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(c.niche_user_share) || !unit(c.niche_story_share)) fail("segment shares must lie in [0, 1]");
  if (!unit(c.active_day_prob)) fail("active_day_prob must lie in [0, 1]");
  if (c.active_day_concentration <= 0.0) fail("active_day_concentration must be positive");
  if (c.session_rate_median < 0.0 || c.other_rate_median < 0.0) fail("rates must be non-negative");
  if (c.session_rate_log_sd < 0.0 || c.other_rate_log_sd < 0.0) fail("log sds must be non-negative");
  if (c.slate_size < 1 || c.slate_size > kMaxSlateRank) fail("slate_size must lie in 1..15");
  if (!(c.editorial_pool_fraction > 0.0 && c.editorial_pool_fraction <= 1.0)) {
    fail("editorial_pool_fraction must lie in (0, 1]");
  }
  if (c.elastic_strength < 0.0 || c.elastic_max_extra < 0) fail("elastic parameters must be non-negative");
  if (!c.examination.empty()) {
    if (c.examination.size() != static_cast<std::size_t>(kMaxSlateRank)) {
      fail("examination needs 15 entries");
    }
    for (double e : c.examination) {
      if (!unit(e)) fail("examination probabilities must lie in [0, 1]");
    }
  }
}

double GroundTruth::Logit(std::size_t user, std::size_t story) const {
  return intercept + user_effect[user] + story_effect[story] +
         user_latent.row(user).dot(story_latent.row(story));
}

double ActivityModel::ExpectedSectionInteractionsPerDay(std::size_t user) const {
  double per_session = std::accumulate(examination.begin(), examination.end(), 0.0);
  return active_prob[user] * session_rate[user] * per_session;
}

World MakeWorld(const WorldConfig& config, std::uint64_t seed) {
  ValidateWorldConfig(config);
  World w;
  w.config = config;
  w.seed = seed;
  std::mt19937_64 rng(StageSeed(seed, "world"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = config.n_users, m = config.n_stories, k = config.latent_dim;

  GroundTruth& t = w.truth;
  t.intercept = config.intercept;
  t.user_segment = DrawSegments(n, config.niche_user_share, rng);
  t.story_segment = DrawSegments(m, config.niche_story_share, rng);
  t.user_effect.resize(n);
  t.story_effect.resize(m);
  t.user_latent.resize(n, k);
  t.story_latent.resize(m, k);
  for (int i = 0; i < n; ++i) {
    t.user_effect[i] = config.user_effect_sd * normal(rng);
    for (int d = 0; d < k; ++d) t.user_latent(i, d) = config.latent_noise * normal(rng);
    t.user_latent(i, 0) += config.latent_scale * Sign(t.user_segment[i]);
  }
  for (int j = 0; j < m; ++j) {
    double shift = 0.5 * config.popularity_gap * Sign(t.story_segment[j]);
    t.story_effect[j] = shift + config.story_effect_sd * normal(rng);
    for (int d = 0; d < k; ++d) t.story_latent(j, d) = config.latent_noise * normal(rng);
    t.story_latent(j, 0) += config.latent_scale * Sign(t.story_segment[j]);
  }

  ActivityModel& a = w.activity;
  a.examination = config.examination.empty() ? DefaultExamination() : config.examination;
  a.examination.resize(config.slate_size);
  std::lognormal_distribution<double> sessions(std::log(config.session_rate_median),
                                               config.session_rate_log_sd);
  std::lognormal_distribution<double> other(std::log(std::max(config.other_rate_median, 1e-300)),
                                            config.other_rate_log_sd);
  for (int i = 0; i < n; ++i) {
    a.active_prob.push_back(DrawBeta(rng, config.active_day_prob,
                                     config.active_day_concentration));
    a.session_rate.push_back(config.session_rate_median > 0 ? sessions(rng) : 0.0);
    a.other_rate.push_back(config.other_rate_median > 0 ? other(rng) : 0.0);
  }

  std::discrete_distribution<int> channel({0.3, 0.5, 0.2});
  for (int i = 0; i < n; ++i) {
    UserProfile u;
    u.id = UserId{static_cast<std::uint32_t>(i)};
    u.grade = 1 + static_cast<int>(rng() % config.n_grades);
    u.channel = static_cast<Channel>(channel(rng));
    u.registration_day = -static_cast<int>(rng() % 120);
    w.users.emplace(u.id, u);
    w.user_ids.push_back(u.id);
  }
  for (int j = 0; j < m; ++j) {
    StoryMeta s;
    s.id = StoryId{static_cast<std::uint32_t>(j)};
    s.collection_tag = kTags[rng() % std::size(kTags)];
    s.minutes_lo = 1 + static_cast<double>(rng() % 6);
    s.minutes_hi = s.minutes_lo + static_cast<double>(rng() % 5);
    w.stories.emplace(s.id, s);
    w.story_ids.push_back(s.id);
  }
  return w;
}

EditorialScript World::MakeEditorialScript(int first_week, int last_week) const {
  const int m = config.n_stories;
  std::vector<double> appeal(m, 0.0);
  int n_main = 0;
  for (std::size_t i = 0; i < user_ids.size(); ++i) {
    if (truth.user_segment[i] != Segment::kMainstream) continue;
    ++n_main;
    for (int j = 0; j < m; ++j) appeal[j] += truth.Mu(i, j);
  }
  for (double& v : appeal) v /= std::max(n_main, 1);

  const int pool = std::max(1, static_cast<int>(std::ceil(config.editorial_pool_fraction * m - 1e-9)));
  EditorialScript script;
  for (int g = 1; g <= config.n_grades; ++g) {
    std::mt19937_64 rng(HashCombine(StageSeed(seed, "editorial"), g));
    std::normal_distribution<double> noise(0.0, config.editorial_noise);
    std::vector<std::pair<double, int>> scored;
    for (int j = 0; j < m; ++j) scored.emplace_back(appeal[j] + noise(rng), j);
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    for (int week = first_week; week <= last_week; ++week) {
      long offset = (static_cast<long>(week) * config.slate_size +
                     static_cast<long>(g) * config.editorial_grade_stride) % pool;
      if (offset < 0) offset += pool;
      std::vector<StoryId> order;
      order.reserve(m);
      for (int r = 0; r < pool; ++r) {
        order.push_back(StoryId{static_cast<std::uint32_t>(scored[(offset + r) % pool].second)});
      }
      for (int r = pool; r < m; ++r) {
        order.push_back(StoryId{static_cast<std::uint32_t>(scored[r].second)});
      }
      script.emplace(std::make_pair(g, week), std::move(order));
    }
  }
  return script;
}

double CascadeLevel(double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) {
    throw Error(ErrorCode::kConfig, "expected engagement outside [0, 1]");
  }
  if (mu == 0.0 || mu == 1.0) return mu;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    double g = 0.5 * (lo + hi);
    double f = ((0.5 * g + 0.2) * g + 0.3) * g;
    (f < mu ? lo : hi) = g;
  }
  return 0.5 * (lo + hi);
}

OutcomeProbabilities CascadeProbabilities(double mu) {
  double g = CascadeLevel(mu);
  OutcomeProbabilities p;
  p.skipped = 1.0 - g;
  p.viewed = g * (1.0 - g);
  p.started = g * g * (1.0 - g);
  p.completed = g * g * g;
  return p;
}

OutcomeKind DrawOutcome(double mu, std::mt19937_64& rng) {
  double g = CascadeLevel(mu);
  if (Uniform(rng) >= g) return OutcomeKind::kSkipped;
  if (Uniform(rng) >= g) return OutcomeKind::kViewed;
  if (Uniform(rng) >= g) return OutcomeKind::kStarted;
  return OutcomeKind::kCompleted;
}

LogDataset SimulatePeriod(const World& world, const PolicySpec& policy,
                          const PeriodSpec& spec,
                          std::vector<SlateDumpRow>* slate_dump) {
  PolicyAssignment all;
  for (UserId u : world.user_ids) all[u] = &policy;
  return SimulatePeriod(world, all, spec, slate_dump);
}

LogDataset SimulatePeriod(const World& world, const PolicyAssignment& policies,
                          const PeriodSpec& spec,
                          std::vector<SlateDumpRow>* slate_dump) {
  if (spec.days < 0) throw Error(ErrorCode::kConfig, "negative period length");
  const auto& examination =
      spec.examination.empty() ? world.activity.examination : spec.examination;
  const WorldConfig& cfg = world.config;
  std::vector<InteractionRecord> records;

  for (UserId id : world.user_ids) {
    auto pit = policies.find(id);
    if (pit == policies.end() || !pit->second) {
      throw Error(ErrorCode::kConfig, "no policy for user " + std::to_string(Raw(id)));
    }
    const PolicySpec& policy = *pit->second;
    const UserProfile& profile = world.users.at(id);
    const std::size_t ui = Raw(id);
    std::mt19937_64 rng(HashCombine(spec.seed, Raw(id)));
    std::bernoulli_distribution opens(world.activity.active_prob[ui]);
    std::poisson_distribution<int> n_sessions(world.activity.session_rate[ui]);
    std::poisson_distribution<int> n_other(world.activity.other_rate[ui]);
    std::discrete_distribution<int> browse;
    bool browse_ready = false;

    SlateState state;
    bool have_state = false;
    for (int day = spec.first_day; day < spec.first_day + spec.days; ++day) {
      int week = WeekOfDay(day);
      if (!have_state || week != state.week) {
        state = WeeklyRefresh(policy, profile, week, world.story_ids);
        state.slate.valid_day = day;
        have_state = true;
      }
      if (!opens(rng)) continue;
      if (slate_dump) AppendSlateRows(state, day, *slate_dump);

      DayActivity activity;
      const auto& slate = state.slate.stories;
      const std::size_t depth = std::min(slate.size(), examination.size());
      int session = 0;
      int remaining = n_sessions(rng);
      int extras = 0;
      while (remaining > 0) {
        --remaining;
        std::vector<InteractionRecord> rows;
        std::vector<bool> examined(depth, false);
        int deepest = -1;
        double engagement = 0.0;
        int interactions = 0;
        for (std::size_t r = 0; r < depth; ++r) {
          if (Uniform(rng) < examination[r]) {
            examined[r] = true;
            deepest = static_cast<int>(r);
          }
        }
        for (int r = 0; r <= deepest; ++r) {
          InteractionRecord rec;
          rec.user = id;
          rec.story = slate[r];
          rec.day = day;
          rec.session = session;
          rec.slate_rank = r + 1;
          if (examined[r]) {
            rec.outcome = DrawOutcome(world.Mu(id, slate[r]), rng);
            engagement += *rec.value();
            ++interactions;
            if (rec.outcome == OutcomeKind::kStarted ||
                rec.outcome == OutcomeKind::kCompleted) {
              activity.started.insert(rec.story);
            }
            if (rec.outcome == OutcomeKind::kCompleted) activity.completed.insert(rec.story);
          } else if (!cfg.log_not_shown) {
            continue;
          }
          records.push_back(std::move(rec));
        }
        ++session;
        if (interactions > 0) {
          activity.active = true;
          if (cfg.elastic_usage && extras < cfg.elastic_max_extra &&
              Uniform(rng) < cfg.elastic_strength * engagement / interactions) {
            ++remaining;
            ++extras;
          }
        }
      }

      if (cfg.simulate_other_section) {
        int want = std::min<int>(n_other(rng), static_cast<int>(world.story_ids.size()));
        if (want > 0 && !browse_ready) {
          std::vector<double> weights(world.story_ids.size());
          for (std::size_t j = 0; j < weights.size(); ++j) {
            weights[j] = std::exp(cfg.other_choice_temperature * world.truth.Logit(ui, j));
          }
          browse = std::discrete_distribution<int>(weights.begin(), weights.end());
          browse_ready = true;
        }
        std::set<int> chosen;
        std::vector<int> order;
        for (int guard = 0; static_cast<int>(order.size()) < want && guard < 100 * want; ++guard) {
          int j = browse(rng);
          if (chosen.insert(j).second) order.push_back(j);
        }
        for (int j : order) {
          InteractionRecord rec;
          rec.user = id;
          rec.story = world.story_ids[j];
          rec.day = day;
          rec.session = session;
          rec.section = std::string(kOtherSection);
          rec.outcome = DrawOutcome(world.truth.Mu(ui, j), rng);
          records.push_back(std::move(rec));
        }
      }

      if (policy.daily_updates && activity.active) {
        state = DailyUpdate(state, activity, day + 1);
      }
    }
  }
  return LogDataset::Create(std::move(records), world.users, world.stories);
}

bool AssignedToTreatment(UserId user, std::uint64_t seed, double p) {
  double u = static_cast<double>(Mix64(HashCombine(seed, Raw(user))) >> 11) * 0x1.0p-53;
  return u < p;
}

PolicySpec BuildPolicy(const World& world, PolicyKind kind,
                       const LogDataset& training_data,
                       const TrainConfig& train, int first_week, int last_week,
                       std::shared_ptr<const OutcomeModel>* model_out) {
  const int slate = world.config.slate_size;
  switch (kind) {
    case PolicyKind::kEditorial:
      return PolicySpec::Editorial(world.MakeEditorialScript(first_week, last_week), slate);
    case PolicyKind::kPopularity:
    case PolicyKind::kPersonalized: {
      ModelKind model_kind = kind == PolicyKind::kPopularity
                                 ? ModelKind::kTwoWayFixedEffects
                                 : ModelKind::kMatrixFactorization;
      auto trained = Train(model_kind, training_data, train);
      auto model = std::make_shared<const OutcomeModel>(std::move(trained.model));
      if (model_out) *model_out = model;
      return kind == PolicyKind::kPopularity ? PolicySpec::Popularity(model, slate)
                                             : PolicySpec::Personalized(model, slate);
    }
  }
  throw Error(ErrorCode::kConfig, "unknown policy kind");
}

namespace {

void CheckPlan(const ExperimentPlan& plan) {
  if (!(plan.treatment_prob > 0.0 && plan.treatment_prob < 1.0)) {
    throw Error(ErrorCode::kConfig, "treatment probability must lie in (0, 1)");
  }
  if (plan.pre_days < 1 || plan.duration_days < 1) {
    throw Error(ErrorCode::kConfig, "pre-period and experiment must last at least one day");
  }
}

int LastExperimentWeek(const ExperimentPlan& plan) {
  return WeekOfDay(plan.pre_days + plan.duration_days - 1);
}

}  // namespace

PolicySpec PrePeriodPolicy(const World& world, const ExperimentPlan& plan) {
  PolicySpec editorial = PolicySpec::Editorial(
      world.MakeEditorialScript(0, LastExperimentWeek(plan)), world.config.slate_size);
  editorial.daily_updates = plan.control_daily_updates;
  return editorial;
}

LogDataset SimulatePrePeriod(const World& world, const ExperimentPlan& plan) {
  CheckPlan(plan);
  return SimulatePeriod(world, PrePeriodPolicy(world, plan),
                        {0, plan.pre_days, StageSeed(plan.seed, "pre-period"), {}});
}

ExperimentResult RunExperimentWith(const World& world, const ExperimentPlan& plan,
                                   LogDataset pre_period, PolicySpec treatment,
                                   PolicySpec control) {
  CheckPlan(plan);
  ExperimentResult out;
  out.experiment_first_day = plan.pre_days;
  out.experiment_last_day = plan.pre_days + plan.duration_days - 1;
  out.pre_period = std::move(pre_period);
  out.treatment_policy = std::move(treatment);
  out.control_policy = std::move(control);
  out.model = out.treatment_policy.model;
  out.treatment_policy.daily_updates = plan.treatment_daily_updates;
  out.control_policy.daily_updates = plan.control_daily_updates;

  PolicyAssignment assignment;
  for (UserId u : world.user_ids) assignment[u] = &out.control_policy;
  for (UserId u : ComputeEligibility(out.pre_period, plan.min_interactions).users) {
    bool treated = AssignedToTreatment(u, plan.seed, plan.treatment_prob);
    out.arms[u] = treated;
    if (treated) assignment[u] = &out.treatment_policy;
  }
  out.experiment = SimulatePeriod(
      world, assignment,
      {plan.pre_days, plan.duration_days, StageSeed(plan.seed, "experiment"), {}});
  return out;
}

ExperimentResult RunExperiment(const World& world, const ExperimentPlan& plan) {
  LogDataset pre = SimulatePrePeriod(world, plan);
  TrainConfig train = plan.train;
  train.seed = StageSeed(plan.seed, "train");
  const int first_week = WeekOfDay(plan.pre_days);
  const int last_week = LastExperimentWeek(plan);
  PolicySpec treatment = BuildPolicy(world, plan.treatment, pre, train, first_week, last_week);
  PolicySpec control = plan.control == plan.treatment && plan.control != PolicyKind::kEditorial
                           ? treatment
                           : BuildPolicy(world, plan.control, pre, train, first_week, last_week);
  return RunExperimentWith(world, plan, std::move(pre), std::move(treatment), std::move(control));
}

double ExpectedSlateValue(std::span<const double> mu_by_rank,
                          std::span<const double> examination) {
  auto p = RankExposure(mu_by_rank.size(), examination);
  double v = 0.0;
  for (std::size_t r = 0; r < p.size(); ++r) v += p[r] * mu_by_rank[r];
  return v;
}

PolicyValue TruePolicyValue(const World& world, const PolicySpec& policy,
                            std::span<const UserId> users, int first_day,
                            int days, std::span<const double> examination) {
  std::span<const double> e =
      examination.empty() ? std::span<const double>(world.activity.examination) : examination;
  PolicyValue out;
  double engagement = 0.0, interactions = 0.0;
  for (UserId id : users) {
    const std::size_t ui = Raw(id);
    const UserProfile& profile = world.users.at(id);
    double rate = world.activity.active_prob[ui] * world.activity.session_rate[ui];
    double total = 0.0;
    int day = first_day;
    while (day < first_day + days) {
      int week = WeekOfDay(day);
      int next = std::min(first_day + days, (week + 1) * kDaysPerWeek);
      auto slate = WeeklyRefresh(policy, profile, week, world.story_ids).slate.stories;
      std::size_t depth = std::min(slate.size(), e.size());
      std::vector<double> mu(depth);
      for (std::size_t r = 0; r < depth; ++r) mu[r] = world.Mu(id, slate[r]);
      double per_session = std::accumulate(e.begin(), e.begin() + depth, 0.0);
      double n = (next - day) * rate * per_session;
      if (n > 0) total += n * ExpectedSlateValue(mu, e.first(depth));
      interactions += n;
      day = next;
    }
    out.user_total[id] = total;
    engagement += total;
  }
  out.per_interaction = interactions > 0 ? engagement / interactions : 0.0;
  out.per_user_total = users.empty() ? 0.0 : engagement / users.size();
  return out;
}

}  // namespace storylab
