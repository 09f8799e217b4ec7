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
#include "storylab/policy_engine.h"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gtest/gtest.h"

namespace storylab {
namespace {

std::vector<StoryId> Ids(int first, int n) {
  std::vector<StoryId> v;
  for (int i = 0; i < n; ++i) v.push_back(StoryId{static_cast<std::uint32_t>(first + i)});
  return v;
}

UserProfile User(std::uint32_t id, int grade = 2) {
  UserProfile u;
  u.id = UserId{id};
  u.grade = grade;
  return u;
}

// A model whose scores are fixed by hand: story j has effect `effects[j]`.
std::shared_ptr<OutcomeModel> EffectModel(ModelKind kind,
                                          const std::vector<double>& effects,
                                          int n_users = 3) {
  std::vector<UserId> users;
  for (int i = 0; i < n_users; ++i) users.push_back(UserId{static_cast<std::uint32_t>(i)});
  auto m = std::make_shared<OutcomeModel>(kind, kind == ModelKind::kMatrixFactorization ? 1 : 0,
                                          users, Ids(0, static_cast<int>(effects.size())));
  for (std::size_t j = 0; j < effects.size(); ++j) m->story_effect(j) = effects[j];
  return m;
}

// Identity editorial script: stories in ascending id order.
PolicySpec IdentityEditorial(int n_stories, int slate_size = 15) {
  EditorialScript script;
  for (int w = 0; w < 4; ++w) script[{2, w}] = Ids(0, n_stories);
  return PolicySpec::Editorial(script, slate_size);
}

TEST(RankStoriesTest, TiesBreakByAscendingId) {
  auto policy = PolicySpec::Personalized(EffectModel(ModelKind::kMatrixFactorization,
                                                     std::vector<double>(6, 0.4)));
  std::vector<StoryId> cands{StoryId{5}, StoryId{2}, StoryId{0}, StoryId{4}};
  auto ranking = RankStories(policy, User(0), 0, cands);
  EXPECT_EQ(ranking, (std::vector<StoryId>{StoryId{0}, StoryId{2}, StoryId{4}, StoryId{5}}));
}

TEST(RankStoriesTest, SortsByPredictionDescending) {
  auto policy = PolicySpec::Personalized(
      EffectModel(ModelKind::kMatrixFactorization, {0.1, 0.9, -2.0, 0.5}));
  auto ranking = RankStories(policy, User(1), 0, Ids(0, 4));
  EXPECT_EQ(ranking, (std::vector<StoryId>{StoryId{1}, StoryId{3}, StoryId{0}, StoryId{2}}));
}

TEST(RankStoriesTest, PopularityOrderIgnoresUser) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> effects(40);
  for (auto& e : effects) e = n(rng);
  auto model = EffectModel(ModelKind::kTwoWayFixedEffects, effects, 20);
  for (int u = 0; u < 20; ++u) model->user_effect(u) = 5 * n(rng);
  auto policy = PolicySpec::Popularity(model);
  auto reference = RankStories(policy, User(0), 0, Ids(0, 40));
  for (std::uint32_t u = 1; u < 25; ++u) {
    EXPECT_EQ(RankStories(policy, User(u), 0, Ids(0, 40)), reference);
  }
  // Matches the order of the story effects.
  std::vector<int> idx(40);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return effects[a] > effects[b]; });
  for (int r = 0; r < 40; ++r) EXPECT_EQ(Raw(reference[r]), static_cast<std::uint32_t>(idx[r]));
}

TEST(RankStoriesTest, OpposedSegmentsGetDifferentTopStory) {
  // Two user groups with opposite latent signs; stories 0..4 carry positive,
  // 5..9 negative latent loadings. Popularity favours 0..4 slightly.
  auto model = std::make_shared<OutcomeModel>(
      ModelKind::kMatrixFactorization, 1,
      std::vector<UserId>{UserId{0}, UserId{1}}, Ids(0, 10));
  model->user_latent(0)[0] = 1.5;
  model->user_latent(1)[0] = -1.5;
  for (int j = 0; j < 10; ++j) {
    model->story_latent(j)[0] = j < 5 ? 1.0 : -1.0;
    model->story_effect(j) = (j < 5 ? 0.2 : 0.0) - 0.01 * j;
  }
  auto pers = PolicySpec::Personalized(model);
  auto pop = PolicySpec::Popularity(model);
  auto niche_top = RankStories(pers, User(1), 0, Ids(0, 10))[0];
  auto pop_top = RankStories(pop, User(1), 0, Ids(0, 10))[0];
  EXPECT_EQ(pop_top, StoryId{0});
  EXPECT_EQ(niche_top, StoryId{5});
  EXPECT_EQ(RankStories(pers, User(0), 0, Ids(0, 10))[0], StoryId{0});
}

TEST(RankStoriesTest, EditorialRestrictsScriptToCandidates) {
  EditorialScript script;
  script[{3, 1}] = {StoryId{9}, StoryId{4}, StoryId{7}, StoryId{1}};
  auto policy = PolicySpec::Editorial(script);
  std::vector<StoryId> cands{StoryId{1}, StoryId{2}, StoryId{9}};
  auto ranking = RankStories(policy, User(0, 3), 1, cands);
  // Unscripted candidate 2 follows the scripted ones.
  EXPECT_EQ(ranking, (std::vector<StoryId>{StoryId{9}, StoryId{1}, StoryId{2}}));
  EXPECT_EQ(RankStories(policy, User(8, 3), 1, cands), ranking);
  EXPECT_THROW(RankStories(policy, User(0, 4), 1, cands), Error);
  EXPECT_THROW(ValidateScriptCoverage(script, {3}, 0, 1), Error);
  EXPECT_NO_THROW(ValidateScriptCoverage(script, {3}, 1, 1));
}

TEST(TopKTest, Boundaries) {
  auto ranking = Ids(0, 2200);
  EXPECT_EQ(TopK(ranking, 15).stories.size(), 15u);
  EXPECT_FALSE(TopK(ranking, 15).short_of_candidates);
  auto one = TopK(ranking, 1);
  EXPECT_EQ(one.stories, std::vector<StoryId>{StoryId{0}});
  auto small = TopK(Ids(0, 4), 15);
  EXPECT_EQ(small.stories.size(), 4u);
  EXPECT_TRUE(small.short_of_candidates);
  EXPECT_THROW(TopK(ranking, 0), Error);
}

TEST(WeeklyRefreshTest, DeterministicAndFollowsModel) {
  std::vector<double> effects(30);
  for (int j = 0; j < 30; ++j) effects[j] = 0.1 * ((j * 7) % 30);
  auto model = EffectModel(ModelKind::kMatrixFactorization, effects);
  auto policy = PolicySpec::Personalized(model);
  auto a = WeeklyRefresh(policy, User(0), 2, Ids(0, 30));
  auto b = WeeklyRefresh(policy, User(0), 2, Ids(0, 30));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.slate.stories.size(), 15u);
  EXPECT_EQ(a.slate.valid_day, 14);
  EXPECT_TRUE(a.removed.empty());
  EXPECT_EQ(a.days_without_top_completion, 0);
  // Unknown user: additive terms only, which here equal the global order.
  auto cold = WeeklyRefresh(policy, User(999), 2, Ids(0, 30));
  EXPECT_EQ(cold.slate, a.slate);

  // Swap the scores of the first two slate stories.
  auto s0 = Raw(a.slate.stories[0]), s1 = Raw(a.slate.stories[1]);
  auto swapped = std::make_shared<OutcomeModel>(*model);
  std::swap(swapped->story_effect(s0), swapped->story_effect(s1));
  auto c = WeeklyRefresh(PolicySpec::Personalized(swapped), User(0), 2, Ids(0, 30));
  EXPECT_EQ(c.slate.stories[0], a.slate.stories[1]);
  EXPECT_EQ(c.slate.stories[1], a.slate.stories[0]);
  EXPECT_TRUE(std::equal(c.slate.stories.begin() + 2, c.slate.stories.end(),
                         a.slate.stories.begin() + 2));
}

TEST(DailyUpdateTest, InactiveDayLeavesStateUnchanged) {
  auto state = WeeklyRefresh(IdentityEditorial(30), User(0), 0, Ids(0, 30));
  DayActivity idle;
  idle.started = {StoryId{1}};
  EXPECT_EQ(DailyUpdate(state, idle, 1), state);
}

TEST(DailyUpdateTest, StartedStoriesBackfilledFromRanking) {
  // Hand trace: slate 0..14 in rank order; positions 2 and 5 hold stories 1
  // and 4. Their removal pulls base ranks 16 and 17 (stories 15, 16).
  auto state = WeeklyRefresh(IdentityEditorial(30), User(0), 0, Ids(0, 30));
  DayActivity day;
  day.active = true;
  day.started = {StoryId{1}, StoryId{4}};
  auto next = DailyUpdate(state, day, 1);
  std::vector<StoryId> expected{StoryId{0}, StoryId{2}, StoryId{3}};
  for (int s = 5; s <= 16; ++s) expected.push_back(StoryId{static_cast<std::uint32_t>(s)});
  EXPECT_EQ(next.slate.stories, expected);
  EXPECT_EQ(next.slate.valid_day, 1);
  // Top block changed (story 1 left it), so the counter restarted.
  EXPECT_EQ(next.days_without_top_completion, 0);
}

TEST(DailyUpdateTest, TwoActiveDaysWithoutTopCompletionReplaceTopBlock) {
  auto state = WeeklyRefresh(IdentityEditorial(30), User(0), 0, Ids(0, 30));
  DayActivity day;
  day.active = true;
  day.started = {StoryId{10}};
  day.completed = {StoryId{10}};
  auto d1 = DailyUpdate(state, day, 1);
  EXPECT_EQ(d1.days_without_top_completion, 1);
  EXPECT_EQ(std::vector<StoryId>(d1.slate.stories.begin(), d1.slate.stories.begin() + 3),
            (std::vector<StoryId>{StoryId{0}, StoryId{1}, StoryId{2}}));
  day.started = {StoryId{11}};
  day.completed = {};
  auto d2 = DailyUpdate(d1, day, 2);
  EXPECT_EQ(d2.days_without_top_completion, 0);
  // Removed: 10, 11 and the top block 0..2. Survivors keep their order and
  // base ranks 16..20 (stories 15..19) fill the bottom.
  std::vector<StoryId> expected;
  for (int s : {3, 4, 5, 6, 7, 8, 9, 12, 13, 14, 15, 16, 17, 18, 19}) {
    expected.push_back(StoryId{static_cast<std::uint32_t>(s)});
  }
  EXPECT_EQ(d2.slate.stories, expected);
}

TEST(DailyUpdateTest, TopCompletionResetsCounter) {
  auto state = WeeklyRefresh(IdentityEditorial(30), User(0), 0, Ids(0, 30));
  DayActivity quiet;
  quiet.active = true;
  auto d1 = DailyUpdate(state, quiet, 1);
  EXPECT_EQ(d1.days_without_top_completion, 1);
  DayActivity hit;
  hit.active = true;
  hit.started = {StoryId{14}};
  hit.completed = {StoryId{2}};
  auto d2 = DailyUpdate(d1, hit, 2);
  // Story 2 completed: removed, counter reset by the completion and again by
  // the changed top block.
  EXPECT_EQ(d2.days_without_top_completion, 0);
  EXPECT_EQ(d2.slate.stories[2], StoryId{3});
}

TEST(DailyUpdateTest, ExhaustedPoolShrinksWithoutRecycling) {
  auto state = WeeklyRefresh(IdentityEditorial(16), User(0), 0, Ids(0, 16));
  DayActivity day;
  day.active = true;
  day.started = {StoryId{3}, StoryId{7}};
  auto next = DailyUpdate(state, day, 1);
  EXPECT_EQ(next.slate.stories.size(), 14u);
  EXPECT_TRUE(next.slate.short_of_candidates);
  EXPECT_EQ(next.slate.stories.back(), StoryId{15});
}

TEST(DailyUpdateTest, RandomWeeksKeepInvariants) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto state = WeeklyRefresh(IdentityEditorial(40), User(0), 1, Ids(0, 40));
    std::set<StoryId> ever_removed;
    for (int d = 1; d < 7; ++d) {
      DayActivity act;
      act.active = rng() % 3 != 0;
      for (const auto& s : state.slate.stories) {
        auto roll = rng() % 10;
        if (roll == 0) act.started.insert(s);
        if (roll == 1) { act.started.insert(s); act.completed.insert(s); }
      }
      auto next = DailyUpdate(state, act, 7 + d);
      if (act.active) {
        for (auto s : act.started) ever_removed.insert(s);
      }
      // Started stories never reappear; no duplicates.
      std::set<StoryId> uniq(next.slate.stories.begin(), next.slate.stories.end());
      ASSERT_EQ(uniq.size(), next.slate.stories.size());
      for (auto s : ever_removed) ASSERT_FALSE(uniq.count(s));
      // Surviving entries keep their relative order.
      std::vector<StoryId> survivors;
      for (auto s : state.slate.stories) {
        if (uniq.count(s)) survivors.push_back(s);
      }
      std::vector<StoryId> prefix(next.slate.stories.begin(),
                                  next.slate.stories.begin() + survivors.size());
      ASSERT_EQ(prefix, survivors);
      state = next;
    }
  }
}

TEST(ExposureTest, UniformAndDegenerate) {
  auto slate = TopK(Ids(100, 15), 15);
  auto uniform = ExposureDistribution(slate, std::vector<double>(15, 2.0));
  for (auto& [s, p] : uniform) EXPECT_DOUBLE_EQ(p, 1.0 / 15);
  std::vector<double> spike(15, 0.0);
  spike[0] = 1.0;
  auto d = ExposureDistribution(slate, spike);
  EXPECT_EQ(d.at(StoryId{100}), 1.0);
  EXPECT_EQ(d.at(StoryId{114}), 0.0);
  EXPECT_THROW(ExposureDistribution(slate, std::vector<double>(15, 0.0)), Error);
  try {
    ExposureDistribution(slate, std::vector<double>(15, 0.0));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroMass);
  }
}

TEST(ExposureTest, GeometricDecayNormalization) {
  std::vector<double> effects;
  for (int r = 1; r <= 15; ++r) effects.push_back(std::pow(0.5, r));
  auto slate = TopK(Ids(0, 15), 15);
  auto d = ExposureDistribution(slate, effects);
  // Sum of 0.5^r for r = 1..15 is 1 - 2^-15.
  const double oracle = 0.5 / (1.0 - std::pow(2.0, -15));
  EXPECT_NEAR(d.at(StoryId{0}), oracle, 1e-15);
  EXPECT_NEAR(d.at(StoryId{0}), 0.5000153, 1e-7);
  double total = 0;
  for (auto& [s, p] : d) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ExposureTest, ShortSlateRenormalizesOverPresentRanks) {
  auto slate = TopK(Ids(0, 3), 15);
  std::vector<double> effects(15, 1.0);
  effects[0] = 2.0;
  auto d = ExposureDistribution(slate, effects);
  EXPECT_DOUBLE_EQ(d.at(StoryId{0}), 0.5);
  EXPECT_DOUBLE_EQ(d.at(StoryId{2}), 0.25);
}

TEST(FileFormatTest, ScriptRoundTrip) {
  EditorialScript script;
  script[{1, 0}] = {StoryId{5}, StoryId{3}};
  script[{2, 4}] = {StoryId{1}};
  std::stringstream ss;
  WriteEditorialScript(script, ss);
  EXPECT_EQ(ReadEditorialScript(ss), script);
  std::istringstream gap("grade,week,rank,story_id\n1,0,1,5\n1,0,3,6\n");
  EXPECT_THROW(ReadEditorialScript(gap), Error);
  std::istringstream bad("grade,week,rank,story_id\n1,0,x,5\n");
  EXPECT_THROW(ReadEditorialScript(bad), ParseError);
}

TEST(FileFormatTest, PositionEffects) {
  std::vector<double> effects;
  for (int r = 0; r < 15; ++r) effects.push_back(1.0 / (r + 1));
  std::stringstream ss;
  WritePositionEffects(effects, ss);
  EXPECT_EQ(ReadPositionEffects(ss), effects);
  std::istringstream csv("# header\n1,1,1,1,1\n1 1 1 1 1\n1,1,1,1,1\n");
  EXPECT_EQ(ReadPositionEffects(csv).size(), 15u);
  std::istringstream shortfile("1 2 3");
  EXPECT_THROW(ReadPositionEffects(shortfile), Error);
  std::istringstream negative("-1 1 1 1 1 1 1 1 1 1 1 1 1 1 1");
  EXPECT_THROW(ReadPositionEffects(negative), Error);
}

TEST(FileFormatTest, SlateDumpRoundTrip) {
  auto state = WeeklyRefresh(IdentityEditorial(20), User(4), 1, Ids(0, 20));
  std::vector<SlateDumpRow> rows;
  AppendSlateRows(state, 8, rows);
  ASSERT_EQ(rows.size(), 15u);
  EXPECT_EQ(rows[0], (SlateDumpRow{UserId{4}, 1, 8, 1, StoryId{0}}));
  std::stringstream ss;
  WriteSlateDump(rows, ss);
  EXPECT_EQ(ReadSlateDump(ss), rows);
}

}  // namespace
}  // namespace storylab
