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
#include "storylab/interaction_log.h"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "gtest/gtest.h"

namespace storylab {
namespace {

InteractionRecord Rec(std::uint32_t user, std::uint32_t story, int day,
                      int session, OutcomeKind kind,
                      std::optional<int> rank = 1,
                      std::string section = std::string(kRecommendedSection)) {
  InteractionRecord r;
  r.user = UserId{user};
  r.story = StoryId{story};
  r.day = day;
  r.session = session;
  r.outcome = kind;
  r.section = std::move(section);
  r.slate_rank = r.section == kRecommendedSection ? rank : std::nullopt;
  return r;
}

LogDataset Make(std::vector<InteractionRecord> records) {
  std::map<UserId, UserProfile> users;
  std::map<StoryId, StoryMeta> stories;
  for (const auto& r : records) {
    users[r.user] = UserProfile{r.user, 3, Channel::kB2C, 0};
    stories[r.story] = StoryMeta{r.story, "animal", 2.0, 4.0};
  }
  return LogDataset::Create(std::move(records), std::move(users),
                            std::move(stories));
}

TEST(ScoreOutcomeTest, FixedMapping) {
  EXPECT_EQ(ScoreOutcome(OutcomeKind::kCompleted), 1.0);
  EXPECT_EQ(ScoreOutcome(OutcomeKind::kStarted), 0.5);
  EXPECT_EQ(ScoreOutcome(OutcomeKind::kViewed), 0.3);
  EXPECT_EQ(ScoreOutcome(OutcomeKind::kSkipped), 0.0);
  EXPECT_FALSE(ScoreOutcome(OutcomeKind::kNotShown).has_value());
}

TEST(ScoreOutcomeTest, TotalAndInjective) {
  std::set<double> seen;
  int na = 0;
  for (auto k : {OutcomeKind::kCompleted, OutcomeKind::kStarted,
                 OutcomeKind::kViewed, OutcomeKind::kSkipped,
                 OutcomeKind::kNotShown}) {
    auto v = ScoreOutcome(k);
    if (v) {
      EXPECT_TRUE(seen.insert(*v).second);
    } else {
      ++na;
    }
    EXPECT_EQ(ParseOutcomeToken(OutcomeToken(k)), k);
  }
  EXPECT_EQ(na, 1);
}

TEST(IngestTest, EmptyFileGivesEmptyDataset) {
  std::istringstream log("");
  auto result = IngestLog(log, nullptr, nullptr);
  EXPECT_TRUE(result.data.empty());
  EXPECT_TRUE(result.period_undefined);
}

TEST(IngestTest, ThreeValidLines) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
      "1,10,5,0,RECOMMENDED,1,COMPLETED\n"
      "1,11,7,0,OTHER,,VIEWED\n"
      "2,10,3,1,RECOMMENDED,4,NOT_SHOWN\n");
  auto result = IngestLog(log, nullptr, nullptr);
  EXPECT_EQ(result.data.records().size(), 3u);
  ASSERT_TRUE(result.data.period().has_value());
  EXPECT_EQ(result.data.period()->first_day, 3);
  EXPECT_EQ(result.data.period()->last_day, 7);
  EXPECT_EQ(result.auto_registered_users.size(), 2u);
  EXPECT_EQ(result.auto_registered_stories.size(), 2u);
}

TEST(IngestTest, OutcomeOutsideSupportIsParseError) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
      "1,10,5,0,RECOMMENDED,1,COMPLETED\n"
      "1,11,5,0,RECOMMENDED,2,0.4\n");
  try {
    IngestLog(log, nullptr, nullptr);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(IngestTest, RankOutOfRangeIsInvariantError) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
      "1,10,5,0,RECOMMENDED,16,COMPLETED\n");
  try {
    IngestLog(log, nullptr, nullptr);
    FAIL() << "expected InvariantError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariant);
  }
}

TEST(IngestTest, DuplicateKeyIsInvariantError) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
      "1,10,5,0,RECOMMENDED,1,COMPLETED\n"
      "1,10,5,0,RECOMMENDED,2,VIEWED\n");
  EXPECT_THROW(IngestLog(log, nullptr, nullptr), Error);
}

TEST(IngestTest, LenientModeCollectsRejectedLines) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n"
      "1,10,5,0,RECOMMENDED,1,COMPLETED\n"
      "garbage\n"
      "1,11,5,0,RECOMMENDED,2,HALF\n");
  LogSchema schema;
  schema.strict = false;
  auto result = IngestLog(log, nullptr, nullptr, schema);
  EXPECT_EQ(result.data.records().size(), 1u);
  ASSERT_EQ(result.rejected.size(), 2u);
  EXPECT_EQ(result.rejected[0].line, 3);
  EXPECT_EQ(result.rejected[1].line, 4);
}

TEST(IngestTest, SidecarGradeOutOfRange) {
  std::istringstream log(
      "user_id,story_id,day,session_id,section,slate_rank,outcome_kind\n");
  std::istringstream users("user_id,grade,channel,registration_day\n1,9,B2B,0\n");
  EXPECT_THROW(IngestLog(log, &users, nullptr), Error);
}

TEST(IngestTest, RoundTripRandomDatasets) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<InteractionRecord> records;
    std::set<std::tuple<int, int, int, int>> keys;
    std::uniform_int_distribution<int> user(0, 5), story(0, 30), day(0, 20),
        session(0, 2), kind(0, 4), rank(1, 15), other(0, 3);
    for (int i = 0; i < 60; ++i) {
      int u = user(rng), s = story(rng), d = day(rng), ss = session(rng);
      if (!keys.insert({u, s, d, ss}).second) continue;
      bool ranked = other(rng) != 0;
      records.push_back(Rec(u, s, d, ss, static_cast<OutcomeKind>(kind(rng)),
                            rank(rng),
                            ranked ? std::string(kRecommendedSection)
                                   : std::string(kOtherSection)));
    }
    std::map<UserId, UserProfile> users;
    std::map<StoryId, StoryMeta> stories;
    for (const auto& r : records) {
      users[r.user] = UserProfile{r.user, 1 + static_cast<int>(Raw(r.user)) % 8,
                                  static_cast<Channel>(Raw(r.user) % 3), -4};
      stories[r.story] =
          StoryMeta{r.story, "tag" + std::to_string(Raw(r.story) % 4), 0.1 * (1 + Raw(r.story)),
                    0.37 * (3 + Raw(r.story))};
    }
    auto data = LogDataset::Create(records, users, stories);
    std::stringstream log, u, s;
    WriteLog(data, log);
    WriteUsers(data, u);
    WriteStories(data, s);
    auto back = IngestLog(log, &u, &s);
    EXPECT_EQ(back.data, data);
    EXPECT_EQ(Fingerprint(back.data), Fingerprint(data));
  }
}

TEST(TrimOutliersTest, BoundaryIsMoreThanTen) {
  std::vector<InteractionRecord> records;
  for (int s = 0; s < 10; ++s) records.push_back(Rec(1, s, 0, 0, OutcomeKind::kCompleted));
  for (int s = 0; s < 3; ++s) records.push_back(Rec(1, s, 1, 0, OutcomeKind::kCompleted));
  for (int s = 0; s < 11; ++s) records.push_back(Rec(2, s, 0, 0, OutcomeKind::kCompleted));
  records.push_back(Rec(2, 20, 3, 0, OutcomeKind::kViewed));
  auto data = Make(records);
  auto out = TrimOutliers(data, 10);
  ASSERT_EQ(out.dropped_users.size(), 1u);
  EXPECT_EQ(out.dropped_users[0], UserId{2});
  for (const auto& r : out.data.records()) EXPECT_EQ(r.user, UserId{1});
  EXPECT_EQ(out.data.records().size(), 13u);
  EXPECT_EQ(out.data.FindUser(UserId{2}), nullptr);
}

TEST(TrimOutliersTest, Idempotent) {
  std::mt19937_64 rng(5);
  std::vector<InteractionRecord> records;
  for (int u = 0; u < 30; ++u) {
    int n = std::uniform_int_distribution<int>(0, 14)(rng);
    for (int s = 0; s < n; ++s) {
      records.push_back(Rec(u, s, 0, 0, OutcomeKind::kCompleted));
    }
  }
  auto data = Make(records);
  auto once = TrimOutliers(data);
  auto twice = TrimOutliers(once.data);
  EXPECT_EQ(once.data, twice.data);
  EXPECT_TRUE(twice.dropped_users.empty());
}

// Brute-force "top pct" rule: sort (value desc, id asc), take ceil(pct*n)
// entries, then extend to everything tied with the last one taken.
std::set<int> BruteTopPercentile(const std::vector<int>& values, double pct) {
  std::vector<int> ids(values.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  int take = 0;
  while (take < static_cast<int>(values.size()) &&
         take < pct * static_cast<double>(values.size()) - 1e-12) {
    ++take;
  }
  std::set<int> out;
  if (take == 0) return out;
  int cut = values[ids[take - 1]];
  for (int i : ids) {
    if (values[i] >= cut) out.insert(i);
  }
  return out;
}

TEST(TrimTopDailyPercentileTest, SingleHeavyUserAmongTwenty) {
  std::vector<int> max_daily(20);
  for (int u = 0; u < 20; ++u) max_daily[u] = u == 7 ? 50 : 1 + u % 3;
  std::vector<InteractionRecord> records;
  for (int u = 0; u < 20; ++u) {
    for (int s = 0; s < max_daily[u]; ++s) {
      records.push_back(Rec(u, s, 2, s / 5, OutcomeKind::kCompleted));
    }
  }
  auto data = Make(records);
  auto expected = BruteTopPercentile(max_daily, 0.05);
  ASSERT_EQ(expected, std::set<int>{7});
  auto out = TrimTopDailyPercentile(data, 0.05);
  ASSERT_EQ(out.dropped_users.size(), 1u);
  EXPECT_EQ(out.dropped_users[0], UserId{7});
}

TEST(TrimTopDailyPercentileTest, AllTiedDropsNoneAndSaysSo) {
  std::vector<InteractionRecord> records;
  for (int u = 0; u < 10; ++u) records.push_back(Rec(u, 1, 0, 0, OutcomeKind::kCompleted));
  auto out = TrimTopDailyPercentile(Make(records), 0.05);
  EXPECT_TRUE(out.dropped_users.empty());
  EXPECT_NE(out.note.find("tied"), std::string::npos);
}

TEST(TrimTopDailyPercentileTest, ZeroPctIsIdentity) {
  std::vector<InteractionRecord> records{Rec(1, 1, 0, 0, OutcomeKind::kCompleted),
                                         Rec(2, 1, 0, 0, OutcomeKind::kViewed)};
  auto data = Make(records);
  auto out = TrimTopDailyPercentile(data, 0.0);
  EXPECT_EQ(out.data, data);
}

TEST(TopShareCountTest, GuardsFloatingPointNoise) {
  EXPECT_EQ(TopShareCount(0.05, 20), 1u);
  EXPECT_EQ(TopShareCount(0.25, 4), 1u);
  EXPECT_EQ(TopShareCount(0.5, 7), 4u);
  EXPECT_EQ(TopShareCount(0.0, 7), 0u);
}

TEST(CovariatesTest, NicheFromPopularityQuartile) {
  // Completions per story: 100 -> 10, 101 -> 8, 102 -> 2, 103 -> 1 (by users
  // 10..29). User 1 touches {100, 102, 103}: popular share 1/3 < 0.5.
  std::vector<InteractionRecord> records;
  const int completions[] = {10, 8, 2, 1};
  for (int s = 0; s < 4; ++s) {
    for (int c = 0; c < completions[s]; ++c) {
      records.push_back(Rec(10 + c, 100 + s, 1, 0, OutcomeKind::kCompleted));
    }
  }
  records.push_back(Rec(1, 100, 2, 0, OutcomeKind::kViewed));
  records.push_back(Rec(1, 102, 2, 0, OutcomeKind::kViewed));
  records.push_back(Rec(1, 103, 3, 0, OutcomeKind::kViewed));
  records.push_back(Rec(2, 100, 3, 0, OutcomeKind::kViewed));
  auto cov = ComputeCovariates(Make(records), 10);
  EXPECT_TRUE(cov.at(UserId{1}).is_niche);
  EXPECT_FALSE(cov.at(UserId{2}).is_niche);
  EXPECT_TRUE(cov.at(UserId{10}).is_niche);  // 1 of 4 touched is popular
  EXPECT_FALSE(cov.at(UserId{19}).is_niche);
}

TEST(CovariatesTest, IgnoresPostCutoffRecords) {
  std::vector<InteractionRecord> base{Rec(1, 1, 0, 0, OutcomeKind::kCompleted),
                                      Rec(1, 2, 1, 0, OutcomeKind::kCompleted),
                                      Rec(2, 1, 1, 0, OutcomeKind::kViewed)};
  auto before = ComputeCovariates(Make(base), 5);
  auto perturbed = base;
  perturbed.push_back(Rec(2, 3, 5, 0, OutcomeKind::kCompleted));
  perturbed.push_back(Rec(1, 3, 9, 1, OutcomeKind::kSkipped));
  auto after = ComputeCovariates(Make(perturbed), 5);
  EXPECT_EQ(before.at(UserId{1}), after.at(UserId{1}));
  EXPECT_EQ(before.at(UserId{2}), after.at(UserId{2}));
}

TEST(CovariatesTest, StreaksTotalsAndSectionUse) {
  std::vector<InteractionRecord> records{
      Rec(1, 1, 10, 0, OutcomeKind::kCompleted),
      Rec(1, 2, 11, 0, OutcomeKind::kCompleted),
      Rec(1, 3, 12, 0, OutcomeKind::kCompleted),
      Rec(1, 4, 14, 0, OutcomeKind::kStarted),
      Rec(1, 5, 15, 0, OutcomeKind::kCompleted, std::nullopt,
          std::string(kOtherSection)),
      // Outside the 14 day window before day 40 and NotShown inside it.
      Rec(2, 1, 2, 0, OutcomeKind::kViewed),
      Rec(2, 2, 30, 0, OutcomeKind::kNotShown),
  };
  auto cov = ComputeCovariates(Make(records), 40);
  const auto& u1 = cov.at(UserId{1});
  EXPECT_DOUBLE_EQ(u1.past_total_engagement, 4.5);
  EXPECT_EQ(u1.past_stories_completed, 4);
  EXPECT_EQ(u1.max_streak, 3);
  EXPECT_FALSE(u1.used_section_before);
  EXPECT_FALSE(cov.at(UserId{2}).used_section_before);

  auto recent = ComputeCovariates(Make(records), 20);
  EXPECT_TRUE(recent.at(UserId{1}).used_section_before);
  EXPECT_TRUE(recent.at(UserId{1}).is_heavy_engagement);
  EXPECT_FALSE(recent.at(UserId{2}).is_heavy_engagement);
}

TEST(CovariatesTest, EmptyHistoryIsFlagged) {
  std::vector<InteractionRecord> records{Rec(1, 1, 10, 0, OutcomeKind::kCompleted)};
  auto cov = ComputeCovariates(Make(records), 5);
  EXPECT_TRUE(cov.at(UserId{1}).empty_history);
  EXPECT_EQ(cov.at(UserId{1}).past_stories_completed, 0);
}

}  // namespace
}  // namespace storylab
