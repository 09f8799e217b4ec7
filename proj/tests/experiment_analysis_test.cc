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
#include <random>
#include <sstream>

#include "gtest/gtest.h"

namespace storylab {
namespace {

InteractionRecord Rec(std::uint32_t user, std::uint32_t story, int day, int session,
                      OutcomeKind kind, std::optional<int> rank = 1,
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
  return LogDataset::Create(std::move(records), std::move(users), std::move(stories));
}

// Brute-force one-sided rank-sum p-value over all assignments of ranks.
double BruteForceWilcoxon(const std::vector<double>& t, const std::vector<double>& c) {
  std::vector<double> all(t);
  all.insert(all.end(), c.begin(), c.end());
  const std::size_t n = all.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (double v : all) {
      less += v < all[i];
      equal += v == all[i];
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double w = 0;
  for (std::size_t i = 0; i < t.size(); ++i) w += rank[i];
  std::vector<int> mask(n, 0);
  std::fill(mask.end() - t.size(), mask.end(), 1);
  double hits = 0, total = 0;
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += mask[i] * rank[i];
    total += 1;
    hits += s >= w - 1e-9;
  } while (std::next_permutation(mask.begin(), mask.end()));
  return hits / total;
}

TEST(BuildOutcomesTest, CompletedStory) {
  auto data = Make({Rec(1, 10, 0, 0, OutcomeKind::kCompleted)});
  auto out = BuildOutcomes(data, {{UserId{1}, true}}, kRecommendedSection, std::nullopt);
  const auto& v = out.at(UserId{1});
  EXPECT_DOUBLE_EQ(v.engagement_section, 1.0);
  EXPECT_DOUBLE_EQ(v.stories_section, 1.0);
  EXPECT_DOUBLE_EQ(v.reading_section, 3.0);
  EXPECT_TRUE(v.launched_app);
}

TEST(BuildOutcomesTest, StartedAndViewed) {
  auto data = Make({Rec(1, 10, 0, 0, OutcomeKind::kStarted, 1),
                    Rec(1, 11, 0, 0, OutcomeKind::kViewed, 2)});
  auto v = BuildOutcomes(data, {{UserId{1}, true}}, kRecommendedSection, std::nullopt).at(UserId{1});
  EXPECT_DOUBLE_EQ(v.engagement_section, 0.8);
  EXPECT_DOUBLE_EQ(v.stories_section, 0.0);
  EXPECT_DOUBLE_EQ(v.reading_section, 0.0);
}

TEST(BuildOutcomesTest, SectionSplitAndWindow) {
  auto data = Make({Rec(1, 10, 0, 0, OutcomeKind::kCompleted),
                    Rec(1, 11, 0, 1, OutcomeKind::kStarted, std::nullopt, "other"),
                    Rec(1, 12, 5, 0, OutcomeKind::kCompleted),
                    Rec(2, 10, 6, 0, OutcomeKind::kNotShown, 1)});
  ArmTable arms{{UserId{1}, true}, {UserId{2}, false}, {UserId{3}, false}};
  auto out = BuildOutcomes(data, arms, kRecommendedSection, Period{0, 4});
  EXPECT_DOUBLE_EQ(out.at(UserId{1}).engagement_section, 1.0);
  EXPECT_DOUBLE_EQ(out.at(UserId{1}).engagement_all, 1.5);
  EXPECT_FALSE(out.at(UserId{2}).launched_app);
  auto all = BuildOutcomes(data, arms, kRecommendedSection, std::nullopt);
  EXPECT_TRUE(all.at(UserId{2}).launched_app);
  EXPECT_DOUBLE_EQ(all.at(UserId{2}).engagement_all, 0.0);
  auto sample = SelectSample(all, arms);
  ASSERT_EQ(sample.size(), 2u);
  EXPECT_EQ(sample.users[0], UserId{1});
  EXPECT_EQ(sample.arm[1], 0);
}

TEST(DiffInMeansTest, HandExample) {
  std::vector<double> y{1, 2, 3, 0, 1, 2};
  std::vector<int> arm{1, 1, 1, 0, 0, 0};
  auto r = DiffInMeans(y, arm);
  EXPECT_DOUBLE_EQ(r.estimate, 1.0);
  EXPECT_NEAR(r.std_error, std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(r.control_mean, 1.0);
  EXPECT_DOUBLE_EQ(r.pct_of_baseline, 100.0);
  EXPECT_EQ(r.n_treated, 3u);
}

TEST(DiffInMeansTest, DegenerateArm) {
  std::vector<double> y{1, 2, 3};
  std::vector<int> arm{1, 1, 0};
  try {
    DiffInMeans(y, arm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateArm);
  }
}

TEST(RegressionAdjustedTest, ConstantCovariateMatchesDiffInMeans) {
  std::vector<double> y{1, 2, 3, 0, 1, 2, 4, 0.5};
  std::vector<int> arm{1, 1, 1, 0, 0, 0, 1, 0};
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(8, 1, 2.0);
  auto ra = RegressionAdjusted(y, arm, x, {"c"});
  auto dm = DiffInMeans(y, arm);
  EXPECT_NEAR(ra.estimate, dm.estimate, 1e-12);
  // HC2 with a single binary regressor reproduces the Welch standard error.
  EXPECT_NEAR(ra.std_error, dm.std_error, 1e-10);
}

TEST(RegressionAdjustedTest, OrthogonalCovariateKeepsEstimate) {
  // Covariate balanced within each arm and centred: same point estimate.
  std::vector<double> y{1, 2, 3, 4, 0, 1, 2, 2};
  std::vector<int> arm{1, 1, 1, 1, 0, 0, 0, 0};
  Eigen::MatrixXd x(8, 1);
  x << 1, -1, 1, -1, 1, -1, 1, -1;
  auto ra = RegressionAdjusted(y, arm, x, {"c"});
  EXPECT_NEAR(ra.estimate, DiffInMeans(y, arm).estimate, 1e-12);
}

TEST(RegressionAdjustedTest, RemovesCovariateNoise) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  const int n = 400;
  std::vector<double> y(n);
  std::vector<int> arm(n);
  Eigen::MatrixXd x(n, 1);
  for (int i = 0; i < n; ++i) {
    arm[i] = i % 2;
    x(i, 0) = n01(rng);
    y[i] = 0.5 * arm[i] + 3.0 * x(i, 0) + 0.1 * n01(rng);
  }
  auto ra = RegressionAdjusted(y, arm, x, {"x"});
  EXPECT_NEAR(ra.estimate, 0.5, 0.05);
  EXPECT_LT(ra.std_error, DiffInMeans(y, arm).std_error / 5);
}

TEST(AipwTest, ZeroNuisanceIsIpw) {
  std::vector<double> y{1, 2, 3, 0, 1, 2};
  std::vector<int> arm{1, 1, 1, 0, 0, 0};
  std::vector<double> zero(6, 0.0);
  auto r = AipwFromNuisance(y, arm, zero, zero, 0.5);
  EXPECT_NEAR(r.report.estimate, 1.0, 1e-12);
  EXPECT_NEAR(r.scores[0], 2.0, 1e-12);
  EXPECT_NEAR(r.scores[3], 0.0, 1e-12);
}

TEST(AipwTest, PerfectNuisanceHasZeroSe) {
  std::vector<double> y{2, 3, 4, 1, 2, 3};
  std::vector<int> arm{1, 1, 1, 0, 0, 0};
  std::vector<double> m1{2, 3, 4, 2, 3, 4}, m0{1, 2, 3, 1, 2, 3};
  auto r = AipwFromNuisance(y, arm, m1, m0, 0.5);
  EXPECT_NEAR(r.report.estimate, 1.0, 1e-12);
  EXPECT_NEAR(r.report.std_error, 0.0, 1e-12);
}

TEST(AipwTest, RejectsBadPropensity) {
  std::vector<double> y{1, 2, 3, 4};
  std::vector<int> arm{1, 1, 0, 0};
  try {
    AipwFromNuisance(y, arm, y, y, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPropensityOutOfRange);
  }
}

TEST(AipwTest, CrossFittedRecoversEffect) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  const int n = 600;
  std::vector<double> y(n);
  std::vector<int> arm(n);
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    arm[i] = (i * 7 + 3) % 2;
    x(i, 0) = n01(rng);
    x(i, 1) = n01(rng);
    y[i] = 1.0 + 0.3 * arm[i] + 2.0 * x(i, 0) - x(i, 1) + 0.2 * n01(rng);
  }
  auto r = Aipw(y, arm, x, AipwConfig{});
  EXPECT_NEAR(r.report.estimate, 0.3, 0.06);
  EXPECT_LT(r.report.std_error, DiffInMeans(y, arm).std_error / 3);
  auto again = Aipw(y, arm, x, AipwConfig{});
  EXPECT_EQ(r.scores, again.scores);
  // Intercept-only regression of the scores returns their mean.
  auto fit = AipwScoreRegression(r.scores, Eigen::MatrixXd(n, 0), {});
  EXPECT_NEAR(fit.coef(fit.Index(kInterceptName)), r.report.estimate, 1e-10);
}

TEST(WilcoxonTest, ExtremeOrderings) {
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  EXPECT_NEAR(WilcoxonOneSided(a, b).p_value, 1.0, 1e-12);
  auto r = WilcoxonOneSided(b, a);
  EXPECT_NEAR(r.p_value, 0.05, 1e-12);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.statistic, 15.0);
}

TEST(WilcoxonTest, MatchesBruteForceOverAllPartitions) {
  // Values with ties; every 3-subset of the 9 values as the treated group.
  std::vector<double> values{1, 2, 2, 3, 4, 4, 4, 5, 6};
  std::vector<int> mask(9, 0);
  std::fill(mask.end() - 3, mask.end(), 1);
  int cases = 0;
  do {
    std::vector<double> t, c;
    for (int i = 0; i < 9; ++i) (mask[i] ? t : c).push_back(values[i]);
    EXPECT_NEAR(WilcoxonOneSided(t, c).p_value, BruteForceWilcoxon(t, c), 1e-12);
    ++cases;
  } while (std::next_permutation(mask.begin(), mask.end()));
  EXPECT_EQ(cases, 84);

  std::vector<double> six{0.5, 1, 1, 2, 7, 9};
  std::vector<int> m6(6, 0);
  std::fill(m6.end() - 3, m6.end(), 1);
  cases = 0;
  do {
    std::vector<double> t, c;
    for (int i = 0; i < 6; ++i) (m6[i] ? t : c).push_back(six[i]);
    EXPECT_NEAR(WilcoxonOneSided(t, c).p_value, BruteForceWilcoxon(t, c), 1e-12);
    ++cases;
  } while (std::next_permutation(m6.begin(), m6.end()));
  EXPECT_EQ(cases, 20);
}

TEST(WilcoxonTest, NormalApproximationCloseToExact) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<double> t(10), c(10);
  for (auto& v : t) v = n01(rng) + 0.5;
  for (auto& v : c) v = n01(rng);
  auto exact = WilcoxonOneSided(t, c, WilcoxonMethod::kExact);
  auto normal = WilcoxonOneSided(t, c, WilcoxonMethod::kNormal);
  EXPECT_TRUE(exact.exact);
  EXPECT_FALSE(normal.exact);
  EXPECT_NEAR(exact.p_value, normal.p_value, 0.02);
  EXPECT_FALSE(WilcoxonOneSided(t, c).exact);
}

TEST(WilcoxonTest, FullyTied) {
  std::vector<double> a{2, 2}, b{2, 2, 2};
  auto r = WilcoxonOneSided(a, b);
  EXPECT_TRUE(r.fully_tied);
  EXPECT_DOUBLE_EQ(r.p_value, 0.5);
}

TEST(SubgroupTest, InOutAndContrast) {
  std::vector<double> y{1, 2, 3, 0, 1, 2, 5, 6, 7, 0, 1, 2};
  std::vector<int> arm{1, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0};
  std::vector<int> member{1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  std::vector<SubgroupSplit> splits{{"niche", "niche", "other", member}};
  auto table = SubgroupAtes(y, arm, splits);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].group, "niche");
  EXPECT_DOUBLE_EQ(table.rows[0].report->estimate, 1.0);
  EXPECT_DOUBLE_EQ(table.rows[1].report->estimate, 5.0);
  ASSERT_EQ(table.contrasts.size(), 1u);
  EXPECT_DOUBLE_EQ(table.contrasts[0].estimate, -4.0);
  EXPECT_NEAR(table.contrasts[0].std_error, std::sqrt(4.0 / 3.0), 1e-12);
}

TEST(SubgroupTest, EmptyGroupHasNoReport) {
  std::vector<double> y{1, 2, 3, 4};
  std::vector<int> arm{1, 1, 0, 0};
  std::vector<int> member{1, 1, 1, 1};
  std::vector<SubgroupSplit> splits{{"all", "in", "out", member}};
  auto table = SubgroupAtes(y, arm, splits);
  EXPECT_TRUE(table.rows[0].report.has_value());
  EXPECT_FALSE(table.rows[1].report.has_value());
  EXPECT_TRUE(table.contrasts.empty());
}

TEST(DiagnosticsTest, RankMeans) {
  auto data = Make({Rec(1, 10, 0, 0, OutcomeKind::kCompleted, 1),
                    Rec(1, 11, 0, 0, OutcomeKind::kStarted, 2),
                    Rec(2, 10, 0, 0, OutcomeKind::kCompleted, 1),
                    Rec(2, 11, 0, 0, OutcomeKind::kStarted, 2)});
  auto rows = MeanEngagementByRank(data, {{UserId{1}, true}, {UserId{2}, true}},
                                   kRecommendedSection);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].mean, 0.5);
}

TEST(DiagnosticsTest, SessionLengths) {
  auto data = Make({Rec(1, 10, 0, 0, OutcomeKind::kCompleted, 1),
                    Rec(1, 11, 1, 0, OutcomeKind::kStarted, 1),
                    Rec(1, 12, 2, 0, OutcomeKind::kStarted, 1),
                    Rec(1, 13, 2, 0, OutcomeKind::kSkipped, 2)});
  auto h = SessionLengthDistribution(data, {{UserId{1}, true}}, kRecommendedSection);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].arm, 1);
  EXPECT_NEAR(h[0].frequency.at(1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(h[0].frequency.at(2), 1.0 / 3.0, 1e-12);
  SessionHistogram longer;
  longer.frequency = {{2, 1.0}};
  EXPECT_NEAR(DominanceStatistic(longer, h[0]), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(DominanceStatistic(h[0], longer), -0.0, 1e-12);
}

TEST(DiagnosticsTest, MinimumDetectableEffect) {
  EXPECT_NEAR(NormalQuantile(0.975) + NormalQuantile(0.8), 2.8016, 1e-4);
  EXPECT_NEAR(MinimumDetectableEffect(1.0, 2452, 2452, 0.05, 0.8), 0.0800, 5e-4);
}

TEST(DiagnosticsTest, CalibrationIdentity) {
  std::vector<double> p{0.1, 0.4, 0.7, 0.9};
  std::vector<std::string> g(4, "all");
  auto rows = CalibrationRegression(p, p, g);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].slope, 1.0, 1e-12);
  EXPECT_NEAR(rows[0].r_squared, 1.0, 1e-12);
}

TEST(DiagnosticsTest, Balance) {
  const int n = 200;
  Eigen::MatrixXd x(n, 1);
  std::vector<int> alternating(n), sorted(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = i / 2;
    alternating[i] = i % 2;
    sorted[i] = i < n / 2;
  }
  EXPECT_DOUBLE_EQ(BalanceTable(x, {"v"}, alternating)[0].p_value, 1.0);
  Eigen::MatrixXd pairs(4, 1);
  pairs << 1, 1, 2, 2;
  std::vector<int> pa{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(BalanceTable(pairs, {"v"}, pa)[0].p_value, 1.0);
  EXPECT_LT(BalanceTable(x, {"v"}, sorted)[0].p_value, 0.01);
}

TEST(DiagnosticsTest, BucketsAndExposure) {
  std::vector<InteractionRecord> recs;
  // Treated users see story 10 often, 11 rarely; control users see both.
  for (std::uint32_t u = 1; u <= 6; ++u) {
    bool treated = u <= 3;
    for (int d = 0; d < 3; ++d) {
      recs.push_back(Rec(u, 10, d, 0, treated ? OutcomeKind::kCompleted : OutcomeKind::kViewed, 1));
      if (!treated || d == 0) recs.push_back(Rec(u, 11, d, 0, OutcomeKind::kSkipped, 2));
    }
  }
  auto data = Make(recs);
  ArmTable arms;
  std::map<UserId, bool> niche;
  for (std::uint32_t u = 1; u <= 6; ++u) {
    arms[UserId{u}] = u <= 3;
    niche[UserId{u}] = u % 3 == 0;
  }
  std::vector<UserId> users;
  std::map<UserId, UserCovariates> cov;
  for (const auto& [u, _] : arms) users.push_back(u);
  auto x = BuildCovariateMatrix(users, data.users(), cov);
  auto rows = BucketEngagementAnalysis(data, arms, 2, x, kRecommendedSection);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].stories, 1u);
  EXPECT_EQ(rows[0].treatment_impressions, 9u);
  EXPECT_TRUE(rows[0].estimable);
  EXPECT_NEAR(rows[0].difference, 0.7, 1e-10);
  EXPECT_NEAR(rows[0].control_mean, 0.3, 1e-10);
  EXPECT_NEAR(rows[1].difference, 0.0, 1e-10);

  auto exposure = StoryPopularityExposure(data, arms, niche, kRecommendedSection);
  ASSERT_EQ(exposure.size(), 2u);
  EXPECT_EQ(exposure[0].arm, 1);
  EXPECT_EQ(exposure[0].niche_users, 1u);
  EXPECT_TRUE(exposure[0].degenerate);
  EXPECT_NEAR(exposure[0].niche_rank, 1.25, 1e-12);
}

TEST(WriteEstimatesTest, Header) {
  EstimateReport r;
  r.outcome = "engagement_section";
  r.estimate = 1.0;
  std::ostringstream out;
  std::vector<EstimateReport> rs{r};
  WriteEstimates(rs, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "estimator,outcome,filter,estimate,se,p,pct");
  EXPECT_NE(out.str().find("DiffInMeans,engagement_section,all,1,"), std::string::npos);
}

}  // namespace
}  // namespace storylab
