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
// Recommendation policies and the weekly slate state machine.
//
// A policy turns a user and a candidate set into a full ranking. Each week the
// ranking is recomputed and its top entries form the slate shown in the
// recommended section. Within the week the slate changes only through
// DailyUpdate: stories the user started are removed, and when the user keeps
// visiting without completing any of the first three stories, those three
// are replaced. Removed stories are backfilled from the bottom of the weekly
// ranking and never come back in the same week.
#ifndef STORYLAB_POLICY_ENGINE_H_
#define STORYLAB_POLICY_ENGINE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "storylab/common.h"
#include "storylab/interaction_log.h"
#include "storylab/outcome_models.h"

namespace storylab {

inline constexpr int kDaysPerWeek = 7;
inline constexpr int kDefaultSlateSize = 15;
inline constexpr int kTopBlockSize = 3;
// Active days without a completion in the top block before it is replaced.
inline constexpr int kTopBlockPatience = 2;

constexpr int WeekOfDay(int day) {
  return day >= 0 ? day / kDaysPerWeek : -((-day + kDaysPerWeek - 1) / kDaysPerWeek);
}

enum class PolicyKind : std::uint8_t { kEditorial, kPopularity, kPersonalized };

std::string_view PolicyKindToken(PolicyKind kind);  // EDITORIAL, POPULARITY, PERSONALIZED

// Scripted editorial order per (grade, week).
using EditorialScript = std::map<std::pair<int, int>, std::vector<StoryId>>;

struct PolicySpec {
  PolicyKind kind = PolicyKind::kEditorial;
  EditorialScript script;
  std::shared_ptr<const OutcomeModel> model;
  int slate_size = kDefaultSlateSize;
  // Apply the within-week slate updates. Off keeps the weekly slate fixed.
  bool daily_updates = true;

  static PolicySpec Editorial(EditorialScript script,
                              int slate_size = kDefaultSlateSize);
  static PolicySpec Popularity(std::shared_ptr<const OutcomeModel> model,
                               int slate_size = kDefaultSlateSize);
  static PolicySpec Personalized(std::shared_ptr<const OutcomeModel> model,
                                 int slate_size = kDefaultSlateSize);
};

// Throws Error(kConfig) unless the script has an entry for every grade in
// `grades` and every week in [first_week, last_week].
void ValidateScriptCoverage(const EditorialScript& script,
                            const std::set<int>& grades, int first_week,
                            int last_week);

// Full ranking of `candidates` for `user` in `week`.
//
// Model policies sort by the predicted linear score, descending, ties by
// ascending StoryId. The popularity policy scores by the story part of the
// additive model only, so every user gets the same order. The editorial
// policy returns the scripted order restricted to the candidates; candidates
// missing from the script follow in ascending StoryId order. Throws
// Error(kConfig) for a missing script entry or model.
std::vector<StoryId> RankStories(const PolicySpec& policy,
                                 const UserProfile& user, int week,
                                 std::span<const StoryId> candidates);

struct Slate {
  std::vector<StoryId> stories;
  int valid_day = 0;
  // Fewer than the requested number of stories were available.
  bool short_of_candidates = false;

  bool operator==(const Slate&) const = default;
};

Slate TopK(std::span<const StoryId> ranking, int k, int valid_day = 0);

struct SlateState {
  UserId user{};
  int week = 0;
  std::vector<StoryId> base_ranking;
  // Stories removed this week; they are never backfilled.
  std::set<StoryId> removed;
  int days_without_top_completion = 0;
  Slate slate;
  int slate_size = kDefaultSlateSize;

  bool operator==(const SlateState&) const = default;
};

// New week: recompute the ranking, clear removals and the counter, and take
// the top `policy.slate_size` stories.
SlateState WeeklyRefresh(const PolicySpec& policy, const UserProfile& user,
                         int week, std::span<const StoryId> candidates);

struct DayActivity {
  // Active in the recommended section on this day.
  bool active = false;
  std::set<StoryId> started;
  std::set<StoryId> completed;
};

// Applies one day of activity. The returned slate is valid from `next_day`.
//
//   1. Inactive: no change.
//   2. The counter resets if a story in the current top block was completed,
//      otherwise it grows by one.
//   3. Started and completed stories are removed.
//   4. When the counter reaches kTopBlockPatience the remaining stories of
//      the top block are removed and the counter resets.
//   5. The slate is refilled at the bottom from the weekly ranking.
//   6. A changed top block resets the counter.
SlateState DailyUpdate(const SlateState& state, const DayActivity& activity,
                       int next_day);

// Probability that an interaction lands on each slate story:
// effects[r] / sum of effects over the slate's ranks. Throws Error(kZeroMass)
// when that sum is zero and Error(kConfig) on negative or non-finite effects.
std::map<StoryId, double> ExposureDistribution(const Slate& slate,
                                               std::span<const double> effects);
// Same, per slate position.
std::vector<double> RankExposure(std::size_t slate_length,
                                 std::span<const double> effects);

// Editorial scripts: `grade,week,rank,story_id`, ranks 1-based and
// contiguous per (grade, week).
EditorialScript ReadEditorialScript(std::istream& in);
void WriteEditorialScript(const EditorialScript& script, std::ostream& out);

// Position effects: kMaxSlateRank non-negative reals separated by commas or
// whitespace; lines starting with '#' are ignored.
std::vector<double> ReadPositionEffects(std::istream& in);
void WritePositionEffects(std::span<const double> effects, std::ostream& out);

struct SlateDumpRow {
  UserId user{};
  int week = 0;
  int day = 0;
  int rank = 0;
  StoryId story{};
  bool operator==(const SlateDumpRow&) const = default;
};

// Slate dumps: `user_id,week,day,rank,story_id`.
void AppendSlateRows(const SlateState& state, int day,
                     std::vector<SlateDumpRow>& out);
void WriteSlateDump(std::span<const SlateDumpRow> rows, std::ostream& out);
std::vector<SlateDumpRow> ReadSlateDump(std::istream& in);

}  // namespace storylab

#endif  // STORYLAB_POLICY_ENGINE_H_
