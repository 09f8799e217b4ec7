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

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "text_io.h"

namespace storylab {

namespace {

using text_io::FormatReal;
using text_io::ParseNumber;
using text_io::ParseReal;
using text_io::ReadLine;
using text_io::SplitCsv;

constexpr std::string_view kScriptHeader = "grade,week,rank,story_id";
constexpr std::string_view kSlateHeader = "user_id,week,day,rank,story_id";

std::vector<StoryId> SortByScore(std::span<const StoryId> candidates,
                                 const std::function<double(StoryId)>& score) {
  std::vector<std::pair<double, StoryId>> scored;
  scored.reserve(candidates.size());
  for (StoryId s : candidates) scored.emplace_back(score(s), s);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return Raw(a.second) < Raw(b.second);
  });
  std::vector<StoryId> out;
  out.reserve(scored.size());
  for (const auto& [_, s] : scored) out.push_back(s);
  return out;
}

std::vector<StoryId> TopBlock(const Slate& slate) {
  std::size_t n = std::min<std::size_t>(kTopBlockSize, slate.stories.size());
  return {slate.stories.begin(), slate.stories.begin() + n};
}

}  // namespace

std::string_view PolicyKindToken(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kEditorial: return "EDITORIAL";
    case PolicyKind::kPopularity: return "POPULARITY";
    case PolicyKind::kPersonalized: return "PERSONALIZED";
  }
  return "?";
}

PolicySpec PolicySpec::Editorial(EditorialScript script, int slate_size) {
  PolicySpec p;
  p.kind = PolicyKind::kEditorial;
  p.script = std::move(script);
  p.slate_size = slate_size;
  return p;
}

PolicySpec PolicySpec::Popularity(std::shared_ptr<const OutcomeModel> model,
                                  int slate_size) {
  PolicySpec p;
  p.kind = PolicyKind::kPopularity;
  p.model = std::move(model);
  p.slate_size = slate_size;
  return p;
}

PolicySpec PolicySpec::Personalized(std::shared_ptr<const OutcomeModel> model,
                                    int slate_size) {
  PolicySpec p;
  p.kind = PolicyKind::kPersonalized;
  p.model = std::move(model);
  p.slate_size = slate_size;
  return p;
}

void ValidateScriptCoverage(const EditorialScript& script,
                            const std::set<int>& grades, int first_week,
                            int last_week) {
  for (int g : grades) {
    for (int w = first_week; w <= last_week; ++w) {
      if (!script.count({g, w})) {
        throw Error(ErrorCode::kConfig,
                    "editorial script has no entry for grade " +
                        std::to_string(g) + " week " + std::to_string(w));
      }
    }
  }
}

std::vector<StoryId> RankStories(const PolicySpec& policy,
                                 const UserProfile& user, int week,
                                 std::span<const StoryId> candidates) {
  switch (policy.kind) {
    case PolicyKind::kEditorial: {
      auto it = policy.script.find({user.grade, week});
      if (it == policy.script.end()) {
        throw Error(ErrorCode::kConfig,
                    "editorial script has no entry for grade " +
                        std::to_string(user.grade) + " week " +
                        std::to_string(week));
      }
      std::set<StoryId> pool(candidates.begin(), candidates.end());
      std::vector<StoryId> out;
      for (StoryId s : it->second) {
        if (pool.erase(s)) out.push_back(s);
      }
      out.insert(out.end(), pool.begin(), pool.end());
      return out;
    }
    case PolicyKind::kPopularity: {
      if (!policy.model) throw Error(ErrorCode::kConfig, "popularity policy without model");
      const OutcomeModel& m = *policy.model;
      return SortByScore(candidates, [&](StoryId s) {
        auto j = m.StoryIndex(s);
        return m.beta0() + (j && m.kind() != ModelKind::kMean ? m.story_effect(*j) : 0.0);
      });
    }
    case PolicyKind::kPersonalized: {
      if (!policy.model) throw Error(ErrorCode::kConfig, "personalized policy without model");
      const OutcomeModel& m = *policy.model;
      return SortByScore(candidates,
                         [&](StoryId s) { return m.Logit(user.id, s); });
    }
  }
  return {};
}

Slate TopK(std::span<const StoryId> ranking, int k, int valid_day) {
  if (k < 1) throw Error(ErrorCode::kConfig, "slate size must be at least 1");
  Slate slate;
  std::size_t n = std::min<std::size_t>(k, ranking.size());
  slate.stories.assign(ranking.begin(), ranking.begin() + n);
  slate.valid_day = valid_day;
  slate.short_of_candidates = n < static_cast<std::size_t>(k);
  return slate;
}

SlateState WeeklyRefresh(const PolicySpec& policy, const UserProfile& user,
                         int week, std::span<const StoryId> candidates) {
  SlateState state;
  state.user = user.id;
  state.week = week;
  state.slate_size = policy.slate_size;
  state.base_ranking = RankStories(policy, user, week, candidates);
  state.slate = TopK(state.base_ranking, policy.slate_size, week * kDaysPerWeek);
  return state;
}

SlateState DailyUpdate(const SlateState& state, const DayActivity& activity,
                       int next_day) {
  if (!activity.active) return state;
  SlateState next = state;
  next.slate.valid_day = next_day;
  auto& slate = next.slate.stories;

  const std::vector<StoryId> top = TopBlock(state.slate);
  bool completed_top = std::any_of(top.begin(), top.end(), [&](StoryId s) {
    return activity.completed.count(s) > 0;
  });
  next.days_without_top_completion =
      completed_top ? 0 : next.days_without_top_completion + 1;

  for (StoryId s : activity.started) next.removed.insert(s);
  for (StoryId s : activity.completed) next.removed.insert(s);
  if (next.days_without_top_completion >= kTopBlockPatience) {
    for (StoryId s : top) next.removed.insert(s);
    next.days_without_top_completion = 0;
  }
  std::erase_if(slate, [&](StoryId s) { return next.removed.count(s) > 0; });

  std::set<StoryId> on_slate(slate.begin(), slate.end());
  for (StoryId s : next.base_ranking) {
    if (slate.size() >= static_cast<std::size_t>(next.slate_size)) break;
    if (next.removed.count(s) || on_slate.count(s)) continue;
    slate.push_back(s);
    on_slate.insert(s);
  }
  next.slate.short_of_candidates =
      slate.size() < static_cast<std::size_t>(next.slate_size);

  if (TopBlock(next.slate) != top) next.days_without_top_completion = 0;
  return next;
}

std::vector<double> RankExposure(std::size_t slate_length,
                                 std::span<const double> effects) {
  std::size_t n = std::min(slate_length, effects.size());
  double total = 0.0;
  for (std::size_t r = 0; r < effects.size(); ++r) {
    if (!(effects[r] >= 0.0) || !std::isfinite(effects[r])) {
      throw Error(ErrorCode::kConfig, "position effects must be finite and non-negative");
    }
    if (r < n) total += effects[r];
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kZeroMass, "position effects sum to zero over the slate");
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = effects[r] / total;
  return out;
}

std::map<StoryId, double> ExposureDistribution(const Slate& slate,
                                               std::span<const double> effects) {
  auto per_rank = RankExposure(slate.stories.size(), effects);
  std::map<StoryId, double> out;
  for (std::size_t r = 0; r < per_rank.size(); ++r) {
    out[slate.stories[r]] += per_rank[r];
  }
  return out;
}

EditorialScript ReadEditorialScript(std::istream& in) {
  std::string line;
  if (!ReadLine(in, line) || line != kScriptHeader) {
    throw ParseError(1, "expected header '" + std::string(kScriptHeader) + "'");
  }
  std::map<std::pair<int, int>, std::map<int, StoryId>> ranked;
  int n = 1;
  while (ReadLine(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = SplitCsv(line);
    if (f.size() != 4) throw ParseError(n, "expected 4 fields");
    auto grade = ParseNumber<int>(f[0]);
    auto week = ParseNumber<int>(f[1]);
    auto rank = ParseNumber<int>(f[2]);
    auto story = ParseNumber<std::uint32_t>(f[3]);
    if (!grade || !week || !rank || !story || *rank < 1) {
      throw ParseError(n, "malformed script row");
    }
    if (!ranked[{*grade, *week}].emplace(*rank, StoryId{*story}).second) {
      throw ParseError(n, "duplicate rank");
    }
  }
  EditorialScript script;
  for (auto& [key, by_rank] : ranked) {
    std::vector<StoryId> order;
    std::set<StoryId> seen;
    int expect = 1;
    for (auto& [rank, story] : by_rank) {
      if (rank != expect++) {
        throw Error(ErrorCode::kInvariant, "script ranks are not contiguous for grade " +
                                               std::to_string(key.first) + " week " +
                                               std::to_string(key.second));
      }
      if (!seen.insert(story).second) {
        throw Error(ErrorCode::kInvariant, "story listed twice in one script week");
      }
      order.push_back(story);
    }
    script.emplace(key, std::move(order));
  }
  return script;
}

void WriteEditorialScript(const EditorialScript& script, std::ostream& out) {
  out << kScriptHeader << '\n';
  for (const auto& [key, order] : script) {
    for (std::size_t r = 0; r < order.size(); ++r) {
      out << key.first << ',' << key.second << ',' << r + 1 << ','
          << Raw(order[r]) << '\n';
    }
  }
}

std::vector<double> ReadPositionEffects(std::istream& in) {
  std::vector<double> out;
  std::string line;
  while (ReadLine(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string token;
    while (fields >> token) {
      auto v = ParseReal(token);
      if (!v || *v < 0.0) throw Error(ErrorCode::kParse, "bad position effect '" + token + "'");
      out.push_back(*v);
    }
  }
  if (out.size() != static_cast<std::size_t>(kMaxSlateRank)) {
    throw Error(ErrorCode::kParse, "expected " + std::to_string(kMaxSlateRank) +
                                       " position effects, found " +
                                       std::to_string(out.size()));
  }
  return out;
}

void WritePositionEffects(std::span<const double> effects, std::ostream& out) {
  for (double e : effects) out << FormatReal(e) << '\n';
}

void AppendSlateRows(const SlateState& state, int day,
                     std::vector<SlateDumpRow>& out) {
  for (std::size_t r = 0; r < state.slate.stories.size(); ++r) {
    out.push_back({state.user, state.week, day, static_cast<int>(r + 1),
                   state.slate.stories[r]});
  }
}

void WriteSlateDump(std::span<const SlateDumpRow> rows, std::ostream& out) {
  out << kSlateHeader << '\n';
  for (const auto& r : rows) {
    out << Raw(r.user) << ',' << r.week << ',' << r.day << ',' << r.rank << ','
        << Raw(r.story) << '\n';
  }
}

std::vector<SlateDumpRow> ReadSlateDump(std::istream& in) {
  std::string line;
  if (!ReadLine(in, line) || line != kSlateHeader) {
    throw ParseError(1, "expected header '" + std::string(kSlateHeader) + "'");
  }
  std::vector<SlateDumpRow> rows;
  int n = 1;
  while (ReadLine(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = SplitCsv(line);
    if (f.size() != 5) throw ParseError(n, "expected 5 fields");
    auto user = ParseNumber<std::uint32_t>(f[0]);
    auto week = ParseNumber<int>(f[1]);
    auto day = ParseNumber<int>(f[2]);
    auto rank = ParseNumber<int>(f[3]);
    auto story = ParseNumber<std::uint32_t>(f[4]);
    if (!user || !week || !day || !rank || !story) throw ParseError(n, "malformed slate row");
    rows.push_back({UserId{*user}, *week, *day, *rank, StoryId{*story}});
  }
  return rows;
}

}  // namespace storylab
