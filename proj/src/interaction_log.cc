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
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <tuple>
#include <unordered_set>

#include "text_io.h"

namespace storylab {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kInvariant: return "InvariantError";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kEmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::kNoScorableRecords: return "NoScorableRecords";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kDegenerateArm: return "DegenerateArm";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kPropensityOutOfRange: return "PropensityOutOfRange";
    case ErrorCode::kZeroMass: return "ZeroMass";
    case ErrorCode::kCoverageViolation: return "CoverageViolation";
    case ErrorCode::kScaleMismatch: return "ScaleMismatch";
    case ErrorCode::kIo: return "IoError";
  }
  return "Error";
}

std::optional<double> ScoreOutcome(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::kCompleted: return 1.0;
    case OutcomeKind::kStarted: return 0.5;
    case OutcomeKind::kViewed: return 0.3;
    case OutcomeKind::kSkipped: return 0.0;
    case OutcomeKind::kNotShown: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view OutcomeToken(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::kCompleted: return "COMPLETED";
    case OutcomeKind::kStarted: return "STARTED";
    case OutcomeKind::kViewed: return "VIEWED";
    case OutcomeKind::kSkipped: return "SKIPPED";
    case OutcomeKind::kNotShown: return "NOT_SHOWN";
  }
  return "";
}

std::optional<OutcomeKind> ParseOutcomeToken(std::string_view token) {
  for (auto kind : {OutcomeKind::kCompleted, OutcomeKind::kStarted,
                    OutcomeKind::kViewed, OutcomeKind::kSkipped,
                    OutcomeKind::kNotShown}) {
    if (OutcomeToken(kind) == token) return kind;
  }
  return std::nullopt;
}

std::string_view ChannelToken(Channel channel) {
  switch (channel) {
    case Channel::kB2B: return "B2B";
    case Channel::kB2C: return "B2C";
    case Channel::kPaid: return "PAID";
  }
  return "";
}

std::optional<Channel> ParseChannelToken(std::string_view token) {
  for (auto c : {Channel::kB2B, Channel::kB2C, Channel::kPaid}) {
    if (ChannelToken(c) == token) return c;
  }
  return std::nullopt;
}

namespace {

using text_io::FormatReal;
using text_io::ParseNumber;
using text_io::ParseReal;
using text_io::ReadLine;
using text_io::SplitCsv;

using RecordKey = std::tuple<std::uint32_t, std::uint32_t, int, int>;

RecordKey KeyOf(const InteractionRecord& r) {
  return {Raw(r.user), Raw(r.story), r.day, r.session};
}

// Empty string means the record is valid.
std::string CheckRecordShape(const InteractionRecord& r) {
  const bool ranked = r.section == kRecommendedSection;
  if (r.section.empty()) return "empty section";
  if (ranked && !r.slate_rank) return "ranked section without slate_rank";
  if (!ranked && r.slate_rank) return "slate_rank outside the ranked section";
  if (r.slate_rank && (*r.slate_rank < 1 || *r.slate_rank > kMaxSlateRank)) {
    return "slate_rank " + std::to_string(*r.slate_rank) + " outside 1.." +
           std::to_string(kMaxSlateRank);
  }
  return {};
}

constexpr std::string_view kLogHeader =
    "user_id,story_id,day,session_id,section,slate_rank,outcome_kind";
constexpr std::string_view kUserHeader =
    "user_id,grade,channel,registration_day";
constexpr std::string_view kStoryHeader =
    "story_id,collection_tag,minutes_lo,minutes_hi";

std::map<UserId, UserProfile> ReadUsers(std::istream& in,
                                        const LogSchema& schema) {
  std::map<UserId, UserProfile> users;
  std::string line;
  if (!ReadLine(in, line)) return users;
  if (line != kUserHeader) throw ParseError(1, "bad user sidecar header");
  int n = 1;
  while (ReadLine(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = SplitCsv(line);
    if (f.size() != 4) throw ParseError(n, "user sidecar expects 4 fields");
    auto id = ParseNumber<std::uint32_t>(f[0]);
    auto grade = ParseNumber<int>(f[1]);
    auto channel = ParseChannelToken(f[2]);
    auto reg = ParseNumber<int>(f[3]);
    if (!id || !grade || !channel || !reg) {
      throw ParseError(n, "malformed user sidecar row");
    }
    if (*grade < schema.min_grade || *grade > schema.max_grade) {
      throw Error(ErrorCode::kInvariant,
                  "user sidecar line " + std::to_string(n) + ": grade " +
                      std::to_string(*grade) + " out of range");
    }
    UserProfile p{UserId{*id}, *grade, *channel, *reg};
    if (!users.emplace(p.id, p).second) {
      throw Error(ErrorCode::kInvariant, "duplicate user " + std::to_string(*id));
    }
  }
  return users;
}

std::map<StoryId, StoryMeta> ReadStories(std::istream& in) {
  std::map<StoryId, StoryMeta> stories;
  std::string line;
  if (!ReadLine(in, line)) return stories;
  if (line != kStoryHeader) throw ParseError(1, "bad story sidecar header");
  int n = 1;
  while (ReadLine(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = SplitCsv(line);
    if (f.size() != 4) throw ParseError(n, "story sidecar expects 4 fields");
    auto id = ParseNumber<std::uint32_t>(f[0]);
    auto lo = ParseReal(f[2]);
    auto hi = ParseReal(f[3]);
    if (!id || !lo || !hi) throw ParseError(n, "malformed story sidecar row");
    if (!(*lo > 0.0) || *hi < *lo) {
      throw Error(ErrorCode::kInvariant,
                  "story sidecar line " + std::to_string(n) +
                      ": reading-time interval must satisfy 0 < lo <= hi");
    }
    StoryMeta m{StoryId{*id}, std::string(f[1]), *lo, *hi};
    if (!stories.emplace(m.id, m).second) {
      throw Error(ErrorCode::kInvariant,
                  "duplicate story " + std::to_string(*id));
    }
  }
  return stories;
}

}  // namespace

LogDataset LogDataset::Create(std::vector<InteractionRecord> records,
                              std::map<UserId, UserProfile> users,
                              std::map<StoryId, StoryMeta> stories) {
  std::set<RecordKey> keys;
  for (const auto& r : records) {
    if (!users.count(r.user)) {
      throw Error(ErrorCode::kInvariant,
                  "record references unregistered user " +
                      std::to_string(Raw(r.user)));
    }
    if (!stories.count(r.story)) {
      throw Error(ErrorCode::kInvariant,
                  "record references unregistered story " +
                      std::to_string(Raw(r.story)));
    }
    if (auto why = CheckRecordShape(r); !why.empty()) {
      throw Error(ErrorCode::kInvariant, why);
    }
    if (!keys.insert(KeyOf(r)).second) {
      throw Error(ErrorCode::kInvariant,
                  "duplicate (user, story, day, session) key for user " +
                      std::to_string(Raw(r.user)));
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) {
                     return std::tuple(Raw(a.user), a.day, a.session) <
                            std::tuple(Raw(b.user), b.day, b.session);
                   });
  LogDataset out;
  out.records_ = std::move(records);
  out.users_ = std::move(users);
  out.stories_ = std::move(stories);
  out.RecomputePeriod();
  return out;
}

void LogDataset::RecomputePeriod() {
  period_.reset();
  for (const auto& r : records_) {
    if (!period_) {
      period_ = Period{r.day, r.day};
    } else {
      period_->first_day = std::min(period_->first_day, r.day);
      period_->last_day = std::max(period_->last_day, r.day);
    }
  }
}

const UserProfile* LogDataset::FindUser(UserId id) const {
  auto it = users_.find(id);
  return it == users_.end() ? nullptr : &it->second;
}

const StoryMeta* LogDataset::FindStory(StoryId id) const {
  auto it = stories_.find(id);
  return it == stories_.end() ? nullptr : &it->second;
}

LogDataset LogDataset::WithoutUsers(const std::vector<UserId>& drop) const {
  std::set<UserId> dropped(drop.begin(), drop.end());
  LogDataset out = FilterRecords(
      [&](const InteractionRecord& r) { return !dropped.count(r.user); });
  for (auto id : dropped) out.users_.erase(id);
  return out;
}

IngestResult IngestLog(std::istream& log, std::istream* users,
                       std::istream* stories, const LogSchema& schema) {
  IngestResult result;
  auto user_index = users ? ReadUsers(*users, schema)
                          : std::map<UserId, UserProfile>{};
  auto story_index = stories ? ReadStories(*stories)
                             : std::map<StoryId, StoryMeta>{};

  std::vector<InteractionRecord> records;
  std::set<RecordKey> keys;
  std::string line;
  int n = 0;

  auto reject = [&](int line_no, const std::string& reason, bool invariant) {
    if (schema.strict) {
      if (invariant) {
        throw Error(ErrorCode::kInvariant,
                    "line " + std::to_string(line_no) + ": " + reason);
      }
      throw ParseError(line_no, reason);
    }
    result.rejected.push_back({line_no, reason});
  };

  if (ReadLine(log, line)) {
    n = 1;
    if (line != kLogHeader) {
      throw ParseError(1, "bad log header, expected '" +
                              std::string(kLogHeader) + "'");
    }
  }
  while (ReadLine(log, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = SplitCsv(line);
    if (f.size() != 7) {
      reject(n, "expected 7 fields, got " + std::to_string(f.size()), false);
      continue;
    }
    auto uid = ParseNumber<std::uint32_t>(f[0]);
    auto sid = ParseNumber<std::uint32_t>(f[1]);
    auto day = ParseNumber<int>(f[2]);
    auto session = ParseNumber<int>(f[3]);
    auto kind = ParseOutcomeToken(f[6]);
    if (!uid || !sid || !day || !session) {
      reject(n, "malformed identifier, day or session field", false);
      continue;
    }
    if (f[4].empty()) {
      reject(n, "empty section", false);
      continue;
    }
    if (!kind) {
      reject(n, "unknown outcome_kind '" + std::string(f[6]) + "'", false);
      continue;
    }
    InteractionRecord r;
    r.user = UserId{*uid};
    r.story = StoryId{*sid};
    r.day = *day;
    r.session = *session;
    r.section = std::string(f[4]);
    r.outcome = *kind;
    if (!f[5].empty()) {
      auto rank = ParseNumber<int>(f[5]);
      if (!rank) {
        reject(n, "malformed slate_rank", false);
        continue;
      }
      r.slate_rank = *rank;
    }
    if (auto why = CheckRecordShape(r); !why.empty()) {
      reject(n, why, true);
      continue;
    }
    if (!keys.insert(KeyOf(r)).second) {
      reject(n, "duplicate (user, story, day, session) key", true);
      continue;
    }
    if (!user_index.count(r.user)) {
      UserProfile p;
      p.id = r.user;
      p.grade = schema.min_grade;
      p.registration_day = r.day;
      user_index.emplace(r.user, p);
      result.auto_registered_users.push_back(r.user);
    }
    if (!story_index.count(r.story)) {
      StoryMeta m;
      m.id = r.story;
      m.collection_tag = "unknown";
      story_index.emplace(r.story, m);
      result.auto_registered_stories.push_back(r.story);
    }
    records.push_back(std::move(r));
  }
  result.data = LogDataset::Create(std::move(records), std::move(user_index),
                                   std::move(story_index));
  result.period_undefined = !result.data.period().has_value();
  return result;
}

IngestResult IngestLogFile(const std::filesystem::path& log,
                           const std::optional<std::filesystem::path>& users,
                           const std::optional<std::filesystem::path>& stories,
                           const LogSchema& schema) {
  std::ifstream log_in(log);
  if (!log_in) throw Error(ErrorCode::kIo, "cannot open " + log.string());
  std::ifstream users_in, stories_in;
  if (users) {
    users_in.open(*users);
    if (!users_in) throw Error(ErrorCode::kIo, "cannot open " + users->string());
  }
  if (stories) {
    stories_in.open(*stories);
    if (!stories_in) {
      throw Error(ErrorCode::kIo, "cannot open " + stories->string());
    }
  }
  return IngestLog(log_in, users ? &users_in : nullptr,
                   stories ? &stories_in : nullptr, schema);
}

void WriteLog(const LogDataset& data, std::ostream& out) {
  out << kLogHeader << '\n';
  for (const auto& r : data.records()) {
    out << Raw(r.user) << ',' << Raw(r.story) << ',' << r.day << ','
        << r.session << ',' << r.section << ',';
    if (r.slate_rank) out << *r.slate_rank;
    out << ',' << OutcomeToken(r.outcome) << '\n';
  }
}

void WriteUsers(const LogDataset& data, std::ostream& out) {
  out << kUserHeader << '\n';
  for (const auto& [id, p] : data.users()) {
    out << Raw(id) << ',' << p.grade << ',' << ChannelToken(p.channel) << ','
        << p.registration_day << '\n';
  }
}

void WriteStories(const LogDataset& data, std::ostream& out) {
  out << kStoryHeader << '\n';
  for (const auto& [id, m] : data.stories()) {
    if (m.collection_tag.find(',') != std::string::npos) {
      throw Error(ErrorCode::kInvariant, "collection tag contains a comma");
    }
    out << Raw(id) << ',' << m.collection_tag << ',' << FormatReal(m.minutes_lo)
        << ',' << FormatReal(m.minutes_hi) << '\n';
  }
}

void EmitDataset(const LogDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream log(dir / "log.csv"), users(dir / "users.csv"),
      stories(dir / "stories.csv");
  if (!log || !users || !stories) {
    throw Error(ErrorCode::kIo, "cannot write dataset to " + dir.string());
  }
  WriteLog(data, log);
  WriteUsers(data, users);
  WriteStories(data, stories);
}

IngestResult IngestDirectory(const std::filesystem::path& dir,
                             const LogSchema& schema) {
  return IngestLogFile(dir / "log.csv", dir / "users.csv", dir / "stories.csv",
                       schema);
}

std::uint64_t Fingerprint(const LogDataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& r : data.records()) {
    mix(Raw(r.user));
    mix(Raw(r.story));
    mix(static_cast<std::uint64_t>(r.day));
    mix(static_cast<std::uint64_t>(r.session));
    h = Fnv1a(r.section, h);
    mix(r.slate_rank.value_or(0));
    mix(static_cast<std::uint64_t>(r.outcome));
  }
  mix(data.users().size());
  mix(data.stories().size());
  return h;
}

std::size_t TopShareCount(double q, std::size_t n) {
  if (q <= 0.0 || n == 0) return 0;
  double raw = q * static_cast<double>(n);
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(count, n);
}

namespace {

// Keys ranked by value descending, ties by ascending key.
template <typename Key>
std::vector<Key> RankDescending(const std::map<Key, double>& values) {
  std::vector<std::pair<Key, double>> v(values.begin(), values.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  std::vector<Key> out;
  out.reserve(v.size());
  for (const auto& [k, _] : v) out.push_back(k);
  return out;
}

}  // namespace

TrimResult TrimOutliers(const LogDataset& data,
                        int max_completions_per_session) {
  std::map<std::tuple<std::uint32_t, int, int>, int> per_session;
  for (const auto& r : data.records()) {
    if (r.outcome == OutcomeKind::kCompleted) {
      ++per_session[{Raw(r.user), r.day, r.session}];
    }
  }
  std::set<UserId> drop;
  for (const auto& [key, completed] : per_session) {
    if (completed > max_completions_per_session) {
      drop.insert(UserId{std::get<0>(key)});
    }
  }
  TrimResult out;
  out.dropped_users.assign(drop.begin(), drop.end());
  out.data = data.WithoutUsers(out.dropped_users);
  out.note = "dropped " + std::to_string(drop.size()) +
             " users with a session above " +
             std::to_string(max_completions_per_session) + " completions";
  return out;
}

TrimResult TrimTopDailyPercentile(const LogDataset& data, double pct) {
  TrimResult out;
  if (pct <= 0.0 || data.users().empty()) {
    out.data = data;
    out.note = "pct <= 0: identity";
    return out;
  }
  std::map<std::pair<std::uint32_t, int>, int> per_day;
  for (const auto& r : data.records()) {
    if (r.outcome == OutcomeKind::kCompleted) ++per_day[{Raw(r.user), r.day}];
  }
  std::map<UserId, double> max_daily;
  for (const auto& [id, _] : data.users()) max_daily[id] = 0.0;
  for (const auto& [key, count] : per_day) {
    auto& m = max_daily[UserId{key.first}];
    m = std::max(m, static_cast<double>(count));
  }
  auto ranked = RankDescending(max_daily);
  std::size_t top = TopShareCount(pct, ranked.size());
  if (top == 0) {
    out.data = data;
    out.note = "top share selects no user";
    return out;
  }
  double cutoff = max_daily[ranked[top - 1]];
  std::vector<UserId> drop;
  for (auto id : ranked) {
    if (max_daily[id] >= cutoff) drop.push_back(id);
  }
  if (drop.size() == ranked.size()) {
    out.data = data;
    out.note = "all users tied at the cut-off value " + FormatReal(cutoff) +
               "; none dropped";
    return out;
  }
  std::sort(drop.begin(), drop.end());
  out.dropped_users = drop;
  out.data = data.WithoutUsers(drop);
  out.note = "dropped " + std::to_string(drop.size()) +
             " users with max daily completions >= " + FormatReal(cutoff) +
             (drop.size() > top ? " (ties at the cut-off dropped)" : "");
  return out;
}

InteractionCounts CountInteractions(const LogDataset& data) {
  InteractionCounts out;
  for (const auto& r : data.records()) {
    if (!r.scored()) continue;
    ++out.per_user[r.user];
    ++out.per_story[r.story];
  }
  return out;
}

std::map<UserId, UserCovariates> ComputeCovariates(
    const LogDataset& data, int cutoff_day, const CovariateOptions& options) {
  struct Acc {
    double engagement = 0.0;
    int completed = 0;
    std::set<int> completion_days;
    std::vector<StoryId> interacted;
    bool used_section = false;
  };
  std::map<UserId, Acc> acc;
  std::map<StoryId, double> story_completions;
  for (const auto& r : data.records()) {
    if (r.day >= cutoff_day || !r.scored()) continue;
    auto& a = acc[r.user];
    a.engagement += *r.value();
    a.interacted.push_back(r.story);
    story_completions.try_emplace(r.story, 0.0);
    if (r.outcome == OutcomeKind::kCompleted) {
      ++a.completed;
      a.completion_days.insert(r.day);
      story_completions[r.story] += 1.0;
    }
    if (r.in(options.section) &&
        r.day >= cutoff_day - options.recent_window_days) {
      a.used_section = true;
    }
  }

  auto ranked_stories = RankDescending(story_completions);
  std::set<StoryId> popular(
      ranked_stories.begin(),
      ranked_stories.begin() +
          TopShareCount(options.niche_story_quantile, ranked_stories.size()));

  std::map<UserId, double> engagement, completions;
  for (const auto& [id, _] : data.users()) {
    auto it = acc.find(id);
    engagement[id] = it == acc.end() ? 0.0 : it->second.engagement;
    completions[id] = it == acc.end() ? 0.0 : it->second.completed;
  }
  auto heavy_set = [&](const std::map<UserId, double>& v) {
    auto ranked = RankDescending(v);
    return std::set<UserId>(
        ranked.begin(),
        ranked.begin() + TopShareCount(options.heavy_quantile, ranked.size()));
  };
  auto heavy_engagement = heavy_set(engagement);
  auto heavy_completion = heavy_set(completions);

  std::map<UserId, UserCovariates> out;
  for (const auto& [id, _] : data.users()) {
    UserCovariates c;
    auto it = acc.find(id);
    if (it == acc.end()) {
      c.empty_history = true;
      out.emplace(id, c);
      continue;
    }
    const Acc& a = it->second;
    c.past_total_engagement = a.engagement;
    c.past_stories_completed = a.completed;
    int streak = 0, prev = 0;
    for (int d : a.completion_days) {
      streak = (streak > 0 && d == prev + 1) ? streak + 1 : 1;
      c.max_streak = std::max(c.max_streak, streak);
      prev = d;
    }
    std::size_t popular_hits = 0;
    for (auto s : a.interacted) popular_hits += popular.count(s);
    double share = static_cast<double>(popular_hits) /
                   static_cast<double>(a.interacted.size());
    c.is_niche = share < options.niche_user_share;
    c.is_heavy_engagement = heavy_engagement.count(id) > 0;
    c.is_heavy_completion = heavy_completion.count(id) > 0;
    c.used_section_before = a.used_section;
    out.emplace(id, c);
  }
  return out;
}

}  // namespace storylab
