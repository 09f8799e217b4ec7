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
// User-story interaction logs: the record model, file ingestion and emission,
// outlier trimming and pre-period user covariates.
//
// Log files are comma separated with a mandatory header row:
//
//   user_id,story_id,day,session_id,section,slate_rank,outcome_kind
//
// `slate_rank` is empty for sections without a ranked slate. Two sidecar files
// describe the entities:
//
//   user_id,grade,channel,registration_day          (channel: B2B|B2C|PAID)
//   story_id,collection_tag,minutes_lo,minutes_hi

#ifndef STORYLAB_INTERACTION_LOG_H_
#define STORYLAB_INTERACTION_LOG_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "storylab/common.h"

namespace storylab {

enum class OutcomeKind : std::uint8_t {
  kCompleted,
  kStarted,
  kViewed,
  kSkipped,
  kNotShown,
};

// Story Engagement value of an outcome. NotShown has no value.
std::optional<double> ScoreOutcome(OutcomeKind kind);

std::string_view OutcomeToken(OutcomeKind kind);
std::optional<OutcomeKind> ParseOutcomeToken(std::string_view token);

enum class Channel : std::uint8_t { kB2B, kB2C, kPaid };

std::string_view ChannelToken(Channel channel);
std::optional<Channel> ParseChannelToken(std::string_view token);

struct UserProfile {
  UserId id{};
  int grade = 1;
  Channel channel = Channel::kB2C;
  int registration_day = 0;

  bool operator==(const UserProfile&) const = default;
};

struct StoryMeta {
  StoryId id{};
  std::string collection_tag;
  double minutes_lo = 1.0;
  double minutes_hi = 1.0;

  double ReadingTimeMidpoint() const { return 0.5 * (minutes_lo + minutes_hi); }
  bool operator==(const StoryMeta&) const = default;
};

// The section that carries the ranked slate. Every other section name is an
// unranked "other" section.
inline constexpr std::string_view kRecommendedSection = "RECOMMENDED";
inline constexpr std::string_view kOtherSection = "OTHER";
inline constexpr int kMaxSlateRank = 15;

struct InteractionRecord {
  UserId user{};
  StoryId story{};
  int day = 0;
  int session = 0;
  std::string section{kRecommendedSection};
  std::optional<int> slate_rank;
  OutcomeKind outcome = OutcomeKind::kNotShown;

  std::optional<double> value() const { return ScoreOutcome(outcome); }
  bool scored() const { return outcome != OutcomeKind::kNotShown; }
  bool in(std::string_view s) const { return section == s; }
  bool operator==(const InteractionRecord&) const = default;
};

struct Period {
  int first_day = 0;
  int last_day = 0;
  bool operator==(const Period&) const = default;
};

// A validated, immutable log. Records are sorted by (user, day, session) and
// keep their input order inside a session.
class LogDataset {
 public:
  LogDataset() = default;

  // Validates entity references, keys and ranks, then sorts. Throws
  // Error(kInvariant) on violations.
  static LogDataset Create(std::vector<InteractionRecord> records,
                           std::map<UserId, UserProfile> users,
                           std::map<StoryId, StoryMeta> stories);

  const std::vector<InteractionRecord>& records() const { return records_; }
  const std::map<UserId, UserProfile>& users() const { return users_; }
  const std::map<StoryId, StoryMeta>& stories() const { return stories_; }
  std::optional<Period> period() const { return period_; }
  bool empty() const { return records_.empty(); }

  const UserProfile* FindUser(UserId id) const;
  const StoryMeta* FindStory(StoryId id) const;

  // Keeps the records matching `keep`; entity indexes are unchanged.
  template <typename Pred>
  LogDataset FilterRecords(Pred keep) const {
    LogDataset out;
    out.users_ = users_;
    out.stories_ = stories_;
    for (const auto& r : records_) {
      if (keep(r)) out.records_.push_back(r);
    }
    out.RecomputePeriod();
    return out;
  }

  // Drops the given users together with all of their records.
  LogDataset WithoutUsers(const std::vector<UserId>& drop) const;

  bool operator==(const LogDataset&) const = default;

 private:
  void RecomputePeriod();

  std::vector<InteractionRecord> records_;
  std::map<UserId, UserProfile> users_;
  std::map<StoryId, StoryMeta> stories_;
  std::optional<Period> period_;
};

struct LogSchema {
  int min_grade = 1;
  int max_grade = 8;
  // When false, malformed lines are collected instead of thrown.
  bool strict = true;
};

struct RejectedLine {
  int line = 0;
  std::string reason;
};

struct IngestResult {
  LogDataset data;
  std::vector<RejectedLine> rejected;
  std::vector<UserId> auto_registered_users;
  std::vector<StoryId> auto_registered_stories;
  bool period_undefined = true;
};

// Reads a log plus optional sidecars. Entities seen in the log but missing
// from the sidecars are registered with default attributes.
IngestResult IngestLog(std::istream& log, std::istream* users,
                       std::istream* stories, const LogSchema& schema = {});
IngestResult IngestLogFile(const std::filesystem::path& log,
                           const std::optional<std::filesystem::path>& users,
                           const std::optional<std::filesystem::path>& stories,
                           const LogSchema& schema = {});

void WriteLog(const LogDataset& data, std::ostream& out);
void WriteUsers(const LogDataset& data, std::ostream& out);
void WriteStories(const LogDataset& data, std::ostream& out);

// Directory layout used by every tool: log.csv, users.csv, stories.csv.
void EmitDataset(const LogDataset& data, const std::filesystem::path& dir);
IngestResult IngestDirectory(const std::filesystem::path& dir,
                             const LogSchema& schema = {});

// Stable content hash of a dataset, for manifests and model headers.
std::uint64_t Fingerprint(const LogDataset& data);

// Number of entries selected by a "top q" rule over n candidates:
// ceil(q * n), robust to floating point noise in the product.
std::size_t TopShareCount(double q, std::size_t n);

struct TrimResult {
  LogDataset data;
  std::vector<UserId> dropped_users;
  std::string note;
};

// Drops every user who completed more than `max_completions_per_session`
// stories in any single session.
TrimResult TrimOutliers(const LogDataset& data,
                        int max_completions_per_session = 10);

// Drops users whose maximum daily completion count is in the top `pct`
// share. Users tied with the cut-off value are dropped too, unless the tie
// covers every user, in which case nothing is dropped and `note` says so.
TrimResult TrimTopDailyPercentile(const LogDataset& data, double pct = 0.05);

struct InteractionCounts {
  std::map<UserId, int> per_user;
  std::map<StoryId, int> per_story;
};

// Counts scored (non-NotShown) records.
InteractionCounts CountInteractions(const LogDataset& data);

struct CovariateOptions {
  double niche_story_quantile = 0.25;
  double niche_user_share = 0.5;
  double heavy_quantile = 0.5;
  std::string section{kRecommendedSection};
  int recent_window_days = 14;
};

struct UserCovariates {
  double past_total_engagement = 0.0;
  int past_stories_completed = 0;
  int max_streak = 0;
  bool is_niche = false;
  bool is_heavy_engagement = false;
  bool is_heavy_completion = false;
  bool used_section_before = false;
  // No scored record before the cutoff; every other field is zero/false.
  bool empty_history = false;

  bool operator==(const UserCovariates&) const = default;
};

// Covariates for every registered user from records with day < cutoff_day.
std::map<UserId, UserCovariates> ComputeCovariates(
    const LogDataset& data, int cutoff_day,
    const CovariateOptions& options = {});

}  // namespace storylab

#endif  // STORYLAB_INTERACTION_LOG_H_
