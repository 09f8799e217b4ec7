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
// Identifiers, error types and seeding helpers shared by every module.

#ifndef STORYLAB_COMMON_H_
#define STORYLAB_COMMON_H_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace storylab {

enum class UserId : std::uint32_t {};
enum class StoryId : std::uint32_t {};

constexpr std::uint32_t Raw(UserId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t Raw(StoryId id) {
  return static_cast<std::uint32_t>(id);
}

enum class ErrorCode {
  kParse,
  kInvariant,
  kConfig,
  kNonFiniteLoss,
  kEmptyTrainSplit,
  kNoScorableRecords,
  kCorruptFile,
  kVersionMismatch,
  kDegenerateArm,
  kRankDeficient,
  kPropensityOutOfRange,
  kZeroMass,
  kCoverageViolation,
  kScaleMismatch,
  kIo,
};

const char* ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// A malformed input line. Line numbers are 1-based and count the header.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& reason)
      : Error(ErrorCode::kParse, "line " + std::to_string(line) + ": " + reason),
        line_(line),
        reason_(reason) {}
  int line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  int line_;
  std::string reason_;
};

// SplitMix64 finalizer. Used to derive independent, stable sub-seeds.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t HashCombine(std::uint64_t seed, std::uint64_t value) {
  return Mix64(seed ^ Mix64(value));
}

// Stable 64-bit FNV-1a over bytes; used for stage tags and fingerprints.
constexpr std::uint64_t Fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t StageSeed(std::uint64_t root, std::string_view stage) {
  return HashCombine(root, Fnv1a(stage));
}

}  // namespace storylab

#endif  // STORYLAB_COMMON_H_
