// Copyright 2026 The Selfplay Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Fixed token alphabet shared by the program language, the prompt templates
// and the policy. Token ids are stable: they are written into run manifests
// and parameter snapshots, and a hash of the table guards snapshot reads.

#include <array>
#include <bitset>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace selfplay {

enum class Token : std::uint8_t {
  kPad = 0,
  // Program alphabet.
  kX,
  kConstM3, kConstM2, kConstM1, kConst0, kConst1, kConst2, kConst3,
  kNeg, kAdd, kSub, kMul, kMin, kMax, kIfPos, kCoin,
  // Literal tokens -9..9.
  kLitM9, kLitM8, kLitM7, kLitM6, kLitM5, kLitM4, kLitM3, kLitM2, kLitM1,
  kLit0, kLit1, kLit2, kLit3, kLit4, kLit5, kLit6, kLit7, kLit8, kLit9,
  // Role / mode / difficulty prefixes.
  kPropose, kModeDed, kModeAbd, kModeInd, kDiffEasy, kDiffMedium, kDiffHard,
  // Structural.
  kSep, kGo, kAnswer, kEnd,
};

inline constexpr std::size_t kVocabSize = static_cast<std::size_t>(Token::kEnd) + 1;
inline constexpr int kLiteralMin = -9;
inline constexpr int kLiteralMax = 9;
inline constexpr int kConstMin = -3;
inline constexpr int kConstMax = 3;

using TokenSet = std::bitset<kVocabSize>;
using TokenSeq = std::vector<Token>;

constexpr std::size_t index_of(Token t) { return static_cast<std::size_t>(t); }
constexpr Token token_at(std::size_t id) { return static_cast<Token>(id); }

enum class TaskMode : std::uint8_t { kDeduction = 0, kAbduction = 1, kInduction = 2 };
inline constexpr std::array<TaskMode, 3> kAllModes = {
    TaskMode::kDeduction, TaskMode::kAbduction, TaskMode::kInduction};

enum class Role : std::uint8_t { kProposer = 0, kSolver = 1 };
inline constexpr std::array<Role, 2> kAllRoles = {Role::kProposer, Role::kSolver};

enum class DifficultyBucket : std::uint8_t { kEasy = 0, kMedium = 1, kHard = 2 };

std::string_view mode_name(TaskMode mode);
std::string_view role_name(Role role);
std::string_view bucket_name(DifficultyBucket bucket);
std::optional<TaskMode> parse_mode(std::string_view name);

Token mode_token(TaskMode mode);
Token bucket_token(DifficultyBucket bucket);

// Literal tokens carry the integers -9..9.
constexpr bool is_literal(Token t) {
  return t >= Token::kLitM9 && t <= Token::kLit9;
}
constexpr bool is_constant(Token t) {
  return t >= Token::kConstM3 && t <= Token::kConst3;
}
constexpr bool is_program_token(Token t) {
  return t >= Token::kX && t <= Token::kCoin;
}
constexpr int literal_value(Token t) {
  return static_cast<int>(index_of(t)) - static_cast<int>(index_of(Token::kLit0));
}
constexpr int constant_value(Token t) {
  return static_cast<int>(index_of(t)) - static_cast<int>(index_of(Token::kConst0));
}
// Precondition: value in [-9, 9].
constexpr Token literal_token(int value) {
  return token_at(static_cast<std::size_t>(static_cast<int>(index_of(Token::kLit0)) + value));
}
// Precondition: value in [-3, 3].
constexpr Token constant_token(int value) {
  return token_at(static_cast<std::size_t>(static_cast<int>(index_of(Token::kConst0)) + value));
}

// Number of child expressions a program token consumes.
constexpr int arity(Token t) {
  switch (t) {
    case Token::kNeg: return 1;
    case Token::kAdd:
    case Token::kSub:
    case Token::kMul:
    case Token::kMin:
    case Token::kMax: return 2;
    case Token::kIfPos: return 3;
    default: return 0;
  }
}

std::string_view token_name(Token t);
std::optional<Token> token_from_name(std::string_view name);

// Space-separated token names.
std::string join_tokens(std::span<const Token> tokens);
// Throws std::invalid_argument naming the offending word.
TokenSeq split_tokens(std::string_view text);

TokenSet program_tokens();
TokenSet literal_tokens();

// FNV-1a over "id:name;" for every token; changes whenever the table does.
std::uint64_t vocab_hash();

}  // namespace selfplay
