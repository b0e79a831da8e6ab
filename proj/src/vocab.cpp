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

#include "selfplay/vocab.hpp"

#include <stdexcept>

namespace selfplay {

namespace {

constexpr std::array<std::string_view, kVocabSize> kNames = {
    "PAD",
    "X",
    "C-3", "C-2", "C-1", "C0", "C1", "C2", "C3",
    "NEG", "ADD", "SUB", "MUL", "MIN", "MAX", "IFPOS", "COIN",
    "-9", "-8", "-7", "-6", "-5", "-4", "-3", "-2", "-1",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "PROPOSE", "MODE_DED", "MODE_ABD", "MODE_IND", "DIFF_E", "DIFF_M", "DIFF_H",
    "SEP", "GO", "ANSWER", "END",
};

}  // namespace

std::string_view mode_name(TaskMode mode) {
  switch (mode) {
    case TaskMode::kDeduction: return "deduction";
    case TaskMode::kAbduction: return "abduction";
    case TaskMode::kInduction: return "induction";
  }
  return "?";
}

std::string_view role_name(Role role) {
  return role == Role::kProposer ? "propose" : "solve";
}

std::string_view bucket_name(DifficultyBucket bucket) {
  switch (bucket) {
    case DifficultyBucket::kEasy: return "easy";
    case DifficultyBucket::kMedium: return "medium";
    case DifficultyBucket::kHard: return "hard";
  }
  return "?";
}

std::optional<TaskMode> parse_mode(std::string_view name) {
  for (TaskMode m : kAllModes) {
    if (mode_name(m) == name) return m;
  }
  return std::nullopt;
}

Token mode_token(TaskMode mode) {
  switch (mode) {
    case TaskMode::kDeduction: return Token::kModeDed;
    case TaskMode::kAbduction: return Token::kModeAbd;
    case TaskMode::kInduction: return Token::kModeInd;
  }
  return Token::kPad;
}

Token bucket_token(DifficultyBucket bucket) {
  switch (bucket) {
    case DifficultyBucket::kEasy: return Token::kDiffEasy;
    case DifficultyBucket::kMedium: return Token::kDiffMedium;
    case DifficultyBucket::kHard: return Token::kDiffHard;
  }
  return Token::kPad;
}

std::string_view token_name(Token t) { return kNames[index_of(t)]; }

std::optional<Token> token_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (kNames[i] == name) return token_at(i);
  }
  return std::nullopt;
}

std::string join_tokens(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != 0) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

TokenSeq split_tokens(std::string_view text) {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && text[end] != ' ' && text[end] != '\t') ++end;
    auto word = text.substr(pos, end - pos);
    auto tok = token_from_name(word);
    if (!tok) throw std::invalid_argument("unknown token '" + std::string(word) + "'");
    out.push_back(*tok);
    pos = end;
  }
  return out;
}

TokenSet program_tokens() {
  TokenSet s;
  for (std::size_t i = index_of(Token::kX); i <= index_of(Token::kCoin); ++i) s.set(i);
  return s;
}

TokenSet literal_tokens() {
  TokenSet s;
  for (std::size_t i = index_of(Token::kLitM9); i <= index_of(Token::kLit9); ++i) s.set(i);
  return s;
}

std::uint64_t vocab_hash() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    for (char c : std::to_string(i)) mix(static_cast<unsigned char>(c));
    mix(':');
    for (char c : kNames[i]) mix(static_cast<unsigned char>(c));
    mix(';');
  }
  return h;
}

}  // namespace selfplay
