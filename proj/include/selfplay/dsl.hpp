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

// Micro program language used as the verifiable environment.
//
//   P := X | C(-3..3) | NEG P | ADD P P | SUB P P | MUL P P
//      | MIN P P | MAX P P | IFPOS P P P | COIN
//
// Programs are prefix token sequences of at most 16 tokens. IFPOS a b c is b
// when a > 0 and c otherwise; only the taken branch is evaluated. COIN yields
// a seed-dependent 0/1 and exists so that the proposal validator has
// something to reject.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "selfplay/vocab.hpp"

namespace selfplay {

inline constexpr std::size_t kMaxProgramTokens = 16;
inline constexpr int kMaxSteps = 64;
inline constexpr int kValueBound = 9999;

enum class ValueKind : std::uint8_t { kInt };

struct Value {
  ValueKind kind = ValueKind::kInt;
  int int_val = 0;

  static constexpr Value integer(int v) { return Value{ValueKind::kInt, v}; }
  // Type-aware: kind and payload must both match.
  friend constexpr bool operator==(const Value&, const Value&) = default;
};

constexpr bool is_literal_value(Value v) {
  return v.kind == ValueKind::kInt && v.int_val >= kLiteralMin && v.int_val <= kLiteralMax;
}

struct ParseResult;
ParseResult parse(std::span<const Token> tokens);

class Program {
 public:
  // The identity program X.
  Program() : tokens_{Token::kX} {}

  std::span<const Token> tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool contains(Token t) const;
  std::string to_string() const { return join_tokens(tokens_); }

  friend bool operator==(const Program&, const Program&) = default;
  friend auto operator<=>(const Program&, const Program&) = default;

 private:
  friend ParseResult parse(std::span<const Token> tokens);
  explicit Program(TokenSeq tokens) : tokens_(std::move(tokens)) {}
  TokenSeq tokens_;
};

enum class SyntaxErrorKind : std::uint8_t {
  kNone,
  kArityUnderflow,  // ran out of tokens before the expression closed
  kTrailingTokens,  // a complete expression followed by more tokens
  kTooLong,         // more than kMaxProgramTokens tokens
  kIllegalToken,    // a token outside the program alphabet
};

struct SyntaxError {
  SyntaxErrorKind kind = SyntaxErrorKind::kNone;
  std::size_t position = 0;

  std::string message() const;
};

struct ParseResult {
  std::optional<Program> program;
  SyntaxError error;

  bool ok() const { return program.has_value(); }
};

enum class ExecStatus : std::uint8_t { kOk, kOverflow, kIllegalToken, kStepLimit, kNondeterministic };

std::string_view exec_status_name(ExecStatus status);

struct ExecOutcome {
  ExecStatus status = ExecStatus::kOk;
  std::optional<Value> value;  // present iff status == kOk
  int steps = 0;

  bool ok() const { return status == ExecStatus::kOk; }
  friend bool operator==(const ExecOutcome&, const ExecOutcome&) = default;
};

struct ExecLimits {
  int max_steps = kMaxSteps;
  int value_bound = kValueBound;
};

// Never throws; every failure is a status code. One step per evaluated node.
ExecOutcome evaluate(const Program& program, Value input, std::uint64_t seed,
                     const ExecLimits& limits = {});

// Runs twice under different seeds; kNondeterministic if the outcomes differ.
ExecOutcome evaluate_twice(const Program& program, Value input, std::uint64_t seed_a,
                           std::uint64_t seed_b);

// A validated (program, input, output) task record.
struct Triplet {
  Program program;
  Value input;
  Value output;
  int created_iter = 0;
  DifficultyBucket difficulty_bucket = DifficultyBucket::kEasy;
};

// >= 0.75 easy, <= 0.25 hard, medium in between.
DifficultyBucket bucket_for_solve_rate(double solve_rate);

struct ValidationReport {
  bool syntax_ok = false;
  bool safety_ok = false;
  bool deterministic = false;
  bool output_in_range = false;
  std::optional<Triplet> triplet;  // present iff all four flags hold

  bool valid() const { return triplet.has_value(); }
};

// Mirrors the proposal pipeline: parse, reject unsafe opcodes, execute twice
// under distinct seeds, require an in-range literal output.
ValidationReport validate_proposal(std::span<const Token> program_tokens, Value input,
                                   int created_iter = 0);

}  // namespace selfplay
