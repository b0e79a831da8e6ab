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

#include "selfplay/dsl.hpp"

#include <algorithm>
#include <random>

namespace selfplay {

bool Program::contains(Token t) const {
  return std::find(tokens_.begin(), tokens_.end(), t) != tokens_.end();
}

std::string SyntaxError::message() const {
  std::string what;
  switch (kind) {
    case SyntaxErrorKind::kNone: return "ok";
    case SyntaxErrorKind::kArityUnderflow: what = "expression incomplete"; break;
    case SyntaxErrorKind::kTrailingTokens: what = "trailing tokens"; break;
    case SyntaxErrorKind::kTooLong: what = "program longer than 16 tokens"; break;
    case SyntaxErrorKind::kIllegalToken: what = "token outside the program alphabet"; break;
  }
  return what + " at position " + std::to_string(position);
}

ParseResult parse(std::span<const Token> tokens) {
  ParseResult result;
  if (tokens.size() > kMaxProgramTokens) {
    result.error = {SyntaxErrorKind::kTooLong, kMaxProgramTokens};
    return result;
  }
  // `need` counts subexpressions still owed; a complete expression has none.
  int need = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_program_token(tokens[i])) {
      result.error = {SyntaxErrorKind::kIllegalToken, i};
      return result;
    }
    if (need == 0) {
      result.error = {SyntaxErrorKind::kTrailingTokens, i};
      return result;
    }
    need += arity(tokens[i]) - 1;
  }
  if (need != 0) {
    result.error = {SyntaxErrorKind::kArityUnderflow, tokens.size()};
    return result;
  }
  result.program = Program(TokenSeq(tokens.begin(), tokens.end()));
  return result;
}

std::string_view exec_status_name(ExecStatus status) {
  switch (status) {
    case ExecStatus::kOk: return "ok";
    case ExecStatus::kOverflow: return "overflow";
    case ExecStatus::kIllegalToken: return "illegal_token";
    case ExecStatus::kStepLimit: return "step_limit";
    case ExecStatus::kNondeterministic: return "nondeterministic";
  }
  return "?";
}

namespace {

class Interpreter {
 public:
  Interpreter(std::span<const Token> tokens, long long input, std::uint64_t seed,
              const ExecLimits& limits)
      : tokens_(tokens), input_(input), coin_(seed), limits_(limits) {}

  ExecOutcome run() {
    auto v = eval();
    ExecOutcome out;
    out.steps = steps_;
    if (!v) {
      out.status = failure_;
      return out;
    }
    out.value = Value::integer(static_cast<int>(*v));
    return out;
  }

 private:
  std::optional<long long> fail(ExecStatus s) {
    failure_ = s;
    return std::nullopt;
  }

  std::optional<long long> bounded(long long v) {
    if (v > limits_.value_bound || v < -limits_.value_bound) return fail(ExecStatus::kOverflow);
    return v;
  }

  // Advances past one complete subexpression without evaluating it.
  void skip() {
    int need = 1;
    while (need > 0 && pos_ < tokens_.size()) {
      need += arity(tokens_[pos_++]) - 1;
    }
  }

  std::optional<long long> eval() {
    if (pos_ >= tokens_.size()) return fail(ExecStatus::kIllegalToken);
    if (++steps_ > limits_.max_steps) return fail(ExecStatus::kStepLimit);
    const Token t = tokens_[pos_++];
    if (is_constant(t)) return bounded(constant_value(t));
    switch (t) {
      case Token::kX: return bounded(input_);
      case Token::kCoin: return static_cast<long long>(coin_() & 1U);
      case Token::kNeg: {
        auto a = eval();
        if (!a) return a;
        return bounded(-*a);
      }
      case Token::kAdd:
      case Token::kSub:
      case Token::kMul:
      case Token::kMin:
      case Token::kMax: {
        auto a = eval();
        if (!a) return a;
        auto b = eval();
        if (!b) return b;
        switch (t) {
          case Token::kAdd: return bounded(*a + *b);
          case Token::kSub: return bounded(*a - *b);
          case Token::kMul: return bounded(*a * *b);
          case Token::kMin: return std::min(*a, *b);
          default: return std::max(*a, *b);
        }
      }
      case Token::kIfPos: {
        auto cond = eval();
        if (!cond) return cond;
        if (*cond > 0) {
          auto r = eval();
          if (r) skip();
          return r;
        }
        skip();
        return eval();
      }
      default: return fail(ExecStatus::kIllegalToken);
    }
  }

  std::span<const Token> tokens_;
  long long input_;
  std::mt19937_64 coin_;
  ExecLimits limits_;
  std::size_t pos_ = 0;
  int steps_ = 0;
  ExecStatus failure_ = ExecStatus::kOk;
};

constexpr std::uint64_t kValidationSeedA = 0x5eed'0000'0000'0001ULL;
constexpr std::uint64_t kValidationSeedB = 0x5eed'0000'0000'0002ULL;

}  // namespace

ExecOutcome evaluate(const Program& program, Value input, std::uint64_t seed,
                     const ExecLimits& limits) {
  return Interpreter(program.tokens(), input.int_val, seed, limits).run();
}

ExecOutcome evaluate_twice(const Program& program, Value input, std::uint64_t seed_a,
                           std::uint64_t seed_b) {
  ExecOutcome a = evaluate(program, input, seed_a);
  ExecOutcome b = evaluate(program, input, seed_b);
  if (a == b) return a;
  return ExecOutcome{ExecStatus::kNondeterministic, std::nullopt, std::max(a.steps, b.steps)};
}

DifficultyBucket bucket_for_solve_rate(double solve_rate) {
  if (solve_rate >= 0.75) return DifficultyBucket::kEasy;
  if (solve_rate <= 0.25) return DifficultyBucket::kHard;
  return DifficultyBucket::kMedium;
}

ValidationReport validate_proposal(std::span<const Token> program_tokens, Value input,
                                   int created_iter) {
  ValidationReport report;
  ParseResult parsed = parse(program_tokens);
  if (!parsed.ok()) return report;
  report.syntax_ok = true;
  const Program& p = *parsed.program;
  report.safety_ok = !p.contains(Token::kCoin);

  ExecOutcome first = evaluate(p, input, kValidationSeedA);
  ExecOutcome second = evaluate(p, input, kValidationSeedB);
  report.deterministic = first.ok() && second.ok() && first == second;
  // Task-facing literals, input included, must be single tokens.
  report.output_in_range = is_literal_value(input) && first.ok() && is_literal_value(*first.value) &&
                           second.ok() && is_literal_value(*second.value);

  if (report.safety_ok && report.deterministic && report.output_in_range) {
    report.triplet = Triplet{p, input, *first.value, created_iter, DifficultyBucket::kEasy};
  }
  return report;
}

}  // namespace selfplay
