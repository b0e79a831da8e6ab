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

#include "selfplay/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace selfplay {

void RewardConfig::validate() const {
  if (n_mc < 2) throw std::invalid_argument("n_mc must be at least 2");
  if (!(format_penalty < wrong_penalty && wrong_penalty < 0.0)) {
    throw std::invalid_argument("penalties must satisfy format_penalty < wrong_penalty < 0");
  }
}

std::string_view variant_name(ProposerVariant variant) {
  return variant == ProposerVariant::kLearnability ? "learnability" : "peak_half";
}

std::optional<ProposerVariant> parse_variant(std::string_view name) {
  if (name == "learnability") return ProposerVariant::kLearnability;
  if (name == "peak_half") return ProposerVariant::kPeakHalf;
  return std::nullopt;
}

namespace {

void check_rate(double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw std::domain_error("solve rate " + std::to_string(r) + " outside [0, 1]");
  }
}

}  // namespace

double propose_reward_learnability(double solve_rate) {
  check_rate(solve_rate);
  if (solve_rate == 0.0 || solve_rate == 1.0) return 0.0;
  return 1.0 - solve_rate;
}

double propose_reward_peak(double solve_rate) {
  check_rate(solve_rate);
  if (solve_rate == 0.0 || solve_rate == 1.0) return 0.0;
  return 1.0 - 2.0 * std::abs(solve_rate - 0.5);
}

double propose_reward(double solve_rate, ProposerVariant variant) {
  return variant == ProposerVariant::kLearnability ? propose_reward_learnability(solve_rate)
                                                   : propose_reward_peak(solve_rate);
}

double solve_reward(SolveOutcome outcome) { return outcome == SolveOutcome::kCorrect ? 1.0 : 0.0; }

double compose_reward(double role_reward, Passability passability, const RewardConfig& cfg) {
  switch (passability) {
    case Passability::kPassable: return role_reward;
    case Passability::kWrongFormatted: return cfg.wrong_penalty;
    case Passability::kFormatError: return cfg.format_penalty;
  }
  return cfg.format_penalty;
}

Passability passability_of(SolveOutcome outcome) {
  switch (outcome) {
    case SolveOutcome::kCorrect: return Passability::kPassable;
    case SolveOutcome::kWrongButFormatted: return Passability::kWrongFormatted;
    case SolveOutcome::kFormatError: return Passability::kFormatError;
  }
  return Passability::kFormatError;
}

std::optional<TokenSeq> answer_payload(const SampleTrace& trace) {
  auto c = trace.completion();
  if (trace.truncated || c.size() < 2 || c.front() != Token::kAnswer || c.back() != Token::kEnd) {
    return std::nullopt;
  }
  auto inner = c.subspan(1, c.size() - 2);
  for (Token t : inner) {
    if (t == Token::kAnswer || t == Token::kEnd) return std::nullopt;
  }
  return TokenSeq(inner.begin(), inner.end());
}

SolveOutcome score_solver_trace(const TaskInstance& task, const SampleTrace& trace) {
  auto payload = answer_payload(trace);
  if (!payload) return SolveOutcome::kFormatError;
  if (task.mode == TaskMode::kInduction) {
    if (!parse(*payload).ok()) return SolveOutcome::kFormatError;
  } else if (payload->size() != 1 || !is_literal(payload->front())) {
    return SolveOutcome::kFormatError;
  }
  return verify_answer(task, *payload) == Verdict::kCorrect ? SolveOutcome::kCorrect
                                                            : SolveOutcome::kWrongButFormatted;
}

std::optional<ParsedProposal> parse_proposal(const SampleTrace& trace) {
  auto c = trace.completion();
  if (trace.truncated || c.size() < 4) return std::nullopt;
  auto sep = std::find(c.begin(), c.end(), Token::kSep);
  if (sep == c.end() || std::distance(sep, c.end()) != 3) return std::nullopt;
  const Token lit = *(sep + 1);
  if (!is_literal(lit) || *(sep + 2) != Token::kEnd) return std::nullopt;
  TokenSeq program(c.begin(), sep);
  if (!parse(program).ok()) return std::nullopt;
  return ParsedProposal{std::move(program), Value::integer(literal_value(lit))};
}

ProposalEvaluation evaluate_proposal(const Triplet& triplet, TaskMode mode,
                                     const PolicyParams& params, const RewardConfig& cfg,
                                     Rng& rng) {
  ProposalEvaluation ev{triplet, make_task(mode, triplet, rng), 0, 0.0, 0.0, {}};
  ev.rollouts.reserve(static_cast<std::size_t>(cfg.n_mc));
  for (int k = 0; k < cfg.n_mc; ++k) {
    SolverRollout r;
    r.trace = sample(params, ev.task.prompt_tokens, Role::kSolver, mode, rng);
    r.outcome = score_solver_trace(ev.task, r.trace);
    r.reward = compose_reward(solve_reward(r.outcome), passability_of(r.outcome), cfg);
    if (r.outcome == SolveOutcome::kCorrect) ++ev.correct;
    ev.rollouts.push_back(std::move(r));
  }
  ev.solve_rate = static_cast<double>(ev.correct) / static_cast<double>(cfg.n_mc);
  // A validated proposal is passable; an extreme solve rate earns 0, not a penalty.
  ev.propose_reward = compose_reward(propose_reward(ev.solve_rate, cfg.proposer_variant),
                                     Passability::kPassable, cfg);
  return ev;
}

}  // namespace selfplay
