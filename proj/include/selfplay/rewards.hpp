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

#include <optional>
#include <span>
#include <vector>

#include "selfplay/dsl.hpp"
#include "selfplay/policy.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/tasks.hpp"

namespace selfplay {

enum class SolveOutcome : std::uint8_t { kFormatError, kWrongButFormatted, kCorrect };

enum class ProposerVariant : std::uint8_t { kLearnability, kPeakHalf };

// How a completion fares under the format-aware composition.
enum class Passability : std::uint8_t { kPassable, kWrongFormatted, kFormatError };

struct RewardConfig {
  ProposerVariant proposer_variant = ProposerVariant::kLearnability;
  int n_mc = 8;
  double format_penalty = -1.0;
  double wrong_penalty = -0.5;

  // Throws std::invalid_argument. n_mc >= 2 so both 0 and 1 are reachable.
  void validate() const;
};

std::string_view variant_name(ProposerVariant variant);
std::optional<ProposerVariant> parse_variant(std::string_view name);

// 0 at r in {0, 1}, else 1 - r. Throws std::domain_error outside [0, 1].
double propose_reward_learnability(double solve_rate);
// 0 at r in {0, 1}, else 1 - 2|r - 0.5|. Throws std::domain_error outside [0, 1].
double propose_reward_peak(double solve_rate);
double propose_reward(double solve_rate, ProposerVariant variant);

// Indicator of a correct answer.
double solve_reward(SolveOutcome outcome);

double compose_reward(double role_reward, Passability passability, const RewardConfig& cfg = {});
Passability passability_of(SolveOutcome outcome);

// Payload between a leading ANSWER and a final END, or nullopt when the
// frame is broken or the trace was truncated.
std::optional<TokenSeq> answer_payload(const SampleTrace& trace);
SolveOutcome score_solver_trace(const TaskInstance& task, const SampleTrace& trace);

struct ParsedProposal {
  TokenSeq program;
  Value input;
};

// "<program> SEP <literal> END" with a syntactically valid program.
std::optional<ParsedProposal> parse_proposal(const SampleTrace& trace);

struct SolverRollout {
  SampleTrace trace;
  SolveOutcome outcome = SolveOutcome::kFormatError;
  double reward = 0.0;  // composed
};

struct ProposalEvaluation {
  Triplet triplet;
  TaskInstance task;
  int correct = 0;
  double solve_rate = 0.0;      // correct / n_mc
  double propose_reward = 0.0;  // composed, for a proposal that passed validation
  std::vector<SolverRollout> rollouts;
};

// n_mc solver rollouts on make_task(mode, triplet). Throws InductionInfeasible.
ProposalEvaluation evaluate_proposal(const Triplet& triplet, TaskMode mode,
                                     const PolicyParams& params, const RewardConfig& cfg,
                                     Rng& rng);

}  // namespace selfplay
