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

/**
 * Self-play loop.
 *
 * Each iteration, per mode: the proposer samples `batch_per_mode` tasks
 * conditioned on the difficulty of a buffered reference triplet; proposals go
 * through the validator; the batch is topped up from the mode's buffer; every
 * task gets `n_mc` solver rollouts; composed rewards feed a task-relative
 * REINFORCE step with one running baseline per (mode, role) pair.
 *
 *   A = (R - mean[m, r]) / max(std[m, r], std_floor)      (mean_std)
 *   A = R - mean[m, r]                                    (mean_only)
 *   theta += lr * sum_episodes A * grad log pi(trace)
 *
 * Baselines absorb the iteration's rewards only after all advantages are
 * computed. With frozen_proposer the proposer episodes are scored but do not
 * contribute to the gradient.
 */

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "selfplay/metrics.hpp"
#include "selfplay/policy.hpp"
#include "selfplay/rewards.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/tasks.hpp"

namespace selfplay {

enum class AdvantageNorm : std::uint8_t { kMeanOnly, kMeanStd };

struct TrainConfig {
  int iterations = 200;
  int batch_per_mode = 8;
  double learning_rate = 0.05;
  double gamma_explore = 0.0;
  std::optional<double> clip_ratio;
  bool frozen_proposer = false;
  std::uint64_t seed = 0;
  AdvantageNorm advantage_norm = AdvantageNorm::kMeanStd;
  double std_floor = 0.1;
  RewardConfig reward;
  int entropy_prompts_per_role = 32;
  int entropy_samples_per_prompt = 4;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Welford running mean / variance of composed rewards.
struct BaselineEntry {
  double mean = 0.0;
  double m2 = 0.0;
  long long count = 0;

  void push(double reward);
  double stddev() const;
};

// Exactly six entries: {deduction, abduction, induction} x {propose, solve}.
class BaselineTable {
 public:
  const BaselineEntry& at(TaskMode mode, Role role) const { return entries_[slot(mode, role)]; }
  BaselineEntry& at(TaskMode mode, Role role) { return entries_[slot(mode, role)]; }
  static constexpr std::size_t size() { return 6; }

  double advantage(TaskMode mode, Role role, double reward, AdvantageNorm norm,
                   double std_floor) const;

 private:
  static std::size_t slot(TaskMode mode, Role role) {
    return static_cast<std::size_t>(mode) * 2 + static_cast<std::size_t>(role);
  }
  std::array<BaselineEntry, 6> entries_{};
};

struct Episode {
  SampleTrace trace;
  double reward = 0.0;  // composed
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sum of A * grad log pi over the episodes (proposer episodes skipped when the
// policy's role update mask is solver-only), then folds the rewards into the
// baselines.
LogitTable trr_gradient(const PolicyParams& params, std::span<const Episode> episodes,
                        BaselineTable& baselines, const TrainConfig& cfg);

// theta += lr * grad on the gradient's cells only; installs the exploration mix
// for subsequent sampling. With clip_ratio set, each context's step is halved
// until every per-token probability ratio over the touched cells stays within
// [1/(1+clip), 1+clip]. Throws NonFiniteGradient.
void apply_update(PolicyParams& params, const LogitTable& grad, double learning_rate,
                  double gamma_explore, std::optional<double> clip_ratio = std::nullopt);

struct IterationStats {
  int iter = 0;
  std::array<std::array<double, 2>, 3> mean_reward{};  // [mode][role]
  std::array<int, 3> proposals_valid{};
  std::array<int, 3> backfilled{};
  std::array<double, 3> solve_rate{};
  std::array<double, 2> response_length{};
  std::array<std::array<double, 2>, 3> mode_response_length{};
  SupportAudit audit;
};

struct TrainerState {
  PolicyParams params;
  std::array<Buffer, 3> buffers;
  BaselineTable baselines;
  Rng rng;
  Rng eval_rng;
  int iter = 0;
  std::size_t off_support_total = 0;
  std::size_t generated_total = 0;

  static TrainerState initial(const TrainConfig& cfg);
};

IterationStats train_iteration(TrainerState& state, const TrainConfig& cfg);

// Entropy eval prompts drawn from the current buffers: `per_role` proposer
// prompts and `per_role` solver prompts, modes in rotation.
std::vector<EvalPrompt> entropy_eval_set(const std::array<Buffer, 3>& buffers, int per_role,
                                         Rng& rng);

// Measures entropies on the updated policy and assembles the iteration record.
MetricsRecord make_record(TrainerState& state, const TrainConfig& cfg, const IterationStats& stats);

class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_start(const TrainerState& state) = 0;
  virtual void on_iteration(const MetricsRecord& record, const TrainerState& state) = 0;
};

void run(const TrainConfig& cfg, RunObserver& observer);

}  // namespace selfplay
