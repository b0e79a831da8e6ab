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

// Analysis instruments: Monte-Carlo policy entropy (overall and per role),
// checkpoint update sparsity, the unbiased pass@k estimator, the difficulty
// probe, and the base-support audit.

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "selfplay/policy.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/tasks.hpp"

namespace selfplay {

struct EvalPrompt {
  TokenSeq tokens;
  Role role = Role::kSolver;
  TaskMode mode = TaskMode::kDeduction;
};

// Mean negative log-probability per generated token of one trace.
double per_token_nll(const SampleTrace& trace);

// -(1/|D|) sum_x (1/|y_x|) sum_t log pi(y_t | y_<t, x), each prompt averaged
// over `samples_per_prompt` completions drawn without exploration. Nats/token.
// Throws std::invalid_argument on an empty eval set.
double policy_entropy(const PolicyParams& params, std::span<const EvalPrompt> eval_set,
                      int samples_per_prompt, Rng& rng);

// policy_entropy over the prompts of one role.
double role_entropy(const PolicyParams& params, Role role, std::span<const EvalPrompt> eval_set,
                    int samples_per_prompt, Rng& rng);

class IncompatibleSnapshots : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SparsityReport {
  std::size_t total_params = 0;
  std::size_t unchanged = 0;
  double sparsity = 1.0;
  double tolerance = 0.0;

  std::size_t changed() const { return total_params - unchanged; }
};

// Universe = union of materialized cells, absent cells read as 0.0. A cell
// changed when |a - b| > tolerance. An empty universe reports sparsity 1.
SparsityReport update_sparsity(const Snapshot& a, const Snapshot& b, double tolerance = 0.0);
// Flat arrays of equal length.
SparsityReport update_sparsity(std::span<const double> a, std::span<const double> b,
                               double tolerance = 0.0);
// Raw little-endian float64 array file.
std::vector<double> read_raw_array(const std::filesystem::path& path);

struct PassAtKQuery {
  int n = 0;  // samples per task
  int c = 0;  // correct samples
  int k = 0;  // budget
};

// 1 - C(n-c, k) / C(n, k) in product form. Throws std::domain_error unless
// 0 <= c <= n and 1 <= k <= n.
double pass_at_k(const PassAtKQuery& q);

struct ProbeQuestion {
  TaskInstance task;
  int created_iter = 0;  // grouping key
};

struct ProbeCell {
  int created_iter = 0;
  int questions = 0;
  int responses = 0;
  double mean_length = 0.0;  // generated tokens per response
  double solve_rate = 0.0;
};

// `responses` solver rollouts per question, aggregated per grouping key in
// ascending key order.
std::vector<ProbeCell> difficulty_probe(std::span<const ProbeQuestion> questions,
                                        const PolicyParams& params, int responses, Rng& rng);

// s_0 = x_0, s_t = factor * s_{t-1} + (1 - factor) * x_t. factor in [0, 1).
std::vector<double> exponential_smoothing(std::span<const double> series, double factor);

inline constexpr std::array<double, 3> kEpsilonGrid = {1e-3, 1e-4, 1e-5};

struct SupportAudit {
  std::size_t generated_tokens = 0;
  std::size_t off_support_tokens = 0;  // sampled tokens with q0 probability 0
  // Sampling-distribution mass on tokens with q0 probability <= eps, averaged
  // over generated positions; one entry per kEpsilonGrid value.
  std::array<double, kEpsilonGrid.size()> epsilon_support_mass{};
};

// q0 is the uniform distribution over the base mask. `gamma` is the
// exploration mix the traces were sampled under.
SupportAudit support_audit(std::span<const SampleTrace> traces, const PolicyParams& params,
                           double gamma);

// Per-iteration record written to metrics.jsonl.
struct MetricsRecord {
  int iter = 0;
  double policy_entropy = 0.0;
  double proposer_entropy = 0.0;
  double solver_entropy = 0.0;
  std::array<double, 3> solve_rate{};                        // by TaskMode
  std::array<double, 2> response_length{};                   // by Role
  std::array<std::array<double, 2>, 3> mode_response_length{};  // [mode][role]
  std::array<std::array<double, 2>, 3> mean_reward{};        // [mode][role], composed
  std::array<int, 3> proposals_valid{};
  std::array<int, 3> backfilled{};
  std::size_t off_support_tokens = 0;
  std::size_t off_support_tokens_total = 0;
  std::size_t generated_tokens_total = 0;
  std::array<double, kEpsilonGrid.size()> epsilon_support_mass{};
};

}  // namespace selfplay
