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

#include "selfplay/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "selfplay/rewards.hpp"

namespace selfplay {

double per_token_nll(const SampleTrace& trace) {
  if (trace.logprobs.empty()) return 0.0;
  double sum = 0.0;
  for (double lp : trace.logprobs) sum -= lp;
  return sum / static_cast<double>(trace.logprobs.size());
}

double policy_entropy(const PolicyParams& params, std::span<const EvalPrompt> eval_set,
                      int samples_per_prompt, Rng& rng) {
  if (eval_set.empty()) throw std::invalid_argument("entropy eval set is empty");
  if (samples_per_prompt < 1) throw std::invalid_argument("samples_per_prompt must be >= 1");
  const SampleOptions no_exploration{.gamma = 0.0};
  double total = 0.0;
  for (const auto& prompt : eval_set) {
    double per_prompt = 0.0;
    for (int s = 0; s < samples_per_prompt; ++s) {
      SampleTrace t = sample(params, prompt.tokens, prompt.role, prompt.mode, rng, no_exploration);
      per_prompt += per_token_nll(t);
    }
    total += per_prompt / samples_per_prompt;
  }
  return total / static_cast<double>(eval_set.size());
}

double role_entropy(const PolicyParams& params, Role role, std::span<const EvalPrompt> eval_set,
                    int samples_per_prompt, Rng& rng) {
  std::vector<EvalPrompt> subset;
  for (const auto& p : eval_set) {
    if (p.role == role) subset.push_back(p);
  }
  return policy_entropy(params, subset, samples_per_prompt, rng);
}

// ---------------------------------------------------------------------------

namespace {

SparsityReport finish(std::size_t total, std::size_t unchanged, double tolerance) {
  SparsityReport r;
  r.total_params = total;
  r.unchanged = unchanged;
  r.tolerance = tolerance;
  r.sparsity = total == 0 ? 1.0
                          : 1.0 - static_cast<double>(total - unchanged) / static_cast<double>(total);
  return r;
}

bool changed(double a, double b, double tolerance) { return !(std::abs(a - b) <= tolerance); }

}  // namespace

SparsityReport update_sparsity(const Snapshot& a, const Snapshot& b, double tolerance) {
  if (a.version != b.version || a.context_order != b.context_order ||
      a.vocab_hash != b.vocab_hash) {
    throw IncompatibleSnapshots("snapshot headers differ (version, context order or vocab hash)");
  }
  using Key = std::pair<ContextId, std::uint32_t>;
  std::map<Key, std::pair<double, double>> cells;
  for (const auto& c : a.cells) cells[{c.context, c.token}].first = c.logit;
  for (const auto& c : b.cells) cells[{c.context, c.token}].second = c.logit;
  std::size_t unchanged = 0;
  for (const auto& [key, v] : cells) {
    if (!changed(v.first, v.second, tolerance)) ++unchanged;
  }
  return finish(cells.size(), unchanged, tolerance);
}

SparsityReport update_sparsity(std::span<const double> a, std::span<const double> b,
                               double tolerance) {
  if (a.size() != b.size()) {
    throw IncompatibleSnapshots("raw arrays differ in length (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  std::size_t unchanged = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!changed(a[i], b[i], tolerance)) ++unchanged;
  }
  return finish(a.size(), unchanged, tolerance);
}

std::vector<double> read_raw_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(double) != 0) {
    throw IncompatibleSnapshots(path.string() + ": size is not a multiple of 8 bytes");
  }
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

// ---------------------------------------------------------------------------

double pass_at_k(const PassAtKQuery& q) {
  if (q.n < 1 || q.c < 0 || q.c > q.n || q.k < 1 || q.k > q.n) {
    throw std::domain_error("pass@k requires 0 <= c <= n and 1 <= k <= n (n=" +
                            std::to_string(q.n) + ", c=" + std::to_string(q.c) +
                            ", k=" + std::to_string(q.k) + ")");
  }
  if (q.n - q.c < q.k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  long double ratio = 1.0L;
  for (int i = q.n - q.c + 1; i <= q.n; ++i) {
    ratio *= 1.0L - static_cast<long double>(q.k) / static_cast<long double>(i);
  }
  return static_cast<double>(1.0L - ratio);
}

// ---------------------------------------------------------------------------

std::vector<ProbeCell> difficulty_probe(std::span<const ProbeQuestion> questions,
                                        const PolicyParams& params, int responses, Rng& rng) {
  if (responses < 1) throw std::invalid_argument("probe needs at least one response per question");
  struct Acc {
    int questions = 0;
    int responses = 0;
    long long tokens = 0;
    int correct = 0;
  };
  std::map<int, Acc> acc;
  const SampleOptions no_exploration{.gamma = 0.0};
  for (const auto& q : questions) {
    Acc& a = acc[q.created_iter];
    ++a.questions;
    for (int r = 0; r < responses; ++r) {
      SampleTrace t = sample(params, q.task.prompt_tokens, Role::kSolver, q.task.mode, rng,
                             no_exploration);
      ++a.responses;
      a.tokens += static_cast<long long>(t.completion().size());
      if (score_solver_trace(q.task, t) == SolveOutcome::kCorrect) ++a.correct;
    }
  }
  std::vector<ProbeCell> out;
  for (const auto& [key, a] : acc) {
    out.push_back(ProbeCell{key, a.questions, a.responses,
                            static_cast<double>(a.tokens) / a.responses,
                            static_cast<double>(a.correct) / a.responses});
  }
  return out;
}

std::vector<double> exponential_smoothing(std::span<const double> series, double factor) {
  if (!(factor >= 0.0 && factor < 1.0)) throw std::invalid_argument("smoothing factor must be in [0, 1)");
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) out.push_back(out.empty() ? x : factor * out.back() + (1.0 - factor) * x);
  return out;
}

// ---------------------------------------------------------------------------

SupportAudit support_audit(std::span<const SampleTrace> traces, const PolicyParams& params,
                           double gamma) {
  SupportAudit audit;
  const SupportMask& mask = params.mask();
  const double uniform_vocab = 1.0 / static_cast<double>(kVocabSize);
  std::array<double, kEpsilonGrid.size()> mass_sum{};
  for (const auto& trace : traces) {
    DecodeState state = mask.start(trace.prompt(), trace.role, trace.mode);
    for (std::size_t pos = trace.prompt_len; pos < trace.tokens.size(); ++pos) {
      const Token tok = trace.tokens[pos];
      const TokenSet allowed = mask.allowed(state);
      ++audit.generated_tokens;
      if (!allowed.test(index_of(tok))) ++audit.off_support_tokens;

      const auto p = params.probabilities(context_id(trace.role, std::span(trace.tokens).first(pos)), allowed);
      const double q0_allowed = allowed.none() ? 0.0 : 1.0 / static_cast<double>(allowed.count());
      for (std::size_t e = 0; e < kEpsilonGrid.size(); ++e) {
        double m = 0.0;
        for (std::size_t i = 0; i < kVocabSize; ++i) {
          const double q0 = allowed.test(i) ? q0_allowed : 0.0;
          if (q0 <= kEpsilonGrid[e]) m += (1.0 - gamma) * p[i] + gamma * uniform_vocab;
        }
        mass_sum[e] += m;
      }
      state = mask.advance(state, tok);
    }
  }
  if (audit.generated_tokens > 0) {
    for (std::size_t e = 0; e < kEpsilonGrid.size(); ++e) {
      audit.epsilon_support_mass[e] = mass_sum[e] / static_cast<double>(audit.generated_tokens);
    }
  }
  return audit;
}

}  // namespace selfplay
