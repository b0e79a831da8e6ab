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

#include "selfplay/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace selfplay {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void TrainConfig::validate() const {
  require(iterations >= 0, "iterations must be >= 0");
  require(batch_per_mode >= 1, "batch_per_mode must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be > 0");
  require(gamma_explore >= 0.0 && gamma_explore < 1.0, "gamma_explore must be in [0, 1)");
  require(!clip_ratio || (std::isfinite(*clip_ratio) && *clip_ratio > 0.0),
          "clip_ratio must be > 0 when set");
  require(std::isfinite(std_floor) && std_floor > 0.0, "std_floor must be > 0");
  require(entropy_prompts_per_role >= 1, "entropy_prompts_per_role must be >= 1");
  require(entropy_samples_per_prompt >= 1, "entropy_samples_per_prompt must be >= 1");
  reward.validate();
}

void BaselineEntry::push(double reward) {
  ++count;
  const double delta = reward - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (reward - mean);
}

double BaselineEntry::stddev() const {
  return count < 2 ? 0.0 : std::sqrt(m2 / static_cast<double>(count));
}

double BaselineTable::advantage(TaskMode mode, Role role, double reward, AdvantageNorm norm,
                                double std_floor) const {
  const BaselineEntry& e = at(mode, role);
  const double centred = reward - e.mean;
  if (norm == AdvantageNorm::kMeanOnly) return centred;
  return centred / std::max(e.stddev(), std_floor);
}

LogitTable trr_gradient(const PolicyParams& params, std::span<const Episode> episodes,
                        BaselineTable& baselines, const TrainConfig& cfg) {
  const bool solver_only = params.role_update_mask() == RoleUpdateMask::kSolverOnly;
  LogitTable grad;
  for (const auto& ep : episodes) {
    if (solver_only && ep.trace.role == Role::kProposer) continue;
    const double a = baselines.advantage(ep.trace.mode, ep.trace.role, ep.reward,
                                         cfg.advantage_norm, cfg.std_floor);
    for (const auto& [ctx, row] : grad_logprob(params, ep.trace)) {
      LogitRow& acc = grad[ctx];
      for (std::size_t i = 0; i < kVocabSize; ++i) {
        if (!row.present.test(i)) continue;
        acc.value[i] += a * row.value[i];
        acc.present.set(i);
      }
    }
  }
  // Leave-current-out: this iteration's rewards only affect later advantages.
  for (const auto& ep : episodes) baselines.at(ep.trace.mode, ep.trace.role).push(ep.reward);
  return grad;
}

namespace {

// Largest |log(p_new / p_old)| over the present cells of one row.
double max_log_ratio(const LogitRow& before, const LogitRow& step, const TokenSet& cells,
                     double scale) {
  double m_old = -std::numeric_limits<double>::infinity();
  double m_new = m_old;
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (!cells.test(i)) continue;
    m_old = std::max(m_old, before.value[i]);
    m_new = std::max(m_new, before.value[i] + scale * step.value[i]);
  }
  double z_old = 0.0, z_new = 0.0;
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (!cells.test(i)) continue;
    z_old += std::exp(before.value[i] - m_old);
    z_new += std::exp(before.value[i] + scale * step.value[i] - m_new);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (!cells.test(i)) continue;
    const double lo = before.value[i] - m_old - std::log(z_old);
    const double ln = before.value[i] + scale * step.value[i] - m_new - std::log(z_new);
    worst = std::max(worst, std::abs(ln - lo));
  }
  return worst;
}

}  // namespace

void apply_update(PolicyParams& params, const LogitTable& grad, double learning_rate,
                  double gamma_explore, std::optional<double> clip_ratio) {
  for (const auto& [ctx, row] : grad) {
    for (std::size_t i = 0; i < kVocabSize; ++i) {
      if (row.present.test(i) && !std::isfinite(row.value[i])) {
        const auto c = context_tokens(ctx);
        std::ostringstream msg;
        msg << "non-finite gradient " << row.value[i] << " at " << role_name(context_role(ctx))
            << " context (" << token_name(c[0])
            << ' ' << token_name(c[1]) << ' ' << token_name(c[2]) << "), token "
            << token_name(token_at(i));
        throw NonFiniteGradient(msg.str());
      }
    }
  }
  params.set_gamma_explore(gamma_explore);
  const PolicyParams before = params;
  for (const auto& [ctx, row] : grad) {
    double scale = learning_rate;
    if (clip_ratio) {
      static const LogitRow kZero{};
      auto it = before.table().find(ctx);
      const LogitRow& old_row = it == before.table().end() ? kZero : it->second;
      const double bound = std::log1p(*clip_ratio);
      for (int halvings = 0; halvings < 60 && max_log_ratio(old_row, row, row.present, scale) > bound;
           ++halvings) {
        scale *= 0.5;
      }
    }
    for (std::size_t i = 0; i < kVocabSize; ++i) {
      if (row.present.test(i)) params.add_logit(ctx, token_at(i), scale * row.value[i]);
    }
  }
}

TrainerState TrainerState::initial(const TrainConfig& cfg) {
  TrainerState s{PolicyParams(grammar_mask()), seed_buffers(), BaselineTable{},
                 Rng::derive(cfg.seed, kTrainStream), Rng::derive(cfg.seed, kEvalStream)};
  s.params.set_gamma_explore(cfg.gamma_explore);
  if (cfg.frozen_proposer) s.params.set_role_update_mask(RoleUpdateMask::kSolverOnly);
  return s;
}

IterationStats train_iteration(TrainerState& state, const TrainConfig& cfg) {
  const int iter = state.iter + 1;
  IterationStats stats;
  stats.iter = iter;
  std::vector<Episode> episodes;
  std::array<double, 2> role_tokens{};
  std::array<int, 2> role_traces{};

  for (TaskMode mode : kAllModes) {
    const auto m = static_cast<std::size_t>(mode);
    Buffer& buffer = state.buffers[m];
    const std::size_t first_episode = episodes.size();

    std::vector<Triplet> valid;
    std::vector<std::size_t> valid_episode;
    for (int j = 0; j < cfg.batch_per_mode; ++j) {
      const Triplet& ref = buffer.sample(state.rng);
      const TokenSeq prompt = proposer_prompt(mode, ref.difficulty_bucket);
      Episode ep{sample(state.params, prompt, Role::kProposer, mode, state.rng), 0.0};
      auto parsed = parse_proposal(ep.trace);
      if (!parsed) {
        ep.reward = compose_reward(0.0, Passability::kFormatError, cfg.reward);
      } else {
        ValidationReport report = validate_proposal(parsed->program, parsed->input, iter);
        const bool usable = report.valid() && (mode != TaskMode::kInduction ||
                                               induction_feasible(report.triplet->program));
        if (usable) {
          valid.push_back(*report.triplet);
          valid_episode.push_back(episodes.size());
        } else {
          ep.reward = compose_reward(0.0, Passability::kWrongFormatted, cfg.reward);
        }
      }
      episodes.push_back(std::move(ep));
    }

    const auto batch = static_cast<std::size_t>(cfg.batch_per_mode);
    const std::vector<Triplet> tasks = backfill(valid, buffer, batch, state.rng);
    stats.proposals_valid[m] = static_cast<int>(std::min(valid.size(), batch));
    stats.backfilled[m] = static_cast<int>(batch) - stats.proposals_valid[m];

    int correct = 0, rollouts = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      ProposalEvaluation ev = evaluate_proposal(tasks[t], mode, state.params, cfg.reward, state.rng);
      correct += ev.correct;
      for (auto& r : ev.rollouts) {
        ++rollouts;
        episodes.push_back(Episode{std::move(r.trace), r.reward});
      }
      const DifficultyBucket bucket = bucket_for_solve_rate(ev.solve_rate);
      if (t < valid_episode.size()) {
        episodes[valid_episode[t]].reward = ev.propose_reward;
        Triplet fresh = tasks[t];
        fresh.difficulty_bucket = bucket;
        if (!buffer.insert(fresh)) buffer.set_bucket(fresh.program, fresh.input, bucket);
      } else {
        buffer.set_bucket(tasks[t].program, tasks[t].input, bucket);
      }
    }
    stats.solve_rate[m] = rollouts == 0 ? 0.0 : static_cast<double>(correct) / rollouts;

    std::array<double, 2> reward_sum{}, token_sum{};
    std::array<int, 2> count{};
    for (std::size_t e = first_episode; e < episodes.size(); ++e) {
      const auto r = static_cast<std::size_t>(episodes[e].trace.role);
      reward_sum[r] += episodes[e].reward;
      token_sum[r] += static_cast<double>(episodes[e].trace.completion().size());
      ++count[r];
    }
    for (std::size_t r = 0; r < 2; ++r) {
      if (count[r] == 0) continue;
      stats.mean_reward[m][r] = reward_sum[r] / count[r];
      stats.mode_response_length[m][r] = token_sum[r] / count[r];
      role_tokens[r] += token_sum[r];
      role_traces[r] += count[r];
    }
  }
  for (std::size_t r = 0; r < 2; ++r) {
    stats.response_length[r] = role_traces[r] == 0 ? 0.0 : role_tokens[r] / role_traces[r];
  }

  std::vector<SampleTrace> traces;
  traces.reserve(episodes.size());
  for (const auto& ep : episodes) traces.push_back(ep.trace);
  stats.audit = support_audit(traces, state.params, state.params.gamma_explore());

  LogitTable grad = trr_gradient(state.params, episodes, state.baselines, cfg);
  apply_update(state.params, grad, cfg.learning_rate, cfg.gamma_explore, cfg.clip_ratio);

  state.iter = iter;
  state.off_support_total += stats.audit.off_support_tokens;
  state.generated_total += stats.audit.generated_tokens;
  return stats;
}

std::vector<EvalPrompt> entropy_eval_set(const std::array<Buffer, 3>& buffers, int per_role,
                                         Rng& rng) {
  std::vector<EvalPrompt> out;
  out.reserve(static_cast<std::size_t>(2 * per_role));
  for (int k = 0; k < per_role; ++k) {
    const TaskMode mode = kAllModes[static_cast<std::size_t>(k) % kAllModes.size()];
    const Triplet& ref = buffers[static_cast<std::size_t>(mode)].sample(rng);
    out.push_back({proposer_prompt(mode, ref.difficulty_bucket), Role::kProposer, mode});
  }
  for (int k = 0; k < per_role; ++k) {
    const TaskMode mode = kAllModes[static_cast<std::size_t>(k) % kAllModes.size()];
    const Triplet& t = buffers[static_cast<std::size_t>(mode)].sample(rng);
    TaskInstance task;
    try {
      task = make_task(mode, t, rng);
    } catch (const InductionInfeasible&) {
      task = make_task(mode, zero_triplet(), rng);
    }
    out.push_back({std::move(task.prompt_tokens), Role::kSolver, mode});
  }
  return out;
}

MetricsRecord make_record(TrainerState& state, const TrainConfig& cfg, const IterationStats& stats) {
  MetricsRecord rec;
  rec.iter = stats.iter;
  const auto eval = entropy_eval_set(state.buffers, cfg.entropy_prompts_per_role, state.eval_rng);
  rec.proposer_entropy = role_entropy(state.params, Role::kProposer, eval,
                                      cfg.entropy_samples_per_prompt, state.eval_rng);
  rec.solver_entropy = role_entropy(state.params, Role::kSolver, eval,
                                    cfg.entropy_samples_per_prompt, state.eval_rng);
  // Equal prompt counts per role, so the union's mean of means is the average.
  rec.policy_entropy = 0.5 * (rec.proposer_entropy + rec.solver_entropy);
  rec.solve_rate = stats.solve_rate;
  rec.response_length = stats.response_length;
  rec.mode_response_length = stats.mode_response_length;
  rec.mean_reward = stats.mean_reward;
  rec.proposals_valid = stats.proposals_valid;
  rec.backfilled = stats.backfilled;
  rec.off_support_tokens = stats.audit.off_support_tokens;
  rec.off_support_tokens_total = state.off_support_total;
  rec.generated_tokens_total = state.generated_total;
  rec.epsilon_support_mass = stats.audit.epsilon_support_mass;
  return rec;
}

void run(const TrainConfig& cfg, RunObserver& observer) {
  cfg.validate();
  TrainerState state = TrainerState::initial(cfg);
  observer.on_start(state);
  for (int i = 0; i < cfg.iterations; ++i) {
    IterationStats stats = train_iteration(state, cfg);
    MetricsRecord rec = make_record(state, cfg, stats);
    observer.on_iteration(rec, state);
  }
}

}  // namespace selfplay
