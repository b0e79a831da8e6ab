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

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "selfplay/trainer.hpp"

namespace selfplay {
namespace {

using testing::ConstantMask;
using testing::token_set;

const TokenSeq kPrompt = {Token::kGo};

std::shared_ptr<const SupportMask> c1_end_mask() {
  return std::make_shared<ConstantMask>(token_set({Token::kConst1, Token::kEnd}));
}

Episode episode(TokenSeq completion, double reward, Role role = Role::kSolver,
                TaskMode mode = TaskMode::kDeduction) {
  Episode ep;
  ep.trace.role = role;
  ep.trace.mode = mode;
  ep.trace.prompt_len = kPrompt.size();
  ep.trace.tokens = kPrompt;
  ep.trace.tokens.insert(ep.trace.tokens.end(), completion.begin(), completion.end());
  ep.trace.logprobs.assign(completion.size(), 0.0);
  ep.reward = reward;
  return ep;
}

ContextId ctx(Role role, TokenSeq history) { return context_id(role, history); }

// Every (context, token) cell in either table, compared bit for bit.
bool bit_identical(const PolicyParams& a, const PolicyParams& b) {
  std::set<ContextId> contexts;
  for (const auto& [c, row] : a.table()) contexts.insert(c);
  for (const auto& [c, row] : b.table()) contexts.insert(c);
  for (ContextId c : contexts) {
    for (std::size_t i = 0; i < kVocabSize; ++i) {
      if (std::bit_cast<std::uint64_t>(a.logit(c, token_at(i))) !=
          std::bit_cast<std::uint64_t>(b.logit(c, token_at(i)))) {
        return false;
      }
    }
  }
  return true;
}

TrainConfig small_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.iterations = 3;
  cfg.entropy_prompts_per_role = 6;
  cfg.entropy_samples_per_prompt = 2;
  return cfg;
}

// ---- baselines ----------------------------------------------------------------

TEST(Baseline, WelfordMatchesDirectMoments) {
  BaselineEntry e;
  EXPECT_EQ(e.stddev(), 0.0);
  const std::vector<double> xs = {1.0, -0.5, 0.25, 0.0, 1.0, -1.0, 0.75};
  double sum = 0.0;
  for (double x : xs) {
    e.push(x);
    sum += x;
  }
  const double mean = sum / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(e.mean, mean, 1e-15);
  EXPECT_NEAR(e.stddev(), std::sqrt(ss / xs.size()), 1e-15);
  EXPECT_EQ(e.count, 7);

  BaselineEntry one;
  one.push(3.0);
  EXPECT_EQ(one.stddev(), 0.0);
}

TEST(Baseline, AdvantageUsesTheFloor) {
  BaselineTable t;
  EXPECT_EQ(t.advantage(TaskMode::kDeduction, Role::kSolver, 1.0, AdvantageNorm::kMeanStd, 0.1), 10.0);
  EXPECT_EQ(t.advantage(TaskMode::kDeduction, Role::kSolver, 1.0, AdvantageNorm::kMeanOnly, 0.1), 1.0);
  t.at(TaskMode::kAbduction, Role::kProposer).push(-0.3);
  t.at(TaskMode::kAbduction, Role::kProposer).push(0.7);
  EXPECT_NEAR(t.advantage(TaskMode::kAbduction, Role::kProposer, 1.0, AdvantageNorm::kMeanStd, 0.1), 1.6, 1e-15);
  EXPECT_NEAR(t.advantage(TaskMode::kAbduction, Role::kProposer, 1.0, AdvantageNorm::kMeanOnly, 0.1), 0.8, 1e-15);
  EXPECT_EQ(BaselineTable::size(), 6U);
}

TEST(Baseline, SixEntriesAreSeparate) {
  PolicyParams params(c1_end_mask());
  TrainConfig cfg;
  for (TaskMode m : kAllModes) {
    for (Role r : kAllRoles) {
      BaselineTable t;
      const Episode ep = episode({Token::kConst1, Token::kEnd}, 0.75, r, m);
      trr_gradient(params, std::span(&ep, 1), t, cfg);
      for (TaskMode m2 : kAllModes) {
        for (Role r2 : kAllRoles) {
          const bool same = m2 == m && r2 == r;
          EXPECT_EQ(t.at(m2, r2).count, same ? 1 : 0);
          EXPECT_EQ(t.at(m2, r2).mean, same ? 0.75 : 0.0);
        }
      }
    }
  }
}

TEST(Baseline, AdvantagesUseThePreBatchBaseline) {
  PolicyParams params(c1_end_mask());
  TrainConfig cfg;
  cfg.advantage_norm = AdvantageNorm::kMeanOnly;
  BaselineTable t;
  // Two identical episodes: both see mean 0, so the gradient is twice one of them.
  const std::vector<Episode> two = {episode({Token::kConst1, Token::kEnd}, 1.0),
                                    episode({Token::kConst1, Token::kEnd}, 1.0)};
  LogitTable g = trr_gradient(params, two, t, cfg);
  EXPECT_DOUBLE_EQ(g.at(ctx(Role::kSolver, {Token::kGo})).value[index_of(Token::kConst1)], 2 * 0.5);
  EXPECT_EQ(t.at(TaskMode::kDeduction, Role::kSolver).count, 2);
}

// ---- updates --------------------------------------------------------------------

TEST(Update, HandWorkedSingleEpisode) {
  // Uniform over {C1, END}; trace C1 END; R = 1 on an empty baseline gives
  // A = 1 / 0.1 = 10, so each touched logit moves by 0.05 * 10 * (+-0.5).
  PolicyParams params(c1_end_mask());
  BaselineTable t;
  TrainConfig cfg;
  const Episode ep = episode({Token::kConst1, Token::kEnd}, 1.0);
  LogitTable g = trr_gradient(params, std::span(&ep, 1), t, cfg);
  apply_update(params, g, 0.05, 0.0);

  const ContextId first = ctx(Role::kSolver, {Token::kGo});
  const ContextId second = ctx(Role::kSolver, {Token::kGo, Token::kConst1});
  EXPECT_NEAR(params.logit(first, Token::kConst1), 0.25, 1e-12);
  EXPECT_NEAR(params.logit(first, Token::kEnd), -0.25, 1e-12);
  EXPECT_NEAR(params.logit(second, Token::kEnd), 0.25, 1e-12);
  EXPECT_NEAR(params.logit(second, Token::kConst1), -0.25, 1e-12);
  EXPECT_EQ(params.table().size(), 2U);
  EXPECT_EQ(params.cell_count(), 4U);
}

TEST(Update, HandWorkedNonUniformStep) {
  // logit(C1) = 1 at the first context, so pi(C1) = 0.7310585786300049.
  // Baseline mean 0.2, std 0.5 gives A = (1 - 0.2) / 0.5 = 1.6.
  //   first:  C1 += 0.05 * 1.6 * 0.2689414213699951 = 0.021515313709599608
  //   second: uniform, +-0.05 * 1.6 * 0.5 = +-0.04
  PolicyParams params(c1_end_mask());
  const ContextId first = ctx(Role::kSolver, {Token::kGo});
  const ContextId second = ctx(Role::kSolver, {Token::kGo, Token::kConst1});
  params.set_logit(first, Token::kConst1, 1.0);
  BaselineTable t;
  t.at(TaskMode::kDeduction, Role::kSolver).push(-0.3);
  t.at(TaskMode::kDeduction, Role::kSolver).push(0.7);
  TrainConfig cfg;
  const Episode ep = episode({Token::kConst1, Token::kEnd}, 1.0);
  apply_update(params, trr_gradient(params, std::span(&ep, 1), t, cfg), 0.05, 0.0);
  EXPECT_NEAR(params.logit(first, Token::kConst1), 1.0 + 0.021515313709599608, 1e-12);
  EXPECT_NEAR(params.logit(first, Token::kEnd), -0.021515313709599608, 1e-12);
  EXPECT_NEAR(params.logit(second, Token::kEnd), 0.04, 1e-12);
  EXPECT_NEAR(params.logit(second, Token::kConst1), -0.04, 1e-12);
  EXPECT_EQ(t.at(TaskMode::kDeduction, Role::kSolver).count, 3);
}

TEST(Update, ZeroAdvantageLeavesParamsBitIdentical) {
  PolicyParams params;
  Rng rng(1);
  testing::randomize_reachable(params, proposer_prompt(TaskMode::kDeduction, DifficultyBucket::kEasy),
                               Role::kProposer, TaskMode::kDeduction, 3, 1.0, rng);
  const PolicyParams before = params;
  BaselineTable t;
  t.at(TaskMode::kDeduction, Role::kProposer).push(0.5);
  t.at(TaskMode::kDeduction, Role::kProposer).push(0.5);
  std::vector<Episode> eps;
  for (int n = 0; n < 8; ++n) {
    eps.push_back({sample(params, proposer_prompt(TaskMode::kDeduction, DifficultyBucket::kEasy),
                          Role::kProposer, TaskMode::kDeduction, rng),
                   0.5});
  }
  apply_update(params, trr_gradient(params, eps, t, TrainConfig{}), 0.05, 0.0);
  EXPECT_TRUE(bit_identical(before, params));
}

TEST(Update, ZeroLearningRateLeavesParamsUnchanged) {
  PolicyParams params(c1_end_mask());
  BaselineTable t;
  const Episode ep = episode({Token::kConst1, Token::kEnd}, 1.0);
  const PolicyParams before = params;
  apply_update(params, trr_gradient(params, std::span(&ep, 1), t, TrainConfig{}), 0.0, 0.0);
  EXPECT_TRUE(bit_identical(before, params));
}

TEST(Update, NonFiniteGradientAborts) {
  PolicyParams params;
  LogitTable g;
  LogitRow& row = g[ctx(Role::kSolver, {Token::kAnswer})];
  row.value[index_of(Token::kLit3)] = std::nan("");
  row.present.set(index_of(Token::kLit3));
  try {
    apply_update(params, g, 0.05, 0.0);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("solve context"), std::string::npos) << what;
    EXPECT_NE(what.find("ANSWER"), std::string::npos) << what;
    EXPECT_NE(what.find("token 3"), std::string::npos) << what;
  }
  EXPECT_EQ(params.cell_count(), 0U);
}

TEST(Update, SetsTheExplorationMix) {
  PolicyParams params;
  apply_update(params, {}, 0.05, 0.05);
  EXPECT_EQ(params.gamma_explore(), 0.05);
}

TEST(Update, TouchesOnlyVisitedContexts) {
  PolicyParams params;
  Rng rng(2);
  Rng task_rng(0);
  std::vector<Episode> eps;
  std::set<ContextId> visited;
  for (int n = 0; n < 12; ++n) {
    const TaskMode m = kAllModes[n % 3];
    const bool prop = n % 2 == 0;
    const TokenSeq prompt = prop ? proposer_prompt(m, DifficultyBucket::kEasy)
                                 : make_task(m, zero_triplet(), task_rng).prompt_tokens;
    Episode ep{sample(params, prompt, prop ? Role::kProposer : Role::kSolver, m, rng), (n % 4) * 0.25};
    for (std::size_t pos = ep.trace.prompt_len; pos < ep.trace.tokens.size(); ++pos) {
      visited.insert(context_id(ep.trace.role, std::span(ep.trace.tokens).first(pos)));
    }
    eps.push_back(std::move(ep));
  }
  const PolicyParams before = params;
  BaselineTable t;
  apply_update(params, trr_gradient(params, eps, t, TrainConfig{}), 0.05, 0.0);
  for (const auto& [c, row] : params.table()) {
    EXPECT_TRUE(visited.contains(c));
  }
  EXPECT_FALSE(params.table().empty());
}

TEST(Update, ClipBoundsTheLogRatio) {
  PolicyParams params(c1_end_mask());
  BaselineTable t;
  std::vector<Episode> eps(40, episode({Token::kConst1, Token::kEnd}, 1.0));
  const LogitTable g = trr_gradient(params, eps, t, TrainConfig{});
  PolicyParams clipped = params, free = params;
  apply_update(clipped, g, 0.05, 0.0, 0.2);
  apply_update(free, g, 0.05, 0.0);
  const TokenSet allowed = token_set({Token::kConst1, Token::kEnd});
  double worst_clipped = 0.0, worst_free = 0.0;
  for (const auto& [c, row] : g) {
    const auto p0 = params.probabilities(c, allowed);
    const auto pc = clipped.probabilities(c, allowed);
    const auto pf = free.probabilities(c, allowed);
    for (Token tok : {Token::kConst1, Token::kEnd}) {
      const auto i = index_of(tok);
      worst_clipped = std::max(worst_clipped, std::abs(std::log(pc[i] / p0[i])));
      worst_free = std::max(worst_free, std::abs(std::log(pf[i] / p0[i])));
    }
  }
  EXPECT_LE(worst_clipped, std::log1p(0.2) + 1e-12);
  EXPECT_GT(worst_clipped, 0.5 * std::log1p(0.2));  // halving stops at the first fit
  EXPECT_GT(worst_free, std::log1p(0.2));
}

// ---- iterations -----------------------------------------------------------------

TEST(Iteration, CountsAndBaselines) {
  TrainConfig cfg = small_config();
  TrainerState s = TrainerState::initial(cfg);
  for (int it = 1; it <= 3; ++it) {
    IterationStats st = train_iteration(s, cfg);
    EXPECT_EQ(st.iter, it);
    EXPECT_EQ(s.iter, it);
    for (std::size_t m = 0; m < 3; ++m) {
      EXPECT_EQ(st.proposals_valid[m] + st.backfilled[m], cfg.batch_per_mode);
      EXPECT_GE(st.solve_rate[m], 0.0);
      EXPECT_LE(st.solve_rate[m], 1.0);
      for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_GE(st.mean_reward[m][r], -1.0);
        EXPECT_LE(st.mean_reward[m][r], 1.0);
      }
    }
    EXPECT_EQ(st.audit.off_support_tokens, 0U);
    for (TaskMode m : kAllModes) {
      EXPECT_EQ(s.baselines.at(m, Role::kProposer).count, it * cfg.batch_per_mode);
      EXPECT_EQ(s.baselines.at(m, Role::kSolver).count, it * cfg.batch_per_mode * cfg.reward.n_mc);
    }
  }
  EXPECT_GT(s.generated_total, 0U);
  EXPECT_EQ(s.off_support_total, 0U);
}

TEST(Iteration, FrozenProposerKeepsProposerCells) {
  TrainConfig cfg = small_config();
  cfg.frozen_proposer = true;
  TrainerState s = TrainerState::initial(cfg);
  EXPECT_EQ(s.params.role_update_mask(), RoleUpdateMask::kSolverOnly);
  for (int it = 0; it < 5; ++it) train_iteration(s, cfg);
  std::size_t solver_cells = 0;
  for (const auto& [c, row] : s.params.table()) {
    if (context_role(c) == Role::kProposer) {
      ADD_FAILURE() << "proposer context materialized";
    } else {
      solver_cells += row.present.count();
    }
  }
  EXPECT_GT(solver_cells, 0U);
  // Proposer baselines still track the rewards.
  EXPECT_EQ(s.baselines.at(TaskMode::kDeduction, Role::kProposer).count, 5 * cfg.batch_per_mode);
}

TEST(Iteration, StandardRunUpdatesBothRoles) {
  TrainConfig cfg = small_config();
  TrainerState s = TrainerState::initial(cfg);
  for (int it = 0; it < 3; ++it) train_iteration(s, cfg);
  std::array<bool, 2> seen{};
  for (const auto& [c, row] : s.params.table()) seen[static_cast<std::size_t>(context_role(c))] = true;
  EXPECT_TRUE(seen[0]);
  EXPECT_TRUE(seen[1]);
}

TEST(Iteration, DeterministicGivenSeed) {
  TrainConfig cfg = small_config(7);
  TrainerState a = TrainerState::initial(cfg), b = TrainerState::initial(cfg);
  for (int it = 0; it < 3; ++it) {
    IterationStats sa = train_iteration(a, cfg), sb = train_iteration(b, cfg);
    EXPECT_EQ(sa.mean_reward, sb.mean_reward);
    EXPECT_EQ(sa.proposals_valid, sb.proposals_valid);
    MetricsRecord ra = make_record(a, cfg, sa), rb = make_record(b, cfg, sb);
    EXPECT_EQ(ra.policy_entropy, rb.policy_entropy);
  }
  EXPECT_TRUE(bit_identical(a.params, b.params));
  EXPECT_EQ(snapshot_of(a.params).cells, snapshot_of(b.params).cells);

  TrainerState c = TrainerState::initial(small_config(8));
  for (int it = 0; it < 3; ++it) train_iteration(c, cfg);
  EXPECT_FALSE(bit_identical(a.params, c.params));
}

TEST(Iteration, ExplorationEmitsOffSupportTokens) {
  TrainConfig cfg = small_config();
  cfg.gamma_explore = 0.05;
  TrainerState s = TrainerState::initial(cfg);
  EXPECT_EQ(s.params.gamma_explore(), 0.05);
  for (int it = 0; it < 3; ++it) train_iteration(s, cfg);
  EXPECT_GT(s.off_support_total, 0U);
}

TEST(Record, EntropiesAndTotals) {
  TrainConfig cfg = small_config();
  TrainerState s = TrainerState::initial(cfg);
  IterationStats st = train_iteration(s, cfg);
  MetricsRecord r = make_record(s, cfg, st);
  EXPECT_EQ(r.iter, 1);
  EXPECT_GT(r.proposer_entropy, 0.0);
  EXPECT_GT(r.solver_entropy, 0.0);
  EXPECT_DOUBLE_EQ(r.policy_entropy, 0.5 * (r.proposer_entropy + r.solver_entropy));
  EXPECT_EQ(r.generated_tokens_total, s.generated_total);
  EXPECT_EQ(r.off_support_tokens, 0U);
}

TEST(EvalSet, BalancedAcrossRolesAndModes) {
  auto buffers = seed_buffers();
  Rng rng(3);
  auto set = entropy_eval_set(buffers, 6, rng);
  ASSERT_EQ(set.size(), 12U);
  std::array<std::array<int, 3>, 2> counts{};
  for (const auto& p : set) {
    ++counts[static_cast<std::size_t>(p.role)][static_cast<std::size_t>(p.mode)];
    if (p.role == Role::kProposer) EXPECT_EQ(p.tokens.front(), Token::kPropose);
    if (p.role == Role::kSolver) EXPECT_EQ(p.tokens.front(), mode_token(p.mode));
  }
  for (const auto& per_role : counts) {
    for (int c : per_role) EXPECT_EQ(c, 2);
  }
}

TEST(EvalSet, InfeasibleInductionFallsBack) {
  auto buffers = seed_buffers();
  Buffer only(TaskMode::kInduction);
  Program p = *parse(split_tokens("MUL C3 MUL X X")).program;
  only.insert(Triplet{p, Value::integer(1), Value::integer(3), 1, DifficultyBucket::kHard});
  buffers[2] = only;
  Rng rng(4);
  auto set = entropy_eval_set(buffers, 3, rng);
  EXPECT_EQ(set.size(), 6U);
}

class Recorder final : public RunObserver {
 public:
  void on_start(const TrainerState& s) override { started = s.iter == 0 && s.params.cell_count() == 0; }
  void on_iteration(const MetricsRecord& r, const TrainerState&) override { iters.push_back(r.iter); }
  bool started = false;
  std::vector<int> iters;
};

TEST(Run, CallsTheObserverPerIteration) {
  TrainConfig cfg = small_config();
  Recorder rec;
  run(cfg, rec);
  EXPECT_TRUE(rec.started);
  EXPECT_EQ(rec.iters, (std::vector<int>{1, 2, 3}));

  cfg.iterations = 0;
  Recorder none;
  run(cfg, none);
  EXPECT_TRUE(none.started);
  EXPECT_TRUE(none.iters.empty());
}

TEST(TrainSettings, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.learning_rate = 0.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.learning_rate = std::nan(""); }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.iterations = -1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_per_mode = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.gamma_explore = 1.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.clip_ratio = 0.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.std_floor = 0.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.reward.n_mc = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.entropy_prompts_per_role = 0; }).validate(), std::invalid_argument);
  EXPECT_NO_THROW(bad([](TrainConfig& c) { c.clip_ratio = 0.2; }).validate());
}

}  // namespace
}  // namespace selfplay
