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
 * Unified proposer/solver policy.
 *
 * A sparse order-3 n-gram logit table: the next-token distribution at any
 * position is the softmax of the logits stored for the last three tokens,
 * restricted to the tokens the base support mask allows at that position.
 * Absent cells read as 0.0, so a fresh table is the uniform distribution over
 * the mask, which is the base policy q0. Masked tokens carry probability
 * exactly zero, and the mask never changes, so on-policy updates cannot move
 * mass outside supp(q0).
 *
 * Exploration: when gamma_explore > 0 the sampler draws each token from the
 * uniform distribution over the whole vocabulary with probability gamma.
 * That is the only path by which an off-mask token can be emitted.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "selfplay/dsl.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/vocab.hpp"

namespace selfplay {

inline constexpr std::size_t kContextOrder = 3;
inline constexpr std::size_t kMaxGeneration = 64;

// Packed (role, t[-3], t[-2], t[-1]); histories shorter than three are
// PAD-padded. The role keeps proposer and solver parameters disjoint even when
// their recent tokens coincide.
using ContextId = std::uint32_t;

inline constexpr ContextId kContextsPerRole = static_cast<ContextId>(kVocabSize * kVocabSize * kVocabSize);

ContextId context_id(Role role, std::span<const Token> history);
std::array<Token, kContextOrder> context_tokens(ContextId id);
Role context_role(ContextId id);

// Position kind of the decoding automaton. Fields are interpreted by the
// mask that produced the state.
struct DecodeState {
  std::uint8_t phase = 0;
  std::int8_t need = 0;
  std::int8_t used = 0;
  std::uint8_t tail = 0;

  friend bool operator==(const DecodeState&, const DecodeState&) = default;
};

// Base support: which tokens are legal at each position. Immutable once a
// policy holds it. Tokens outside the allowed set leave the state unchanged.
class SupportMask {
 public:
  virtual ~SupportMask() = default;
  virtual DecodeState start(std::span<const Token> prompt, Role role, TaskMode mode) const = 0;
  virtual TokenSet allowed(const DecodeState& state) const = 0;
  virtual DecodeState advance(const DecodeState& state, Token token) const = 0;
};

// Grammar-legal next tokens for the prompt templates below:
//   proposer:           <program> SEP <literal> END
//   deduction/abduction: ANSWER <literal>? END
//   induction:          ANSWER <program> END
// Program positions admit exactly the program tokens that can still close
// within 16 tokens.
class GrammarMask final : public SupportMask {
 public:
  DecodeState start(std::span<const Token> prompt, Role role, TaskMode mode) const override;
  TokenSet allowed(const DecodeState& state) const override;
  DecodeState advance(const DecodeState& state, Token token) const override;
};

std::shared_ptr<const SupportMask> grammar_mask();

// Prompt templates.
TokenSeq proposer_prompt(TaskMode mode, DifficultyBucket bucket);
TokenSeq deduction_prompt(const Program& program, Value input);
TokenSeq abduction_prompt(const Program& program, Value output);
TokenSeq induction_prompt(std::span<const std::pair<Value, Value>> visible_pairs);

struct LogitRow {
  std::array<double, kVocabSize> value{};
  TokenSet present;
};

// Sparse (context, token) -> real map. Used for logits and for gradients.
using LogitTable = std::map<ContextId, LogitRow>;

enum class RoleUpdateMask : std::uint8_t { kBoth, kSolverOnly };

class PolicyParams {
 public:
  explicit PolicyParams(std::shared_ptr<const SupportMask> mask = grammar_mask());

  double logit(ContextId context, Token token) const;
  void set_logit(ContextId context, Token token, double value);
  void add_logit(ContextId context, Token token, double delta);

  // softmax of the context's logits over `allowed`; exact zeros elsewhere.
  std::array<double, kVocabSize> probabilities(ContextId context, const TokenSet& allowed) const;

  const LogitTable& table() const { return table_; }
  LogitTable& mutable_table() { return table_; }
  std::size_t cell_count() const;

  const SupportMask& mask() const { return *mask_; }
  const std::shared_ptr<const SupportMask>& mask_ptr() const { return mask_; }

  RoleUpdateMask role_update_mask() const { return role_update_mask_; }
  void set_role_update_mask(RoleUpdateMask m) { role_update_mask_ = m; }
  double gamma_explore() const { return gamma_explore_; }
  void set_gamma_explore(double gamma);

 private:
  std::shared_ptr<const SupportMask> mask_;
  LogitTable table_;
  RoleUpdateMask role_update_mask_ = RoleUpdateMask::kBoth;
  double gamma_explore_ = 0.0;
};

struct SampleTrace {
  Role role = Role::kSolver;
  TaskMode mode = TaskMode::kDeduction;
  std::size_t prompt_len = 0;
  TokenSeq tokens;               // prompt followed by the generated tokens
  std::vector<double> logprobs;  // one per generated token, of the sampling distribution
  bool truncated = false;        // no END within kMaxGeneration tokens

  std::span<const Token> prompt() const { return std::span(tokens).first(prompt_len); }
  std::span<const Token> completion() const { return std::span(tokens).subspan(prompt_len); }
};

struct SampleOptions {
  // Overrides the policy's own exploration mix when set.
  std::optional<double> gamma;
  std::size_t max_tokens = kMaxGeneration;
};

SampleTrace sample(const PolicyParams& params, std::span<const Token> prompt, Role role,
                   TaskMode mode, Rng& rng, const SampleOptions& options = {});

struct LogProbResult {
  double value = 0.0;
  std::optional<std::size_t> off_support;  // completion index of the first masked token

  bool ok() const { return !off_support.has_value(); }
};

// Sum of log pi(token | context) over the completion, without exploration.
LogProbResult logprob_of(const PolicyParams& params, std::span<const Token> prompt, Role role,
                         TaskMode mode, std::span<const Token> completion);

// Score function d log pi(completion) / d logits. Positions whose token lies
// outside the mask (exploration draws) contribute nothing.
LogitTable grad_logprob(const PolicyParams& params, const SampleTrace& trace);

// Flat binary parameter container:
//   "SPLT" | u32 version | u32 context_order | u64 vocab_hash | u64 count
//   count x (u32 context_id, u32 token_id, f64 logit), sorted, little endian.
// context_id = role * 47^3 + packed tokens.
inline constexpr std::uint32_t kSnapshotVersion = 1;

struct SnapshotCell {
  ContextId context = 0;
  std::uint32_t token = 0;
  double logit = 0.0;

  friend bool operator==(const SnapshotCell&, const SnapshotCell&) = default;
};

struct Snapshot {
  std::uint32_t version = kSnapshotVersion;
  std::uint32_t context_order = kContextOrder;
  std::uint64_t vocab_hash = 0;
  std::vector<SnapshotCell> cells;
};

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Snapshot snapshot_of(const PolicyParams& params);
void load_snapshot(PolicyParams& params, const Snapshot& snapshot);
void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot);
Snapshot read_snapshot(const std::filesystem::path& path);

}  // namespace selfplay
