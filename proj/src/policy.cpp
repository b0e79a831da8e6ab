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

#include "selfplay/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace selfplay {

ContextId context_id(Role role, std::span<const Token> history) {
  ContextId id = static_cast<ContextId>(role);
  for (std::size_t k = kContextOrder; k > 0; --k) {
    Token t = history.size() >= k ? history[history.size() - k] : Token::kPad;
    id = id * static_cast<ContextId>(kVocabSize) + static_cast<ContextId>(index_of(t));
  }
  return id;
}

Role context_role(ContextId id) { return id >= kContextsPerRole ? Role::kSolver : Role::kProposer; }

std::array<Token, kContextOrder> context_tokens(ContextId id) {
  std::array<Token, kContextOrder> out{};
  for (std::size_t k = kContextOrder; k > 0; --k) {
    out[k - 1] = token_at(id % kVocabSize);
    id /= static_cast<ContextId>(kVocabSize);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grammar mask

namespace {

enum Phase : std::uint8_t {
  kProgram,
  kProposalSep,
  kProposalInput,
  kFinalEnd,
  kAnswerOpen,
  kAnswerLiteral,
};

}  // namespace

DecodeState GrammarMask::start(std::span<const Token>, Role role, TaskMode mode) const {
  if (role == Role::kProposer) return DecodeState{kProgram, 1, 0, kProposalSep};
  // The tail of an answer frame records what follows ANSWER.
  return DecodeState{kAnswerOpen, 0, 0,
                     static_cast<std::uint8_t>(mode == TaskMode::kInduction ? kProgram
                                                                            : kAnswerLiteral)};
}

TokenSet GrammarMask::allowed(const DecodeState& state) const {
  TokenSet s;
  switch (state.phase) {
    case kProgram:
      for (std::size_t i = index_of(Token::kX); i <= index_of(Token::kCoin); ++i) {
        // Closing the expression needs at least `need - 1 + arity` more tokens.
        const int after = state.used + 1 + state.need - 1 + arity(token_at(i));
        if (after <= static_cast<int>(kMaxProgramTokens)) s.set(i);
      }
      break;
    case kProposalSep: s.set(index_of(Token::kSep)); break;
    case kProposalInput: s = literal_tokens(); break;
    case kFinalEnd: s.set(index_of(Token::kEnd)); break;
    case kAnswerOpen: s.set(index_of(Token::kAnswer)); break;
    case kAnswerLiteral:
      s = literal_tokens();
      s.set(index_of(Token::kEnd));
      break;
    default: break;
  }
  return s;
}

DecodeState GrammarMask::advance(const DecodeState& state, Token token) const {
  if (!allowed(state).test(index_of(token))) return state;
  DecodeState next = state;
  switch (state.phase) {
    case kProgram:
      next.used = static_cast<std::int8_t>(state.used + 1);
      next.need = static_cast<std::int8_t>(state.need + arity(token) - 1);
      if (next.need == 0) next.phase = state.tail;
      break;
    case kProposalSep: next.phase = kProposalInput; break;
    case kProposalInput: next.phase = kFinalEnd; break;
    case kAnswerOpen:
      if (state.tail == kProgram) {
        next = DecodeState{kProgram, 1, 0, kFinalEnd};
      } else {
        next.phase = kAnswerLiteral;
      }
      break;
    case kAnswerLiteral: next.phase = kFinalEnd; break;
    default: break;
  }
  return next;
}

std::shared_ptr<const SupportMask> grammar_mask() {
  static const auto mask = std::make_shared<const GrammarMask>();
  return mask;
}

TokenSeq proposer_prompt(TaskMode mode, DifficultyBucket bucket) {
  return {Token::kPropose, mode_token(mode), bucket_token(bucket), Token::kGo};
}

TokenSeq deduction_prompt(const Program& program, Value input) {
  TokenSeq out{Token::kModeDed};
  out.insert(out.end(), program.tokens().begin(), program.tokens().end());
  out.push_back(Token::kSep);
  out.push_back(literal_token(input.int_val));
  out.push_back(Token::kGo);
  return out;
}

TokenSeq abduction_prompt(const Program& program, Value output) {
  TokenSeq out{Token::kModeAbd};
  out.insert(out.end(), program.tokens().begin(), program.tokens().end());
  out.push_back(Token::kSep);
  out.push_back(literal_token(output.int_val));
  out.push_back(Token::kGo);
  return out;
}

TokenSeq induction_prompt(std::span<const std::pair<Value, Value>> visible_pairs) {
  TokenSeq out{Token::kModeInd};
  for (const auto& [in, out_v] : visible_pairs) {
    out.push_back(literal_token(in.int_val));
    out.push_back(literal_token(out_v.int_val));
  }
  out.push_back(Token::kGo);
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

PolicyParams::PolicyParams(std::shared_ptr<const SupportMask> mask) : mask_(std::move(mask)) {
  if (!mask_) throw std::invalid_argument("PolicyParams requires a support mask");
}

double PolicyParams::logit(ContextId context, Token token) const {
  auto it = table_.find(context);
  return it == table_.end() ? 0.0 : it->second.value[index_of(token)];
}

void PolicyParams::set_logit(ContextId context, Token token, double value) {
  LogitRow& row = table_[context];
  row.value[index_of(token)] = value;
  row.present.set(index_of(token));
}

void PolicyParams::add_logit(ContextId context, Token token, double delta) {
  LogitRow& row = table_[context];
  row.value[index_of(token)] += delta;
  row.present.set(index_of(token));
}

std::size_t PolicyParams::cell_count() const {
  std::size_t n = 0;
  for (const auto& [ctx, row] : table_) n += row.present.count();
  return n;
}

void PolicyParams::set_gamma_explore(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma_explore must be in [0, 1)");
  gamma_explore_ = gamma;
}

std::array<double, kVocabSize> PolicyParams::probabilities(ContextId context,
                                                           const TokenSet& allowed) const {
  std::array<double, kVocabSize> p{};
  if (allowed.none()) return p;
  static const LogitRow kZeroRow{};
  auto it = table_.find(context);
  const LogitRow& row = it == table_.end() ? kZeroRow : it->second;

  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (allowed.test(i)) max_logit = std::max(max_logit, row.value[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (allowed.test(i)) {
      p[i] = std::exp(row.value[i] - max_logit);
      z += p[i];
    }
  }
  for (std::size_t i = 0; i < kVocabSize; ++i) p[i] /= z;
  return p;
}

// ---------------------------------------------------------------------------
// Sampling and scoring

namespace {

Token draw(const std::array<double, kVocabSize>& p, const TokenSet& allowed, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (!allowed.test(i)) continue;
    cum += p[i];
    last = i;
    if (u < cum) return token_at(i);
  }
  return token_at(last);
}

}  // namespace

SampleTrace sample(const PolicyParams& params, std::span<const Token> prompt, Role role,
                   TaskMode mode, Rng& rng, const SampleOptions& options) {
  const double gamma = options.gamma.value_or(params.gamma_explore());
  const SupportMask& mask = params.mask();

  SampleTrace trace;
  trace.role = role;
  trace.mode = mode;
  trace.prompt_len = prompt.size();
  trace.tokens.assign(prompt.begin(), prompt.end());
  trace.truncated = true;

  DecodeState state = mask.start(prompt, role, mode);
  for (std::size_t step = 0; step < options.max_tokens; ++step) {
    const TokenSet allowed = mask.allowed(state);
    if (allowed.none()) break;
    const auto p = params.probabilities(context_id(role, trace.tokens), allowed);

    Token tok;
    if (gamma > 0.0 && rng.uniform() < gamma) {
      tok = token_at(rng.below(kVocabSize));
    } else {
      tok = draw(p, allowed, rng);
    }
    const double mass = (1.0 - gamma) * p[index_of(tok)] + gamma / static_cast<double>(kVocabSize);
    trace.tokens.push_back(tok);
    trace.logprobs.push_back(std::log(mass));
    if (tok == Token::kEnd) {
      trace.truncated = false;
      break;
    }
    state = mask.advance(state, tok);
  }
  return trace;
}

LogProbResult logprob_of(const PolicyParams& params, std::span<const Token> prompt, Role role,
                         TaskMode mode, std::span<const Token> completion) {
  const SupportMask& mask = params.mask();
  TokenSeq history(prompt.begin(), prompt.end());
  DecodeState state = mask.start(prompt, role, mode);
  LogProbResult result;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    const TokenSet allowed = mask.allowed(state);
    const Token tok = completion[i];
    if (!allowed.test(index_of(tok))) {
      result.value = -std::numeric_limits<double>::infinity();
      result.off_support = i;
      return result;
    }
    const auto p = params.probabilities(context_id(role, history), allowed);
    result.value += std::log(p[index_of(tok)]);
    history.push_back(tok);
    state = mask.advance(state, tok);
  }
  return result;
}

LogitTable grad_logprob(const PolicyParams& params, const SampleTrace& trace) {
  const SupportMask& mask = params.mask();
  LogitTable grad;
  DecodeState state = mask.start(trace.prompt(), trace.role, trace.mode);
  for (std::size_t pos = trace.prompt_len; pos < trace.tokens.size(); ++pos) {
    const Token tok = trace.tokens[pos];
    const TokenSet allowed = mask.allowed(state);
    if (allowed.test(index_of(tok))) {
      const auto history = std::span(trace.tokens).first(pos);
      const ContextId ctx = context_id(trace.role, history);
      const auto p = params.probabilities(ctx, allowed);
      LogitRow& row = grad[ctx];
      for (std::size_t i = 0; i < kVocabSize; ++i) {
        if (!allowed.test(i)) continue;
        row.value[i] += (i == index_of(tok) ? 1.0 : 0.0) - p[i];
        row.present.set(i);
      }
    }
    state = mask.advance(state, tok);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

constexpr char kSnapshotMagic[4] = {'S', 'P', 'L', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw SnapshotError(path.string() + ": truncated snapshot");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

Snapshot snapshot_of(const PolicyParams& params) {
  Snapshot snap;
  snap.vocab_hash = vocab_hash();
  for (const auto& [ctx, row] : params.table()) {
    for (std::size_t i = 0; i < kVocabSize; ++i) {
      if (row.present.test(i)) {
        snap.cells.push_back({ctx, static_cast<std::uint32_t>(i), row.value[i]});
      }
    }
  }
  return snap;
}

void load_snapshot(PolicyParams& params, const Snapshot& snapshot) {
  if (snapshot.vocab_hash != vocab_hash() || snapshot.context_order != kContextOrder) {
    throw SnapshotError("snapshot was written with a different vocabulary or context order");
  }
  params.mutable_table().clear();
  for (const auto& cell : snapshot.cells) {
    if (cell.token >= kVocabSize) throw SnapshotError("snapshot token id out of range");
    if (cell.context >= 2 * kContextsPerRole) throw SnapshotError("snapshot context id out of range");
    params.set_logit(cell.context, token_at(cell.token), cell.logit);
  }
}

void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw SnapshotError(path.string() + ": cannot open for writing");
  os.write(kSnapshotMagic, sizeof(kSnapshotMagic));
  put<std::uint32_t>(os, snapshot.version);
  put<std::uint32_t>(os, snapshot.context_order);
  put<std::uint64_t>(os, snapshot.vocab_hash);
  put<std::uint64_t>(os, snapshot.cells.size());
  for (const auto& c : snapshot.cells) {
    put<std::uint32_t>(os, c.context);
    put<std::uint32_t>(os, c.token);
    put<double>(os, c.logit);
  }
  if (!os) throw SnapshotError(path.string() + ": write failed");
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SnapshotError(path.string() + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kSnapshotMagic, 4) != 0) {
    throw SnapshotError(path.string() + ": not a policy snapshot");
  }
  Snapshot snap;
  snap.version = get<std::uint32_t>(is, path);
  if (snap.version != kSnapshotVersion) {
    throw SnapshotError(path.string() + ": unsupported snapshot version " +
                        std::to_string(snap.version));
  }
  snap.context_order = get<std::uint32_t>(is, path);
  snap.vocab_hash = get<std::uint64_t>(is, path);
  const auto count = get<std::uint64_t>(is, path);
  snap.cells.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SnapshotCell c;
    c.context = get<std::uint32_t>(is, path);
    c.token = get<std::uint32_t>(is, path);
    c.logit = get<double>(is, path);
    snap.cells.push_back(c);
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw SnapshotError(path.string() + ": trailing bytes after records");
  }
  return snap;
}

}  // namespace selfplay
