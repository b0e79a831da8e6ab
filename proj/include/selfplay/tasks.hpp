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

// Task presentation for the three reasoning modes over a triplet (p, i, o):
//   deduction  - given (p, i), answer o
//   abduction  - given (p, o), answer any i' with p(i') = o
//   induction  - given two visible (in, out) pairs, answer a program that
//                also reproduces two held-out pairs
// plus the per-mode triplet buffers.

#include <array>
#include <deque>
#include <filesystem>
#include <set>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "selfplay/dsl.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/vocab.hpp"

namespace selfplay {

using IoPair = std::pair<Value, Value>;

struct TaskInstance {
  TaskMode mode = TaskMode::kDeduction;
  TokenSeq prompt_tokens;
  Triplet gold;
  std::vector<IoPair> visible_pairs;  // induction only
  std::vector<IoPair> holdout_pairs;  // induction only
};

class InductionInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Verdict : std::uint8_t { kCorrect, kWrong };

inline constexpr std::size_t kBufferCapacity = 512;
inline constexpr std::size_t kInductionPairs = 4;
inline constexpr std::size_t kInductionVisible = 2;

// FIFO set of triplets keyed by (program tokens, input).
class Buffer {
 public:
  explicit Buffer(TaskMode mode, std::size_t capacity = kBufferCapacity);

  // Returns false and keeps the existing entry when the key is present.
  bool insert(Triplet triplet);
  bool contains(const Program& program, Value input) const;
  // Records the latest observed difficulty of an existing entry.
  void set_bucket(const Program& program, Value input, DifficultyBucket bucket);

  // Uniform draw. Precondition: !empty().
  const Triplet& sample(Rng& rng) const;

  TaskMode mode() const { return mode_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Triplet>& items() const { return items_; }

 private:
  using Key = std::pair<TokenSeq, int>;
  static Key key_of(const Program& program, Value input);

  TaskMode mode_;
  std::size_t capacity_;
  std::deque<Triplet> items_;
  std::set<Key> keys_;
};

// Identity program on input 0.
Triplet zero_triplet();

// One buffer per mode, indexed by TaskMode, each holding the zero triplet.
std::array<Buffer, 3> seed_buffers();

// Inputs in [-9, 9] on which the program yields an in-range literal.
std::vector<Value> induction_inputs(const Program& program);
bool induction_feasible(const Program& program);

// Throws InductionInfeasible when fewer than four usable inputs exist.
TaskInstance make_task(TaskMode mode, const Triplet& triplet, Rng& rng);
// Induction task over the given inputs: first two visible, last two held out.
TaskInstance make_induction_task(const Triplet& triplet, std::span<const Value> inputs);

// `payload` is the answer between ANSWER and END.
Verdict verify_answer(const TaskInstance& task, std::span<const Token> payload);

// Exactly `want` triplets: the proposals first, then uniform buffer draws.
std::vector<Triplet> backfill(std::span<const Triplet> proposals, const Buffer& buffer,
                              std::size_t want, Rng& rng);

// One triplet per line: "<program tokens> | <input> | <output> | <created_iter>".
void write_buffer(const std::filesystem::path& path, const Buffer& buffer);
Buffer read_buffer(const std::filesystem::path& path, TaskMode mode);

}  // namespace selfplay
