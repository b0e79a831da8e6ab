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

#include "selfplay/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>

#include "selfplay/policy.hpp"

namespace selfplay {

namespace {

constexpr std::uint64_t kVerifySeed = 0;
constexpr std::string_view kBufferHeader = "# selfplay-buffer v1";

bool produces(const Program& program, Value input, Value expected) {
  ExecOutcome out = evaluate(program, input, kVerifySeed);
  return out.ok() && *out.value == expected;
}

}  // namespace

Buffer::Buffer(TaskMode mode, std::size_t capacity) : mode_(mode), capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("buffer capacity must be positive");
}

Buffer::Key Buffer::key_of(const Program& program, Value input) {
  return {TokenSeq(program.tokens().begin(), program.tokens().end()), input.int_val};
}

bool Buffer::insert(Triplet triplet) {
  Key key = key_of(triplet.program, triplet.input);
  if (keys_.contains(key)) return false;
  if (items_.size() == capacity_) {
    keys_.erase(key_of(items_.front().program, items_.front().input));
    items_.pop_front();
  }
  keys_.insert(std::move(key));
  items_.push_back(std::move(triplet));
  return true;
}

bool Buffer::contains(const Program& program, Value input) const {
  return keys_.contains(key_of(program, input));
}

void Buffer::set_bucket(const Program& program, Value input, DifficultyBucket bucket) {
  for (auto& t : items_) {
    if (t.input == input && t.program == program) {
      t.difficulty_bucket = bucket;
      return;
    }
  }
}

const Triplet& Buffer::sample(Rng& rng) const { return items_[rng.below(items_.size())]; }

Triplet zero_triplet() {
  const Token identity[] = {Token::kX};
  return Triplet{*parse(identity).program, Value::integer(0), Value::integer(0), 0,
                 DifficultyBucket::kEasy};
}

std::array<Buffer, 3> seed_buffers() {
  std::array<Buffer, 3> buffers{Buffer(TaskMode::kDeduction), Buffer(TaskMode::kAbduction),
                                Buffer(TaskMode::kInduction)};
  for (auto& b : buffers) b.insert(zero_triplet());
  return buffers;
}

std::vector<Value> induction_inputs(const Program& program) {
  std::vector<Value> out;
  for (int x = kLiteralMin; x <= kLiteralMax; ++x) {
    ExecOutcome r = evaluate(program, Value::integer(x), kVerifySeed);
    if (r.ok() && is_literal_value(*r.value)) out.push_back(Value::integer(x));
  }
  return out;
}

bool induction_feasible(const Program& program) {
  return induction_inputs(program).size() >= kInductionPairs;
}

TaskInstance make_induction_task(const Triplet& triplet, std::span<const Value> inputs) {
  if (inputs.size() != kInductionPairs) {
    throw std::invalid_argument("induction task needs exactly four inputs");
  }
  TaskInstance task;
  task.mode = TaskMode::kInduction;
  task.gold = triplet;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    ExecOutcome r = evaluate(triplet.program, inputs[k], kVerifySeed);
    if (!r.ok() || !is_literal_value(*r.value)) {
      throw InductionInfeasible("input " + std::to_string(inputs[k].int_val) +
                                " has no in-range output for " + triplet.program.to_string());
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (inputs[j] == inputs[k]) throw std::invalid_argument("induction inputs must be distinct");
    }
    auto& side = k < kInductionVisible ? task.visible_pairs : task.holdout_pairs;
    side.emplace_back(inputs[k], *r.value);
  }
  task.prompt_tokens = induction_prompt(task.visible_pairs);
  return task;
}

TaskInstance make_task(TaskMode mode, const Triplet& triplet, Rng& rng) {
  switch (mode) {
    case TaskMode::kDeduction:
      return TaskInstance{mode, deduction_prompt(triplet.program, triplet.input), triplet, {}, {}};
    case TaskMode::kAbduction:
      return TaskInstance{mode, abduction_prompt(triplet.program, triplet.output), triplet, {}, {}};
    case TaskMode::kInduction: break;
  }
  std::vector<Value> pool = induction_inputs(triplet.program);
  if (pool.size() < kInductionPairs) {
    throw InductionInfeasible(triplet.program.to_string() + " has only " +
                              std::to_string(pool.size()) + " usable inputs");
  }
  // Partial Fisher-Yates: the first four slots become a uniform 4-subset.
  for (std::size_t k = 0; k < kInductionPairs; ++k) {
    std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
  }
  pool.resize(kInductionPairs);
  return make_induction_task(triplet, pool);
}

Verdict verify_answer(const TaskInstance& task, std::span<const Token> payload) {
  const Triplet& gold = task.gold;
  switch (task.mode) {
    case TaskMode::kDeduction:
      if (payload.size() == 1 && is_literal(payload[0]) &&
          Value::integer(literal_value(payload[0])) == gold.output) {
        return Verdict::kCorrect;
      }
      return Verdict::kWrong;
    case TaskMode::kAbduction:
      if (payload.size() == 1 && is_literal(payload[0]) &&
          produces(gold.program, Value::integer(literal_value(payload[0])), gold.output)) {
        return Verdict::kCorrect;
      }
      return Verdict::kWrong;
    case TaskMode::kInduction: break;
  }
  ParseResult parsed = parse(payload);
  if (!parsed.ok() || parsed.program->contains(Token::kCoin)) return Verdict::kWrong;
  for (const auto* side : {&task.visible_pairs, &task.holdout_pairs}) {
    for (const auto& [in, out] : *side) {
      if (!produces(*parsed.program, in, out)) return Verdict::kWrong;
    }
  }
  return Verdict::kCorrect;
}

std::vector<Triplet> backfill(std::span<const Triplet> proposals, const Buffer& buffer,
                              std::size_t want, Rng& rng) {
  std::vector<Triplet> out;
  out.reserve(want);
  for (std::size_t i = 0; i < proposals.size() && out.size() < want; ++i) out.push_back(proposals[i]);
  while (out.size() < want) out.push_back(buffer.sample(rng));
  return out;
}

void write_buffer(const std::filesystem::path& path, const Buffer& buffer) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << kBufferHeader << " mode=" << mode_name(buffer.mode()) << '\n';
  for (const auto& t : buffer.items()) {
    os << t.program.to_string() << " | " << t.input.int_val << " | " << t.output.int_val << " | "
       << t.created_iter << '\n';
  }
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Buffer read_buffer(const std::filesystem::path& path, TaskMode mode) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  auto fail = [&path](std::size_t line, const std::string& what) {
    return std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  if (!std::getline(is, line) || !line.starts_with(kBufferHeader)) {
    throw fail(1, "missing or unsupported buffer header");
  }
  Buffer buffer(mode);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '|')) fields.push_back(field);
    if (fields.size() != 4) throw fail(lineno, "expected 4 '|'-separated fields");
    TokenSeq tokens;
    try {
      tokens = split_tokens(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw fail(lineno, e.what());
    }
    ParseResult parsed = parse(tokens);
    if (!parsed.ok()) throw fail(lineno, parsed.error.message());
    int input = 0, output = 0, created = 0;
    try {
      input = std::stoi(fields[1]);
      output = std::stoi(fields[2]);
      created = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw fail(lineno, "non-integer field");
    }
    Triplet t{*parsed.program, Value::integer(input), Value::integer(output), created,
              DifficultyBucket::kEasy};
    if (!is_literal_value(t.input) || !is_literal_value(t.output) ||
        !produces(t.program, t.input, t.output)) {
      throw fail(lineno, "triplet does not verify");
    }
    buffer.insert(std::move(t));
  }
  return buffer;
}

}  // namespace selfplay
