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

// Experiment configs, run artifacts and the analysis subcommands.
//
// Run directory layout:
//   manifest.json            config echo, vocab table, seed, versions, timing
//   metrics.jsonl            one record per iteration
//   snapshots/iter_N.bin     policy snapshots (iteration 0, every
//                            snapshot_every iterations, and the last one)
//   buffers/iter_N/<mode>.txt  task buffers at the same iterations
//
// Every cmd_* returns a process exit code: 0 ok, 1 runtime failure, 2 usage or
// validation error. Diagnostics go to `err`, results to `out`.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selfplay/trainer.hpp"

namespace selfplay {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  TrainConfig train;
  std::filesystem::path output_dir = "runs/default";
  int snapshot_every = 25;

  void validate() const;
};

// Flat `key = value` lines; `#` starts a comment. Unknown keys, repeated keys
// and malformed values throw ConfigError naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text form; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& cfg);

// One metrics.jsonl line, without the trailing newline.
std::string metrics_json_line(const MetricsRecord& record);

struct TrainOptions {
  bool force = false;
  std::optional<std::filesystem::path> output_dir;  // overrides the config
};

int cmd_train(const std::filesystem::path& config_path, const TrainOptions& options,
              std::ostream& out, std::ostream& err);

struct SparsityOptions {
  double tolerance = 0.0;
  bool raw = false;  // inputs are flat float64 arrays instead of snapshots
};

int cmd_sparsity(const std::filesystem::path& a, const std::filesystem::path& b,
                 const SparsityOptions& options, std::ostream& out, std::ostream& err);

// `k_list` is a comma-separated list of budgets.
int cmd_passk(const std::filesystem::path& log, std::string_view k_list, std::ostream& out,
              std::ostream& err);

struct ProbeOptions {
  std::vector<std::filesystem::path> snapshots;  // empty: every snapshot of the run
  int per_bucket = 8;
  int responses = 8;
  int bucket_width = 25;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out_dir;  // default <rundir>/probe
};

int cmd_probe(const std::filesystem::path& run_dir, const ProbeOptions& options, std::ostream& out,
              std::ostream& err);

int cmd_export(const std::filesystem::path& run_dir,
               const std::optional<std::filesystem::path>& out_dir, std::ostream& out,
               std::ostream& err);

// Shortest round-trip decimal form.
std::string format_double(double value);

}  // namespace selfplay
