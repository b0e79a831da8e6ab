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

// selfplay: train runs and analyse their artifacts.
//
//   selfplay train <cfg> [--force] [--output-dir DIR]
//   selfplay sparsity <a> <b> [--tol T] [--raw]
//   selfplay passk <log> --k 1,2,4
//   selfplay probe <rundir> [--snapshot PATH]... [--per-bucket 8] [--out DIR]
//   selfplay export <rundir> [--out DIR]

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfplay/runner.hpp"

int main(int argc, char** argv) {
  using namespace selfplay;
  CLI::App app{"Self-play reasoning lab: training loop and analysis instruments"};
  app.require_subcommand(1);

  std::string train_cfg, train_out;
  bool force = false;
  auto* train = app.add_subcommand("train", "Run a training config and write its artifacts");
  train->add_option("config", train_cfg, "key = value config file")->required();
  train->add_flag("--force", force, "Replace a non-empty output directory");
  train->add_option("--output-dir", train_out, "Override output_dir from the config");

  std::string snap_a, snap_b;
  SparsityOptions sparsity_opts;
  auto* sparsity = app.add_subcommand("sparsity", "Fraction of parameters unchanged between two checkpoints");
  sparsity->add_option("a", snap_a, "First snapshot")->required();
  sparsity->add_option("b", snap_b, "Second snapshot")->required();
  sparsity->add_option("--tol", sparsity_opts.tolerance, "Change threshold on |a - b|");
  sparsity->add_flag("--raw", sparsity_opts.raw, "Inputs are raw little-endian float64 arrays");

  std::string passk_log, k_list = "1";
  auto* passk = app.add_subcommand("passk", "Unbiased pass@k over a completion log");
  passk->add_option("log", passk_log, "Lines of 'task-id n c'")->required();
  passk->add_option("--k", k_list, "Comma-separated budgets")->required();

  std::string probe_dir, probe_out;
  std::vector<std::string> probe_snaps;
  ProbeOptions probe_opts;
  auto* probe = app.add_subcommand("probe", "Solve rate and response length by task creation iteration");
  probe->add_option("rundir", probe_dir, "Run directory")->required();
  probe->add_option("--snapshot", probe_snaps, "Snapshots to probe (default: all in the run)");
  probe->add_option("--per-bucket", probe_opts.per_bucket, "Questions per creation bucket");
  probe->add_option("--responses", probe_opts.responses, "Solver rollouts per question");
  probe->add_option("--bucket-width", probe_opts.bucket_width, "Iterations per creation bucket");
  probe->add_option("--seed", probe_opts.seed, "Probe sampling seed");
  probe->add_option("--out", probe_out, "Output directory (default: <rundir>/probe)");

  std::string export_dir, export_out;
  auto* exp = app.add_subcommand("export", "Flatten metrics.jsonl into per-metric CSV files");
  exp->add_option("rundir", export_dir, "Run directory")->required();
  exp->add_option("--out", export_out, "Output directory (default: <rundir>/export)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train) {
    TrainOptions opts;
    opts.force = force;
    if (!train_out.empty()) opts.output_dir = train_out;
    return cmd_train(train_cfg, opts, std::cout, std::cerr);
  }
  if (*sparsity) return cmd_sparsity(snap_a, snap_b, sparsity_opts, std::cout, std::cerr);
  if (*passk) return cmd_passk(passk_log, k_list, std::cout, std::cerr);
  if (*probe) {
    for (const auto& s : probe_snaps) probe_opts.snapshots.emplace_back(s);
    if (!probe_out.empty()) probe_opts.out_dir = probe_out;
    return cmd_probe(probe_dir, probe_opts, std::cout, std::cerr);
  }
  if (*exp) {
    std::optional<std::filesystem::path> out;
    if (!export_out.empty()) out = export_out;
    return cmd_export(export_dir, out, std::cout, std::cerr);
  }
  return kExitUsage;
}
