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

#include "selfplay/runner.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

#ifndef SELFPLAY_VERSION
#define SELFPLAY_VERSION "unknown"
#endif

namespace selfplay {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, std::string_view key) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key) + ": not a number: '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view text, std::string_view key) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct ConfigKey {
  std::string_view name;
  Setter set;
  Getter get;
};

std::string_view norm_name(AdvantageNorm n) {
  return n == AdvantageNorm::kMeanStd ? "mean_std" : "mean_only";
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"iterations", [](RunConfig& c, std::string_view v) { c.train.iterations = parse_number<int>(v, "iterations"); },
       [](const RunConfig& c) { return std::to_string(c.train.iterations); }},
      {"batch_per_mode",
       [](RunConfig& c, std::string_view v) { c.train.batch_per_mode = parse_number<int>(v, "batch_per_mode"); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_per_mode); }},
      {"learning_rate",
       [](RunConfig& c, std::string_view v) { c.train.learning_rate = parse_number<double>(v, "learning_rate"); },
       [](const RunConfig& c) { return format_double(c.train.learning_rate); }},
      {"gamma_explore",
       [](RunConfig& c, std::string_view v) { c.train.gamma_explore = parse_number<double>(v, "gamma_explore"); },
       [](const RunConfig& c) { return format_double(c.train.gamma_explore); }},
      {"clip_ratio",
       [](RunConfig& c, std::string_view v) {
         if (v == "off") {
           c.train.clip_ratio.reset();
         } else {
           c.train.clip_ratio = parse_number<double>(v, "clip_ratio");
         }
       },
       [](const RunConfig& c) {
         return c.train.clip_ratio ? format_double(*c.train.clip_ratio) : std::string("off");
       }},
      {"frozen_proposer",
       [](RunConfig& c, std::string_view v) { c.train.frozen_proposer = parse_bool(v, "frozen_proposer"); },
       [](const RunConfig& c) { return std::string(c.train.frozen_proposer ? "true" : "false"); }},
      {"seed", [](RunConfig& c, std::string_view v) { c.train.seed = parse_number<std::uint64_t>(v, "seed"); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"advantage_norm",
       [](RunConfig& c, std::string_view v) {
         if (v == "mean_std") {
           c.train.advantage_norm = AdvantageNorm::kMeanStd;
         } else if (v == "mean_only") {
           c.train.advantage_norm = AdvantageNorm::kMeanOnly;
         } else {
           throw ConfigError("advantage_norm: expected mean_std or mean_only, got '" + std::string(v) + "'");
         }
       },
       [](const RunConfig& c) { return std::string(norm_name(c.train.advantage_norm)); }},
      {"std_floor", [](RunConfig& c, std::string_view v) { c.train.std_floor = parse_number<double>(v, "std_floor"); },
       [](const RunConfig& c) { return format_double(c.train.std_floor); }},
      {"proposer_variant",
       [](RunConfig& c, std::string_view v) {
         auto variant = parse_variant(v);
         if (!variant) {
           throw ConfigError("proposer_variant: expected learnability or peak_half, got '" + std::string(v) + "'");
         }
         c.train.reward.proposer_variant = *variant;
       },
       [](const RunConfig& c) { return std::string(variant_name(c.train.reward.proposer_variant)); }},
      {"n_mc", [](RunConfig& c, std::string_view v) { c.train.reward.n_mc = parse_number<int>(v, "n_mc"); },
       [](const RunConfig& c) { return std::to_string(c.train.reward.n_mc); }},
      {"format_penalty",
       [](RunConfig& c, std::string_view v) { c.train.reward.format_penalty = parse_number<double>(v, "format_penalty"); },
       [](const RunConfig& c) { return format_double(c.train.reward.format_penalty); }},
      {"wrong_penalty",
       [](RunConfig& c, std::string_view v) { c.train.reward.wrong_penalty = parse_number<double>(v, "wrong_penalty"); },
       [](const RunConfig& c) { return format_double(c.train.reward.wrong_penalty); }},
      {"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
       [](const RunConfig& c) { return c.output_dir.string(); }},
      {"snapshot_every",
       [](RunConfig& c, std::string_view v) { c.snapshot_every = parse_number<int>(v, "snapshot_every"); },
       [](const RunConfig& c) { return std::to_string(c.snapshot_every); }},
      {"entropy_prompts_per_role",
       [](RunConfig& c, std::string_view v) {
         c.train.entropy_prompts_per_role = parse_number<int>(v, "entropy_prompts_per_role");
       },
       [](const RunConfig& c) { return std::to_string(c.train.entropy_prompts_per_role); }},
      {"entropy_samples_per_prompt",
       [](RunConfig& c, std::string_view v) {
         c.train.entropy_samples_per_prompt = parse_number<int>(v, "entropy_samples_per_prompt");
       },
       [](const RunConfig& c) { return std::to_string(c.train.entropy_samples_per_prompt); }},
  };
  return keys;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (snapshot_every < 1) throw ConfigError("snapshot_every must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    }
    if (value.empty()) throw ConfigError(where + std::string(key) + ": missing value");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) {
    out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics stream

namespace {

constexpr std::array<std::string_view, kEpsilonGrid.size()> kEpsilonSuffix = {"1e3", "1e4", "1e5"};

Json record_json(const MetricsRecord& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["iter"] = r.iter;
  j["policy_entropy"] = r.policy_entropy;
  j["proposer_entropy"] = r.proposer_entropy;
  j["solver_entropy"] = r.solver_entropy;
  for (TaskMode m : kAllModes) {
    j["solve_rate_" + std::string(mode_name(m))] = r.solve_rate[static_cast<std::size_t>(m)];
  }
  for (Role role : {Role::kProposer, Role::kSolver}) {
    j["response_length_" + std::string(role_name(role))] = r.response_length[static_cast<std::size_t>(role)];
  }
  for (TaskMode m : kAllModes) {
    for (Role role : {Role::kProposer, Role::kSolver}) {
      j["response_length_" + std::string(mode_name(m)) + "_" + std::string(role_name(role))] =
          r.mode_response_length[static_cast<std::size_t>(m)][static_cast<std::size_t>(role)];
    }
  }
  for (TaskMode m : kAllModes) {
    for (Role role : {Role::kProposer, Role::kSolver}) {
      j["mean_reward_" + std::string(mode_name(m)) + "_" + std::string(role_name(role))] =
          r.mean_reward[static_cast<std::size_t>(m)][static_cast<std::size_t>(role)];
    }
  }
  for (TaskMode m : kAllModes) {
    j["proposals_valid_" + std::string(mode_name(m))] = r.proposals_valid[static_cast<std::size_t>(m)];
  }
  for (TaskMode m : kAllModes) {
    j["backfilled_" + std::string(mode_name(m))] = r.backfilled[static_cast<std::size_t>(m)];
  }
  j["off_support_tokens"] = r.off_support_tokens;
  j["off_support_tokens_total"] = r.off_support_tokens_total;
  j["generated_tokens_total"] = r.generated_tokens_total;
  for (std::size_t e = 0; e < kEpsilonGrid.size(); ++e) {
    j["epsilon_support_mass_" + std::string(kEpsilonSuffix[e])] = r.epsilon_support_mass[e];
  }
  return j;
}

}  // namespace

std::string metrics_json_line(const MetricsRecord& record) { return record_json(record).dump(); }

// ---------------------------------------------------------------------------
// train

namespace {

std::string hardware_note() {
  utsname u{};
  if (uname(&u) != 0) return "unknown";
  return std::string(u.sysname) + " " + u.release + " " + u.machine;
}

Json config_json(const RunConfig& cfg) {
  Json j = Json::object();
  for (const auto& k : config_keys()) j[std::string(k.name)] = k.get(cfg);
  return j;
}

Json vocab_json() {
  Json j = Json::array();
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    j.push_back({{"id", i}, {"name", token_name(token_at(i))}});
  }
  return j;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::string snapshot_name(int iter) { return "iter_" + std::to_string(iter) + ".bin"; }
std::string buffer_dir_name(int iter) { return "iter_" + std::to_string(iter); }

void write_json(const fs::path& path, const Json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

class SchemaMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_schema(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
    throw SchemaMismatch(where + ": missing schema_version");
  }
  if (j["schema_version"].get<int>() != kSchemaVersion) {
    throw SchemaMismatch(where + ": schema_version " + j["schema_version"].dump() + ", expected " +
                         std::to_string(kSchemaVersion));
  }
}

class ArtifactWriter final : public RunObserver {
 public:
  ArtifactWriter(const RunConfig& cfg, fs::path dir) : cfg_(cfg), dir_(std::move(dir)) {
    fs::create_directories(dir_ / "snapshots");
    fs::create_directories(dir_ / "buffers");
    metrics_.open(dir_ / "metrics.jsonl", std::ios::binary);
    if (!metrics_) throw std::runtime_error((dir_ / "metrics.jsonl").string() + ": cannot open for writing");
  }

  void on_start(const TrainerState& state) override { checkpoint(state); }

  void on_iteration(const MetricsRecord& record, const TrainerState& state) override {
    metrics_ << metrics_json_line(record) << '\n';
    metrics_.flush();
    if (!metrics_) throw std::runtime_error((dir_ / "metrics.jsonl").string() + ": write failed");
    if (state.iter % cfg_.snapshot_every == 0 || state.iter == cfg_.train.iterations) checkpoint(state);
  }

  const std::vector<int>& snapshot_iters() const { return snapshots_; }

 private:
  void checkpoint(const TrainerState& state) {
    write_snapshot(dir_ / "snapshots" / snapshot_name(state.iter), snapshot_of(state.params));
    const fs::path bdir = dir_ / "buffers" / buffer_dir_name(state.iter);
    fs::create_directories(bdir);
    for (TaskMode m : kAllModes) {
      write_buffer(bdir / (std::string(mode_name(m)) + ".txt"), state.buffers[static_cast<std::size_t>(m)]);
    }
    snapshots_.push_back(state.iter);
  }

  const RunConfig& cfg_;
  fs::path dir_;
  std::ofstream metrics_;
  std::vector<int> snapshots_;
};

Json manifest_json(const RunConfig& cfg, const fs::path& config_path) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["code_version"] = SELFPLAY_VERSION;
  j["config_path"] = config_path.string();
  j["config"] = config_json(cfg);
  j["seed"] = cfg.train.seed;
  j["vocab_hash"] = hex64(vocab_hash());
  j["vocab"] = vocab_json();
  j["difficulty_thresholds"] = {{"easy_at_or_above", 0.75}, {"hard_at_or_below", 0.25}};
  j["buffer_capacity"] = kBufferCapacity;
  j["context_order"] = kContextOrder;
  j["max_generation"] = kMaxGeneration;
  j["hardware"] = hardware_note();
  return j;
}

}  // namespace

int cmd_train(const fs::path& config_path, const TrainOptions& options, std::ostream& out,
              std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (options.output_dir) cfg.output_dir = *options.output_dir;
  const fs::path dir = cfg.output_dir;
  try {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      if (!options.force) {
        err << "error: output directory " << dir.string() << " is not empty (use --force to overwrite)\n";
        return kExitUsage;
      }
      fs::remove_all(dir);
    }
    fs::create_directories(dir);

    Json manifest = manifest_json(cfg, config_path);
    manifest["status"] = "running";
    write_json(dir / "manifest.json", manifest);

    const auto t0 = std::chrono::steady_clock::now();
    ArtifactWriter writer(cfg, dir);
    run(cfg.train, writer);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    manifest["status"] = "complete";
    manifest["iterations_completed"] = cfg.train.iterations;
    manifest["snapshots"] = writer.snapshot_iters();
    manifest["wall_time_seconds"] = wall;
    write_json(dir / "manifest.json", manifest);
    out << "wrote " << cfg.train.iterations << " iterations to " << dir.string() << " in "
        << format_double(std::round(wall * 100.0) / 100.0) << " s\n";
    return kExitOk;
  } catch (const NonFiniteGradient& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// sparsity

int cmd_sparsity(const fs::path& a, const fs::path& b, const SparsityOptions& options,
                 std::ostream& out, std::ostream& err) {
  if (!(options.tolerance >= 0.0) || !std::isfinite(options.tolerance)) {
    err << "error: tolerance must be a finite value >= 0\n";
    return kExitUsage;
  }
  try {
    SparsityReport r;
    if (options.raw) {
      const auto xa = read_raw_array(a);
      const auto xb = read_raw_array(b);
      r = update_sparsity(xa, xb, options.tolerance);
    } else {
      r = update_sparsity(read_snapshot(a), read_snapshot(b), options.tolerance);
    }
    out << "tolerance,total_params,unchanged,changed,sparsity\n"
        << format_double(r.tolerance) << ',' << r.total_params << ',' << r.unchanged << ','
        << r.changed() << ',' << format_double(r.sparsity) << '\n';
    return kExitOk;
  } catch (const IncompatibleSnapshots& e) {
    err << "error: incompatible inputs: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SnapshotError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// passk

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ',')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != ',') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

std::optional<int> to_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

int cmd_passk(const fs::path& log, std::string_view k_list, std::ostream& out, std::ostream& err) {
  std::vector<int> ks;
  for (auto field : split_fields(k_list)) {
    auto k = to_int(field);
    if (!k || *k < 1) {
      err << "error: --k expects positive integers, got '" << field << "'\n";
      return kExitUsage;
    }
    ks.push_back(*k);
  }
  if (ks.empty()) {
    err << "error: --k needs at least one budget\n";
    return kExitUsage;
  }

  std::ifstream is(log);
  if (!is) {
    err << "error: " << log.string() << ": cannot open\n";
    return kExitUsage;
  }
  struct Row {
    int n, c;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string_view body = trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      // Optional header "# selfplay-passk v<N>".
      constexpr std::string_view kTag = "# selfplay-passk v";
      if (body.starts_with(kTag)) {
        auto v = to_int(body.substr(kTag.size()));
        if (!v || *v != kSchemaVersion) {
          err << "error: " << log.string() << ":" << lineno << ": unsupported log schema\n";
          return kExitUsage;
        }
      }
      continue;
    }
    auto fields = split_fields(body);
    if (fields.size() != 3) {
      err << "error: " << log.string() << ":" << lineno << ": expected 'task-id n c'\n";
      return kExitUsage;
    }
    auto n = to_int(fields[1]);
    auto c = to_int(fields[2]);
    if (!n || !c || *n < 1 || *c < 0 || *c > *n) {
      err << "error: " << log.string() << ":" << lineno << ": need integers with 0 <= c <= n, n >= 1\n";
      return kExitUsage;
    }
    rows.push_back({*n, *c, lineno});
  }
  if (rows.empty()) {
    err << "error: " << log.string() << ": no tasks in log\n";
    return kExitUsage;
  }
  for (const auto& r : rows) {
    for (int k : ks) {
      if (k > r.n) {
        err << "error: " << log.string() << ":" << r.line << ": k=" << k << " exceeds n=" << r.n << "\n";
        return kExitUsage;
      }
    }
  }
  out << "k,pass_at_k\n";
  for (int k : ks) {
    double sum = 0.0;
    for (const auto& r : rows) sum += pass_at_k({r.n, r.c, k});
    out << k << ',' << format_double(sum / static_cast<double>(rows.size())) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// probe

namespace {

constexpr std::uint64_t kProbeSelectStream = 3;
constexpr std::uint64_t kProbeRolloutStream = 4;

std::optional<int> iter_from_name(const std::string& stem) {
  if (!stem.starts_with("iter_")) return std::nullopt;
  return to_int(std::string_view(stem).substr(5));
}

std::vector<std::pair<int, fs::path>> list_iter_entries(const fs::path& dir, bool want_dirs) {
  std::vector<std::pair<int, fs::path>> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (want_dirs != e.is_directory()) continue;
    const std::string stem = want_dirs ? e.path().filename().string() : e.path().stem().string();
    if (!want_dirs && e.path().extension() != ".bin") continue;
    if (auto it = iter_from_name(stem)) out.emplace_back(*it, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_csv_header(std::ostream& os, std::string_view columns) {
  os << "# selfplay-csv v" << kSchemaVersion << "\n" << columns << "\n";
}

}  // namespace

int cmd_probe(const fs::path& run_dir, const ProbeOptions& options, std::ostream& out,
              std::ostream& err) {
  if (options.per_bucket < 1 || options.responses < 1 || options.bucket_width < 1) {
    err << "error: per-bucket, responses and bucket width must be >= 1\n";
    return kExitUsage;
  }
  try {
    const Json manifest = read_json(run_dir / "manifest.json");
    check_schema(manifest, (run_dir / "manifest.json").string());
    const int last_iter = manifest.value("iterations_completed", 0);

    // Deduction triplets from every saved buffer, deduplicated.
    std::map<std::pair<std::string, int>, Triplet> pool;
    for (const auto& [iter, bdir] : list_iter_entries(run_dir / "buffers", true)) {
      Buffer b = read_buffer(bdir / "deduction.txt", TaskMode::kDeduction);
      for (const auto& t : b.items()) pool.emplace(std::pair{t.program.to_string(), t.input.int_val}, t);
    }
    // Bucket key: the first checkpoint at or after creation (the seed triplet is bucket 0).
    const int w = options.bucket_width;
    std::map<int, std::vector<Triplet>> buckets;
    for (int key = 0; key <= ((last_iter + w - 1) / w) * w; key += w) buckets[key];
    for (const auto& [key, t] : pool) {
      const int b = t.created_iter <= 0 ? 0 : ((t.created_iter + w - 1) / w) * w;
      buckets[b].push_back(t);
    }
    for (const auto& [key, items] : buckets) {
      if (items.empty()) {
        err << "error: probe bucket " << key << " has no deduction triplets\n";
        return kExitUsage;
      }
    }

    Rng select = Rng::derive(options.seed, kProbeSelectStream);
    std::vector<ProbeQuestion> questions;
    for (auto& [key, items] : buckets) {
      const auto per = static_cast<std::size_t>(options.per_bucket);
      if (items.size() >= per) {
        for (std::size_t i = 0; i < per; ++i) {
          std::swap(items[i], items[i + select.below(items.size() - i)]);
          questions.push_back({make_task(TaskMode::kDeduction, items[i], select), key});
        }
      } else {
        for (std::size_t i = 0; i < per; ++i) {
          const Triplet& t = items[select.below(items.size())];
          questions.push_back({make_task(TaskMode::kDeduction, t, select), key});
        }
      }
    }

    std::vector<std::pair<int, fs::path>> snaps;
    if (options.snapshots.empty()) {
      snaps = list_iter_entries(run_dir / "snapshots", false);
    } else {
      for (std::size_t i = 0; i < options.snapshots.size(); ++i) {
        const auto& p = options.snapshots[i];
        snaps.emplace_back(iter_from_name(p.stem().string()).value_or(static_cast<int>(i)), p);
      }
    }
    if (snaps.empty()) {
      err << "error: no snapshots to probe in " << (run_dir / "snapshots").string() << "\n";
      return kExitUsage;
    }

    const fs::path out_dir = options.out_dir.value_or(run_dir / "probe");
    fs::create_directories(out_dir);
    std::ofstream len_csv(out_dir / "probe_length.csv");
    std::ofstream rate_csv(out_dir / "probe_solve_rate.csv");
    if (!len_csv || !rate_csv) throw std::runtime_error(out_dir.string() + ": cannot write probe CSVs");
    write_csv_header(len_csv, "snapshot_iter,bucket_iter,questions,responses,mean_length");
    write_csv_header(rate_csv, "snapshot_iter,bucket_iter,questions,responses,solve_rate");

    for (const auto& [snap_iter, path] : snaps) {
      PolicyParams params(grammar_mask());
      load_snapshot(params, read_snapshot(path));
      Rng rollouts = Rng::derive(options.seed, kProbeRolloutStream);
      for (const auto& cell : difficulty_probe(questions, params, options.responses, rollouts)) {
        len_csv << snap_iter << ',' << cell.created_iter << ',' << cell.questions << ','
                << cell.responses << ',' << format_double(cell.mean_length) << '\n';
        rate_csv << snap_iter << ',' << cell.created_iter << ',' << cell.questions << ','
                 << cell.responses << ',' << format_double(cell.solve_rate) << '\n';
      }
    }
    out << "probed " << snaps.size() << " snapshots over " << buckets.size() << " buckets ("
        << questions.size() << " questions) into " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const SchemaMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SnapshotError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// export

namespace {

struct ExportTable {
  std::string file;
  std::vector<std::pair<std::string, std::string>> columns;  // csv column, json key
};

std::vector<ExportTable> export_tables() {
  std::vector<ExportTable> t;
  t.push_back({"entropy.csv",
               {{"policy", "policy_entropy"}, {"proposer", "proposer_entropy"}, {"solver", "solver_entropy"}}});
  ExportTable solve{"solve_rate.csv", {}};
  for (TaskMode m : kAllModes) solve.columns.push_back({std::string(mode_name(m)), "solve_rate_" + std::string(mode_name(m))});
  t.push_back(solve);
  ExportTable len{"response_length.csv", {}};
  for (Role r : {Role::kProposer, Role::kSolver}) {
    len.columns.push_back({std::string(role_name(r)), "response_length_" + std::string(role_name(r))});
  }
  ExportTable reward{"mean_reward.csv", {}};
  for (TaskMode m : kAllModes) {
    for (Role r : {Role::kProposer, Role::kSolver}) {
      const std::string cell = std::string(mode_name(m)) + "_" + std::string(role_name(r));
      len.columns.push_back({cell, "response_length_" + cell});
      reward.columns.push_back({cell, "mean_reward_" + cell});
    }
  }
  t.push_back(len);
  t.push_back(reward);
  ExportTable props{"proposals.csv", {}};
  for (TaskMode m : kAllModes) {
    props.columns.push_back({"valid_" + std::string(mode_name(m)), "proposals_valid_" + std::string(mode_name(m))});
  }
  for (TaskMode m : kAllModes) {
    props.columns.push_back({"backfilled_" + std::string(mode_name(m)), "backfilled_" + std::string(mode_name(m))});
  }
  t.push_back(props);
  ExportTable support{"support.csv",
                      {{"off_support_tokens", "off_support_tokens"},
                       {"off_support_tokens_total", "off_support_tokens_total"},
                       {"generated_tokens_total", "generated_tokens_total"}}};
  for (auto suffix : kEpsilonSuffix) {
    const std::string key = "epsilon_support_mass_" + std::string(suffix);
    support.columns.push_back({key, key});
  }
  t.push_back(support);
  return t;
}

std::string json_cell(const Json& v) {
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

}  // namespace

int cmd_export(const fs::path& run_dir, const std::optional<fs::path>& out_dir, std::ostream& out,
               std::ostream& err) {
  try {
    const fs::path metrics_path = run_dir / "metrics.jsonl";
    std::ifstream is(metrics_path);
    if (!is) {
      err << "error: " << metrics_path.string() << ": cannot open\n";
      return kExitUsage;
    }
    std::vector<Json> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const std::string where = metrics_path.string() + ":" + std::to_string(lineno);
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::exception& e) {
        err << "error: " << where << ": " << e.what() << "\n";
        return kExitUsage;
      }
      check_schema(j, where);
      records.push_back(std::move(j));
    }

    const fs::path dest = out_dir.value_or(run_dir / "export");
    fs::create_directories(dest);
    Json index;
    index["schema_version"] = kSchemaVersion;
    index["run_dir"] = run_dir.string();
    index["iterations"] = records.size();
    index["files"] = Json::array();

    for (const auto& table : export_tables()) {
      std::ofstream os(dest / table.file);
      if (!os) throw std::runtime_error((dest / table.file).string() + ": cannot open for writing");
      std::string header = "iter";
      for (const auto& [col, key] : table.columns) header += "," + col;
      write_csv_header(os, header);
      for (std::size_t i = 0; i < records.size(); ++i) {
        const Json& r = records[i];
        os << r.at("iter").get<int>();
        for (const auto& [col, key] : table.columns) {
          if (!r.contains(key)) {
            throw SchemaMismatch(metrics_path.string() + ": record " + std::to_string(i + 1) +
                                 " lacks '" + key + "'");
          }
          os << ',' << json_cell(r[key]);
        }
        os << '\n';
      }
      Json cols = Json::array({"iter"});
      for (const auto& [col, key] : table.columns) cols.push_back(col);
      index["files"].push_back({{"name", table.file}, {"columns", cols}});
    }

    // Sparsity between consecutive snapshots, plus first vs last.
    const auto snaps = list_iter_entries(run_dir / "snapshots", false);
    {
      std::ofstream os(dest / "sparsity.csv");
      if (!os) throw std::runtime_error((dest / "sparsity.csv").string() + ": cannot open for writing");
      write_csv_header(os, "from_iter,to_iter,total_params,unchanged,sparsity");
      auto row = [&](const std::pair<int, fs::path>& a, const std::pair<int, fs::path>& b) {
        const SparsityReport r = update_sparsity(read_snapshot(a.second), read_snapshot(b.second));
        os << a.first << ',' << b.first << ',' << r.total_params << ',' << r.unchanged << ','
           << format_double(r.sparsity) << '\n';
      };
      for (std::size_t i = 1; i < snaps.size(); ++i) row(snaps[i - 1], snaps[i]);
      if (snaps.size() > 2) row(snaps.front(), snaps.back());
      index["files"].push_back(
          {{"name", "sparsity.csv"}, {"columns", {"from_iter", "to_iter", "total_params", "unchanged", "sparsity"}}});
    }
    write_json(dest / "index.json", index);
    out << "exported " << records.size() << " records to " << dest.string() << "\n";
    return kExitOk;
  } catch (const SchemaMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SnapshotError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace selfplay
