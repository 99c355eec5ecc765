#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zscl/benchmark.hpp"
#include "zscl/contlearn.hpp"

namespace zscl {

struct EmitFlags {
  bool checkpoints = true;
  bool iteration_logs = true;

  friend bool operator==(const EmitFlags&, const EmitFlags&) = default;
};

struct ExperimentConfig {
  /// Row name in reports; defaults to the recipe's method.
  std::string label;
  BenchmarkSpec benchmark = default_benchmark();
  /// Named permutation ("order-i", "order-ii", "reverse"); ignored when `order` is set.
  std::string order_name = "order-i";
  /// Explicit task order by name; empty means `order_name`.
  std::vector<std::string> order;
  TrainRecipe recipe;
  std::vector<std::uint64_t> seeds{1};
  EvalMode eval_mode = EvalMode::kTaskIncremental;
  std::filesystem::path output_dir = "runs";
  /// Where pretrained checkpoints are cached; empty means `<output_dir>/pretrained`.
  std::filesystem::path pretrain_cache;
  EmitFlags emit;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses a JSON config document. Unknown keys are rejected; `method` and
/// `seed`/`seeds` are required. Errors name the offending key (dotted path).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON with every field spelled out; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

/// Task indices in training order.
std::vector<std::size_t> resolve_order(const ExperimentConfig& config);
std::vector<std::string> order_names();

/// FNV-1a 64 of the canonical config (seeds and paths excluded).
std::string config_hash(const ExperimentConfig& config);
/// Hash of the benchmark spec alone; equal hashes mean comparable runs.
std::string benchmark_hash(const BenchmarkSpec& spec);

/// Benchmark, initial model, and pretrained model for one seed. The pretrained
/// checkpoint is cached under `cache_dir` keyed by benchmark hash and seed.
struct Prepared {
  Benchmark bench;
  TwoTowerModel pretrained;
  std::filesystem::path checkpoint;
  bool from_cache = false;
};

Prepared prepare(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& cache_dir);

struct RunManifest {
  std::string label;
  std::string method;
  std::string config_hash;
  std::string benchmark_hash;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string error;
  std::vector<std::string> task_order;
  std::filesystem::path dir;
  std::filesystem::path pretrained;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> logs;
  std::filesystem::path matrix;
  std::filesystem::path metrics;
  std::filesystem::path zero_shot_matrix;
  std::filesystem::path zero_shot_metrics;
  double wall_clock_seconds = 0.0;
};

/// One run per seed into `<output_dir>/seed-<s>/`; returns one manifest per seed.
/// A failing seed leaves a manifest with status "failed" and rethrows.
std::vector<RunManifest> run_experiment(const ExperimentConfig& config);
RunManifest run_seed(const ExperimentConfig& config, std::uint64_t seed);

std::string manifest_json(const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

std::string metrics_json(const MetricReport& r);
MetricReport parse_metrics_json(const std::string& text);

struct ReportRow {
  std::string label;
  std::size_t runs = 0;
  std::optional<double> transfer;
  double avg = 0.0;
  double last = 0.0;
  std::optional<double> d_transfer;
  double d_avg = 0.0;
  double d_last = 0.0;
};

struct Report {
  ReportRow zero_shot;  // Δ fields are zero by definition
  std::vector<ReportRow> rows;
};

/// Medians across seeds per label, Δ against the median zero-shot metrics.
/// Throws PreconditionError when manifests disagree on the benchmark.
Report emit_report(const std::vector<RunManifest>& manifests);
std::string report_csv(const Report& r);
std::string report_text(const Report& r);

double median(std::vector<double> v);

/// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Dumps a benchmark's tasks and reference pools as CSV files under `dir`.
std::vector<std::filesystem::path> write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);

}  // namespace zscl
