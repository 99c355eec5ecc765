#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "zscl/model.hpp"
#include "zscl/task_data.hpp"

namespace zscl {

/// Generator parameters for one synthetic domain.
struct DomainSpec {
  std::string name;
  std::size_t classes = 20;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  double prototype_scale = 1.0;
  double sigma_img = 0.5;
  double sigma_txt = 0.3;
  std::uint64_t seed = 0;
  /// Pull of class prototypes toward the domain's center direction; 0 spreads them over the sphere.
  double concentration = 1.5;
  /// Domain-specific structured noise: images also get Σ_k a_k·u_k with a_k ~ N(0, nuisance_sigma²)
  /// along `nuisance_rank` fixed directions u_k. Pretraining pairs never carry it.
  std::size_t nuisance_rank = 4;
  double nuisance_sigma = 2.5;

  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// State shared by every domain: the text projection P (d_txt × d_img) that ties
/// a concept's image prototype to its text feature.
struct World {
  std::size_t d_img = 32;
  std::size_t d_txt = 16;
  /// Trailing image coordinates that never carry concept content (style/nuisance only).
  std::size_t style_dims = 0;
  Mat projection;

  std::size_t content_dims() const noexcept { return d_img - style_dims; }
  /// Zero-pads a content-space vector to d_img.
  Vec embed_content(std::span<const double> v) const;
  Vec text_of(std::span<const double> prototype) const;
};

World make_world(std::size_t d_img, std::size_t d_txt, std::uint64_t seed, std::size_t style_dims = 0);

/// Unit-norm prototype drawn from a domain's concept distribution.
Vec draw_prototype(const DomainSpec& spec, std::span<const double> center, std::mt19937_64& rng);
/// The domain's center direction on the image sphere.
Vec domain_center(const DomainSpec& spec, std::size_t d_img);
/// The domain's nuisance directions (rows, unit norm, d_img wide). With
/// style_dims > 0 they span only the trailing style coordinates.
Mat nuisance_directions(const DomainSpec& spec, std::size_t d_img, std::size_t style_dims = 0);

/// Per class: prototype μ_c, images scale·μ_c + σ_img·noise, text P·μ_c + σ_txt·noise.
TaskData gen_domain(const DomainSpec& spec, const World& world);

/// One domain's classes cut into consecutive steps (e.g. {50, 10, 10, 10, 10, 10}).
struct ClassSplit {
  DomainSpec domain;
  std::vector<std::size_t> steps;

  friend bool operator==(const ClassSplit&, const ClassSplit&) = default;
};

std::vector<TaskData> gen_class_incremental(const ClassSplit& split, const World& world);

/// Concept pool for toy pretraining: fresh prototypes from every domain plus generic ones.
struct PretrainCorpusSpec {
  std::size_t concepts_per_domain = 400;
  std::size_t generic_concepts = 2000;
  double sigma_img = 0.5;
  double sigma_txt = 0.3;

  friend bool operator==(const PretrainCorpusSpec&, const PretrainCorpusSpec&) = default;
};

struct PretrainCorpus {
  Mat prototypes;  // unit rows
  double prototype_scale = 1.0;
  double sigma_img = 0.5;
  double sigma_txt = 0.3;
};

struct ReferenceSpec {
  std::size_t images = 2000;
  std::size_t texts = 2000;
  std::size_t random_texts = 2000;
  /// Share of reference concepts drawn from the domain mixture rather than the whole sphere.
  double domain_fraction = 0.5;
  double sigma_img = 0.5;
  double sigma_txt = 0.3;

  friend bool operator==(const ReferenceSpec&, const ReferenceSpec&) = default;
};

struct PretrainConfig {
  std::size_t iterations = 3000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  /// Zero-shot accuracy on every task must exceed factor / m.
  double min_accuracy_factor = 2.0;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct BenchmarkSpec {
  Arch arch;
  /// Image coordinates reserved for style; concepts live in the remaining d_img − style_dims.
  std::size_t style_dims = 8;
  std::vector<DomainSpec> domains;
  std::optional<ClassSplit> class_split;
  PretrainCorpusSpec corpus;
  ReferenceSpec reference;
  PretrainConfig pretrain;

  void validate() const;
  friend bool operator==(const BenchmarkSpec&, const BenchmarkSpec&) = default;
};

/// Names of the tasks build_benchmark would produce, in generated order.
std::vector<std::string> task_names(const BenchmarkSpec& spec);

/// 5 domains × 20 classes, 50/50 samples per class, default arch.
BenchmarkSpec default_benchmark();

struct Benchmark {
  World world;
  std::vector<TaskData> tasks;
  PretrainCorpus corpus;
  ReferenceSet reference;
};

/// Generates every artifact; `seed` is mixed into each domain's own seed.
Benchmark build_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);

/// Image→text contrastive pretraining on fresh pairs from the corpus. Throws
/// PretrainingFailedError when some task's zero-shot accuracy stays at or below
/// min_accuracy_factor / m.
TwoTowerModel pretrain_toy(TwoTowerModel model, const Benchmark& bench, const PretrainConfig& config,
                           std::uint64_t seed);

enum class EvalMode { kTaskIncremental, kClassIncremental };

/// Test accuracy on `task`. Class-incremental mode predicts over the union of
/// every task's class texts and compares global class ids.
double evaluate(const TwoTowerModel& model, const TaskData& task, EvalMode mode, std::span<const TaskData> all_tasks);

struct AccuracyMatrix {
  std::vector<std::string> names;
  Mat acc;  // acc(t, j): accuracy on task j after training step t

  std::size_t size() const noexcept { return names.size(); }
  void validate() const;
};

AccuracyMatrix build_matrix(std::span<const TwoTowerModel> snapshots, std::span<const TaskData> tasks,
                            EvalMode mode);

struct MetricReport {
  std::vector<std::string> names;
  std::optional<double> transfer;                 // absent when n = 1
  double avg = 0.0;
  double last = 0.0;
  std::vector<std::optional<double>> transfer_j;  // first entry always absent
  Vec avg_j;
  Vec last_j;
};

MetricReport compute_metrics(const AccuracyMatrix& a);

/// Header of task names, one row of accuracies per training step.
std::string matrix_csv(const AccuracyMatrix& a);
AccuracyMatrix parse_matrix_csv(const std::string& text);

}  // namespace zscl
