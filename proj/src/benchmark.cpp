#include "zscl/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "zscl/contlearn.hpp"
#include "zscl/error.hpp"
#include "zscl/losses.hpp"

namespace zscl {

namespace {

// Deterministic generator for (seed, stream tag) pairs.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

enum StreamTag : std::uint32_t {
  kWorldStream = 1,
  kCenterStream = 2,
  kClassStream = 3,
  kSampleStream = 4,
  kCorpusStream = 5,
  kReferenceStream = 6,
  kPretrainStream = 7,
  kNuisanceStream = 8,
};

Vec gaussian_vec(std::size_t d, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Vec v(d);
  for (double& x : v) x = n(rng);
  return v;
}

Vec unit_gaussian(std::size_t d, std::mt19937_64& rng) {
  for (;;) {
    Vec v = gaussian_vec(d, 1.0, rng);
    if (norm2(v) > 1e-12) return l2_normalize(v);
  }
}

Vec noisy_image(std::span<const double> proto, double scale, double sigma, std::mt19937_64& rng) {
  Vec x = gaussian_vec(proto.size(), sigma / std::sqrt(static_cast<double>(proto.size())), rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * proto[i];
  return x;
}

Vec noisy_text(const World& world, std::span<const double> proto, double sigma, std::mt19937_64& rng) {
  Vec t = world.text_of(proto);
  const double sd = sigma / std::sqrt(static_cast<double>(world.d_txt));
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t) v += n(rng);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- generation

void DomainSpec::validate() const {
  if (classes < 2) throw ConfigError("classes", "domain '" + name + "' needs at least 2 classes");
  if (!(sigma_img >= 0.0)) throw ConfigError("sigma_img", "must be >= 0");
  if (!(sigma_txt >= 0.0)) throw ConfigError("sigma_txt", "must be >= 0");
  if (!(prototype_scale > 0.0)) throw ConfigError("prototype_scale", "must be > 0");
  if (!(concentration >= 0.0)) throw ConfigError("concentration", "must be >= 0");
  if (!(nuisance_sigma >= 0.0)) throw ConfigError("nuisance_sigma", "must be >= 0");
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("train_per_class", "sample counts must be >= 1");
}

Vec World::embed_content(std::span<const double> v) const {
  if (v.size() != content_dims()) throw DimensionError("World::embed_content: expected content-space vector");
  Vec out(d_img, 0.0);
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

Vec World::text_of(std::span<const double> prototype) const {
  if (prototype.size() != d_img) throw DimensionError("World::text_of: prototype dimension mismatch");
  Vec t(d_txt, 0.0);
  for (std::size_t r = 0; r < d_txt; ++r) t[r] = dot(projection.row(r), prototype);
  return t;
}

World make_world(std::size_t d_img, std::size_t d_txt, std::uint64_t seed, std::size_t style_dims) {
  if (d_img == 0 || d_txt == 0) throw DimensionError("make_world: dimensions must be positive");
  if (style_dims >= d_img) throw ConfigError("style_dims", "must leave at least one content dimension");
  auto rng = stream(seed, kWorldStream);
  World w{d_img, d_txt, style_dims, Mat(d_txt, d_img)};
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(d_txt)));
  for (double& v : w.projection.data()) v = n(rng);
  return w;
}

Vec domain_center(const DomainSpec& spec, std::size_t d_img) {
  auto rng = stream(spec.seed, kCenterStream);
  return unit_gaussian(d_img, rng);
}

Mat nuisance_directions(const DomainSpec& spec, std::size_t d_img, std::size_t style_dims) {
  if (style_dims > d_img) throw DimensionError("nuisance_directions: style_dims exceeds d_img");
  auto rng = stream(spec.seed, kNuisanceStream);
  const std::size_t span = style_dims == 0 ? d_img : style_dims;
  Mat dirs(spec.nuisance_rank, d_img);
  for (std::size_t k = 0; k < spec.nuisance_rank; ++k) {
    const Vec u = unit_gaussian(span, rng);
    std::copy(u.begin(), u.end(), dirs.row(k).begin() + static_cast<std::ptrdiff_t>(d_img - span));
  }
  return dirs;
}

Vec draw_prototype(const DomainSpec& spec, std::span<const double> center, std::mt19937_64& rng) {
  const std::size_t d = center.size();
  for (;;) {
    Vec v = gaussian_vec(d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    for (std::size_t i = 0; i < d; ++i) v[i] += spec.concentration * center[i];
    if (norm2(v) > 1e-12) return l2_normalize(v);
  }
}

namespace {

TaskData gen_classes(const DomainSpec& spec, const World& world, std::size_t first, std::size_t count) {
  const Vec center = domain_center(spec, world.content_dims());
  auto class_rng = stream(spec.seed, kClassStream);
  std::vector<Vec> protos;
  std::vector<Vec> texts;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Vec p = world.embed_content(draw_prototype(spec, center, class_rng));
    Vec t = noisy_text(world, p, spec.sigma_txt, class_rng);
    if (c >= first && c < first + count) {
      protos.push_back(std::move(p));
      texts.push_back(std::move(t));
    }
  }
  // Per-class sample streams keep a class's samples identical regardless of slicing.
  TaskData td;
  td.name = spec.name;
  td.class_offset = first;
  td.class_texts = Mat::from_rows(texts);
  const Mat nuisance = nuisance_directions(spec, world.d_img, world.style_dims);
  std::normal_distribution<double> amp(0.0, spec.nuisance_sigma);
  auto sample = [&](std::span<const double> proto, std::mt19937_64& rng) {
    Vec x = noisy_image(proto, spec.prototype_scale, spec.sigma_img, rng);
    for (std::size_t k = 0; k < nuisance.rows(); ++k) {
      const double a = amp(rng);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * nuisance(k, i);
    }
    return x;
  };
  std::vector<Vec> train_rows, test_rows;
  for (std::size_t c = 0; c < protos.size(); ++c) {
    auto rng = stream(mix_seed(spec.seed, first + c), kSampleStream);
    for (std::size_t s = 0; s < spec.train_per_class; ++s) {
      train_rows.push_back(sample(protos[c], rng));
      td.train_labels.push_back(c);
    }
    for (std::size_t s = 0; s < spec.test_per_class; ++s) {
      test_rows.push_back(sample(protos[c], rng));
      td.test_labels.push_back(c);
    }
  }
  td.train_images = Mat::from_rows(train_rows);
  td.test_images = Mat::from_rows(test_rows);
  return td;
}

}  // namespace

TaskData gen_domain(const DomainSpec& spec, const World& world) {
  spec.validate();
  return gen_classes(spec, world, 0, spec.classes);
}

std::vector<TaskData> gen_class_incremental(const ClassSplit& split, const World& world) {
  split.domain.validate();
  std::size_t total = 0;
  for (std::size_t s : split.steps) {
    if (s == 0) throw ConfigError("steps", "every step needs at least one class");
    total += s;
  }
  if (total != split.domain.classes) throw ConfigError("steps", "step sizes must sum to the domain's class count");
  std::vector<TaskData> out;
  std::size_t first = 0;
  for (std::size_t i = 0; i < split.steps.size(); ++i) {
    TaskData td = gen_classes(split.domain, world, first, split.steps[i]);
    td.name = split.domain.name + "-step" + std::to_string(i + 1);
    out.push_back(std::move(td));
    first += split.steps[i];
  }
  return out;
}

// ---------------------------------------------------------------- benchmark

void BenchmarkSpec::validate() const {
  arch.layout();
  if (style_dims >= arch.d_img) throw ConfigError("style_dims", "must leave at least one content dimension");
  if (domains.empty() && !class_split) throw ConfigError("domains", "benchmark needs domains or a class split");
  if (!domains.empty() && class_split) throw ConfigError("class_split", "use either domains or class_split, not both");
  for (const auto& d : domains) d.validate();
  if (class_split) class_split->domain.validate();
  auto names = task_names(*this);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw ConfigError("domains", "task names must be unique");
  }
  if (!(reference.domain_fraction >= 0.0 && reference.domain_fraction <= 1.0)) {
    throw ConfigError("domain_fraction", "must be in [0, 1]");
  }
  if (reference.images < 2 || reference.texts < 2 || reference.random_texts < 2) {
    throw ConfigError("reference", "reference pools need at least 2 entries each");
  }
  if (pretrain.batch_size < 2) throw ConfigError("batch_size", "pretraining batch needs at least 2 pairs");
}

std::vector<std::string> task_names(const BenchmarkSpec& spec) {
  std::vector<std::string> out;
  if (spec.class_split) {
    for (std::size_t i = 0; i < spec.class_split->steps.size(); ++i) {
      out.push_back(spec.class_split->domain.name + "-step" + std::to_string(i + 1));
    }
  } else {
    for (const auto& d : spec.domains) out.push_back(d.name);
  }
  return out;
}

BenchmarkSpec default_benchmark() {
  BenchmarkSpec b;
  const char* names[] = {"Aurora", "Basalt", "Coral", "Dune", "Ember"};
  for (std::size_t i = 0; i < 5; ++i) {
    DomainSpec d;
    d.name = names[i];
    d.seed = 101 + i;
    b.domains.push_back(d);
  }
  return b;
}

Benchmark build_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Benchmark bench;
  bench.world = make_world(spec.arch.d_img, spec.arch.d_txt, mix_seed(seed, 0), spec.style_dims);

  std::vector<DomainSpec> domains;
  if (spec.class_split) {
    ClassSplit split = *spec.class_split;
    split.domain.seed = mix_seed(seed, split.domain.seed);
    bench.tasks = gen_class_incremental(split, bench.world);
    domains.push_back(split.domain);
  } else {
    for (DomainSpec d : spec.domains) {
      d.seed = mix_seed(seed, d.seed);
      bench.tasks.push_back(gen_domain(d, bench.world));
      domains.push_back(d);
    }
  }

  // Pretraining concepts: fresh draws from each domain plus generic sphere concepts.
  {
    auto rng = stream(seed, kCorpusStream);
    std::vector<Vec> protos;
    const World& w = bench.world;
    for (const auto& d : domains) {
      const Vec center = domain_center(d, w.content_dims());
      for (std::size_t i = 0; i < spec.corpus.concepts_per_domain; ++i) {
        protos.push_back(w.embed_content(draw_prototype(d, center, rng)));
      }
    }
    for (std::size_t i = 0; i < spec.corpus.generic_concepts; ++i) {
      protos.push_back(w.embed_content(unit_gaussian(w.content_dims(), rng)));
    }
    if (protos.size() < spec.pretrain.batch_size) throw ConfigError("corpus", "fewer concepts than pretraining batch");
    bench.corpus.prototypes = Mat::from_rows(protos);
    bench.corpus.prototype_scale = domains.front().prototype_scale;
    bench.corpus.sigma_img = spec.corpus.sigma_img;
    bench.corpus.sigma_txt = spec.corpus.sigma_txt;
  }

  // Reference pools: images and texts come from independent concept draws.
  {
    auto rng = stream(seed, kReferenceStream);
    std::bernoulli_distribution from_domain(spec.reference.domain_fraction);
    std::uniform_int_distribution<std::size_t> pick_domain(0, domains.size() - 1);
    std::vector<Vec> centers;
    const World& w = bench.world;
    for (const auto& d : domains) centers.push_back(domain_center(d, w.content_dims()));
    auto draw_concept = [&]() {
      if (from_domain(rng)) {
        const std::size_t k = pick_domain(rng);
        return w.embed_content(draw_prototype(domains[k], centers[k], rng));
      }
      return w.embed_content(unit_gaussian(w.content_dims(), rng));
    };
    std::vector<Vec> imgs, txts, rnd;
    for (std::size_t i = 0; i < spec.reference.images; ++i) {
      imgs.push_back(noisy_image(draw_concept(), domains.front().prototype_scale, spec.reference.sigma_img, rng));
    }
    for (std::size_t i = 0; i < spec.reference.texts; ++i) {
      txts.push_back(noisy_text(bench.world, draw_concept(), spec.reference.sigma_txt, rng));
    }
    for (std::size_t i = 0; i < spec.reference.random_texts; ++i) {
      rnd.push_back(gaussian_vec(spec.arch.d_txt, 1.0 / std::sqrt(static_cast<double>(spec.arch.d_txt)), rng));
    }
    bench.reference = ReferenceSet{Mat::from_rows(imgs), Mat::from_rows(txts), Mat::from_rows(rnd)};
  }
  return bench;
}

// ---------------------------------------------------------------- pretraining

TwoTowerModel pretrain_toy(TwoTowerModel model, const Benchmark& bench, const PretrainConfig& config,
                           std::uint64_t seed) {
  if (bench.tasks.empty()) throw PreconditionError("pretrain_toy: benchmark has no tasks");
  auto rng = stream(seed, kPretrainStream);
  const Mat& protos = bench.corpus.prototypes;
  const std::size_t batch_n = std::min(config.batch_size, protos.rows());
  OptState opt = make_opt_state(model.params().size(), AdamWConfig{config.lr});

  Batch batch;
  batch.labels.resize(batch_n);
  for (std::size_t i = 0; i < batch_n; ++i) batch.labels[i] = i;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto idx = sample_without_replacement(protos.rows(), batch_n, rng);
    std::vector<Vec> imgs, txts;
    for (std::size_t k : idx) {
      imgs.push_back(noisy_image(protos.row(k), bench.corpus.prototype_scale, bench.corpus.sigma_img, rng));
      txts.push_back(noisy_text(bench.world, protos.row(k), bench.corpus.sigma_txt, rng));
    }
    batch.images = Mat::from_rows(imgs);
    batch.class_texts = Mat::from_rows(txts);
    const GradResult g = ce_loss(model, batch, 0.0);
    optimizer_step(opt, model.mutable_values(), g.grad);
  }

  std::ostringstream diag;
  bool ok = true;
  for (const auto& task : bench.tasks) {
    const double acc = evaluate(model, task, EvalMode::kTaskIncremental, bench.tasks);
    const double need = config.min_accuracy_factor / static_cast<double>(task.num_classes());
    diag << ' ' << task.name << '=' << acc << "(need>" << need << ')';
    if (!(acc > need)) ok = false;
  }
  if (!ok) throw PretrainingFailedError("pretrain_toy: zero-shot accuracy too low:" + diag.str());
  return model;
}

// ---------------------------------------------------------------- evaluation

double evaluate(const TwoTowerModel& model, const TaskData& task, EvalMode mode, std::span<const TaskData> all_tasks) {
  if (task.test_images.rows() == 0) throw DegenerateInputError("evaluate: task has no test samples");
  if (task.num_classes() == 0) throw DegenerateInputError("evaluate: task has no classes");

  // Candidate texts and the union index of this task's class 0.
  Mat candidates;
  std::size_t own_base = 0;
  if (mode == EvalMode::kTaskIncremental) {
    candidates = model.encode_rows(Tower::kText, task.class_texts);
  } else {
    // Union keyed by (task, class): MTIL domains all start at offset 0 yet stay distinct.
    bool found = false;
    std::size_t base = 0;
    for (const auto& t : all_tasks) {
      if (!found && (&t == &task || (t.name == task.name && t.class_offset == task.class_offset))) {
        own_base = base;
        found = true;
      }
      candidates = Mat::vstack(candidates, model.encode_rows(Tower::kText, t.class_texts));
      base += t.num_classes();
    }
    if (!found) throw PreconditionError("evaluate: task is not part of the benchmark task list");
  }

  std::size_t correct = 0;
  Vec scores(candidates.rows());
  for (std::size_t i = 0; i < task.test_images.rows(); ++i) {
    const Vec e = model.encode_image(task.test_images.row(i));
    for (std::size_t j = 0; j < candidates.rows(); ++j) scores[j] = dot(e, candidates.row(j));
    if (argmax_lowest(scores) == own_base + task.test_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.test_images.rows());
}

void AccuracyMatrix::validate() const {
  if (acc.rows() != names.size() || acc.cols() != names.size()) throw DimensionError("AccuracyMatrix: not square");
  for (double v : acc.data())
    if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("AccuracyMatrix: entry outside [0, 1]");
}

AccuracyMatrix build_matrix(std::span<const TwoTowerModel> snapshots, std::span<const TaskData> tasks, EvalMode mode) {
  if (snapshots.size() != tasks.size()) throw DimensionError("build_matrix: snapshot count != task count");
  AccuracyMatrix a;
  for (const auto& t : tasks) a.names.push_back(t.name);
  a.acc = Mat(tasks.size(), tasks.size());
  for (std::size_t t = 0; t < snapshots.size(); ++t)
    for (std::size_t j = 0; j < tasks.size(); ++j) a.acc(t, j) = evaluate(snapshots[t], tasks[j], mode, tasks);
  return a;
}

MetricReport compute_metrics(const AccuracyMatrix& a) {
  const std::size_t n = a.size();
  if (n == 0 || a.acc.rows() != n || a.acc.cols() != n) throw DimensionError("compute_metrics: need a non-empty square matrix");
  MetricReport r;
  r.names = a.names;
  r.transfer_j.assign(n, std::nullopt);
  r.avg_j.assign(n, 0.0);
  r.last_j.assign(n, 0.0);
  double transfer_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t t = 0; t < n; ++t) col += a.acc(t, j);
    r.avg_j[j] = col / static_cast<double>(n);
    r.last_j[j] = a.acc(n - 1, j);
    if (j >= 1) {
      double above = 0.0;
      for (std::size_t t = 0; t < j; ++t) above += a.acc(t, j);
      r.transfer_j[j] = above / static_cast<double>(j);
      transfer_sum += *r.transfer_j[j];
    }
  }
  if (n > 1) r.transfer = transfer_sum / static_cast<double>(n - 1);
  double avg = 0.0, last = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    avg += r.avg_j[j];
    last += r.last_j[j];
  }
  r.avg = avg / static_cast<double>(n);
  r.last = last / static_cast<double>(n);
  return r;
}

std::string matrix_csv(const AccuracyMatrix& a) {
  std::string out;
  for (std::size_t j = 0; j < a.names.size(); ++j) {
    if (j) out += ',';
    out += a.names[j];
  }
  out += '\n';
  char buf[32];
  for (std::size_t t = 0; t < a.acc.rows(); ++t) {
    for (std::size_t j = 0; j < a.acc.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", a.acc(t, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

AccuracyMatrix parse_matrix_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  AccuracyMatrix a;
  if (!std::getline(is, line)) throw IoError("parse_matrix_csv: empty input");
  {
    std::istringstream hs(line);
    std::string name;
    while (std::getline(hs, name, ',')) a.names.push_back(name);
  }
  std::vector<Vec> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Vec row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw IoError("parse_matrix_csv: bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() != a.names.size()) throw IoError("parse_matrix_csv: row count does not match header");
  try {
    a.acc = Mat::from_rows(rows);
  } catch (const DimensionError&) {
    throw IoError("parse_matrix_csv: ragged rows");
  }
  a.validate();
  return a;
}

}  // namespace zscl
