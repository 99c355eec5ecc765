#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "zscl/benchmark.hpp"
#include "zscl/error.hpp"

using namespace zscl;
using namespace zscl::test;

namespace {

DomainSpec quiet_domain(std::uint64_t seed, std::size_t classes = 6) {
  DomainSpec d;
  d.name = "quiet" + std::to_string(seed);
  d.classes = classes;
  d.train_per_class = 4;
  d.test_per_class = 4;
  d.sigma_img = 0.0;
  d.sigma_txt = 0.0;
  d.nuisance_rank = 0;
  d.nuisance_sigma = 0.0;
  d.seed = seed;
  return d;
}

BenchmarkSpec small_spec() {
  BenchmarkSpec s;
  s.arch.d_img = 8;
  s.arch.d_txt = 6;
  s.arch.d_emb = 4;
  s.arch.image_hidden = {6};
  s.arch.text_hidden = {6};
  s.style_dims = 2;
  for (int i = 0; i < 2; ++i) {
    DomainSpec d;
    d.name = i ? "B" : "A";
    d.classes = 4;
    d.train_per_class = 5;
    d.test_per_class = 5;
    d.nuisance_rank = 2;
    d.seed = 7 + i;
    s.domains.push_back(d);
  }
  s.corpus.concepts_per_domain = 20;
  s.corpus.generic_concepts = 40;
  s.reference.images = s.reference.texts = s.reference.random_texts = 16;
  s.pretrain.iterations = 15;
  s.pretrain.batch_size = 16;
  s.pretrain.min_accuracy_factor = 0.0;
  return s;
}

/// Linear model whose image layer is the world projection and whose text layer is the identity.
TwoTowerModel oracle_model(const World& w) {
  auto m = linear_model(w.d_img, w.d_txt, w.d_txt, std::log(10.0));
  ParamVector p = m.params();
  auto seg = p.segment(layer_weight_name(Tower::kImage, 0));
  std::copy(w.projection.data().begin(), w.projection.data().end(), seg.begin());
  m.set_params(p);
  set_identity(m, Tower::kText);
  return m;
}

AccuracyMatrix percent_matrix(std::vector<Vec> rows) {
  AccuracyMatrix a;
  for (auto& r : rows)
    for (double& v : r) v /= 100.0;
  a.acc = Mat::from_rows(rows);
  for (std::size_t j = 0; j < rows.size(); ++j) a.names.push_back("t" + std::to_string(j));
  return a;
}

}  // namespace

TEST_SUITE("benchmark") {
  TEST_CASE("noiseless domains are perfectly separable by nearest neighbour") {
    const World w = make_world(12, 6, 3, 4);
    const TaskData t = gen_domain(quiet_domain(5, 10), w);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < t.test_images.rows(); ++i) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t k = 0; k < t.train_images.rows(); ++k) {
        double d = 0.0;
        for (std::size_t c = 0; c < w.d_img; ++c) {
          const double diff = t.test_images(i, c) - t.train_images(k, c);
          d += diff * diff;
        }
        if (d < best_d) best_d = d, best = k;
      }
      correct += t.train_labels[best] == t.test_labels[i];
    }
    CHECK(correct == t.test_images.rows());
  }

  TEST_CASE("concepts stay in the content coordinates") {
    const World w = make_world(12, 6, 3, 4);
    const TaskData t = gen_domain(quiet_domain(6), w);
    for (std::size_t i = 0; i < t.train_images.rows(); ++i)
      for (std::size_t c = w.content_dims(); c < w.d_img; ++c) CHECK(t.train_images(i, c) == 0.0);
    const Mat u = nuisance_directions(default_benchmark().domains[0], 12, 4);
    for (std::size_t k = 0; k < u.rows(); ++k) {
      CHECK(std::abs(norm2(u.row(k)) - 1.0) < 1e-12);
      for (std::size_t c = 0; c < w.content_dims(); ++c) CHECK(u(k, c) == 0.0);
    }
  }

  TEST_CASE("generation is reproducible and shaped as specified") {
    const World w = make_world(32, 16, 1, 8);
    DomainSpec d = default_benchmark().domains[0];
    const TaskData a = gen_domain(d, w), b = gen_domain(d, w);
    CHECK(a.train_images == b.train_images);
    CHECK(a.test_images == b.test_images);
    CHECK(a.class_texts == b.class_texts);
    CHECK(a.train_images.rows() == 20 * 50);
    CHECK(a.train_images.cols() == 32);
    CHECK(a.test_images.rows() == 20 * 50);
    CHECK(a.class_texts.rows() == 20);
    CHECK(a.class_texts.cols() == 16);
    CHECK(a.train_labels.size() == 1000);
    d.seed += 1;
    CHECK_FALSE(gen_domain(d, w).train_images == a.train_images);

    const auto b1 = build_benchmark(default_benchmark(), 3), b2 = build_benchmark(default_benchmark(), 3);
    REQUIRE(b1.tasks.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(b1.tasks[i].test_images == b2.tasks[i].test_images);
    CHECK(b1.reference.images == b2.reference.images);
    CHECK(b1.corpus.prototypes == b2.corpus.prototypes);
    CHECK(task_names(default_benchmark()) == std::vector<std::string>{"Aurora", "Basalt", "Coral", "Dune", "Ember"});
  }

  TEST_CASE("class split slices the full domain") {
    const World w = make_world(16, 8, 2, 4);
    DomainSpec d = quiet_domain(9, 10);
    d.sigma_img = 0.4;
    d.nuisance_rank = 2;
    d.nuisance_sigma = 1.0;
    const TaskData full = gen_domain(d, w);
    const auto steps = gen_class_incremental(ClassSplit{d, {4, 3, 3}}, w);
    REQUIRE(steps.size() == 3);
    CHECK(steps[1].name == d.name + "-step2");
    std::size_t row = 0, offset = 0;
    for (const auto& s : steps) {
      CHECK(s.class_offset == offset);
      for (std::size_t c = 0; c < s.num_classes(); ++c) {
        CHECK(s.class_texts.row_copy(c) == full.class_texts.row_copy(offset + c));
      }
      for (std::size_t i = 0; i < s.train_images.rows(); ++i, ++row) {
        CHECK(s.train_images.row_copy(i) == full.train_images.row_copy(row));
        CHECK(s.train_labels[i] + offset == full.train_labels[row]);
      }
      offset += s.num_classes();
    }
    CHECK_THROWS_AS(gen_class_incremental(ClassSplit{d, {4, 3}}, w), ConfigError);
    CHECK_THROWS_AS(gen_class_incremental(ClassSplit{d, {10, 0}}, w), ConfigError);
  }

  TEST_CASE("spec validation") {
    DomainSpec d = quiet_domain(1);
    d.classes = 1;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    BenchmarkSpec s = default_benchmark();
    s.domains[1].name = s.domains[0].name;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = default_benchmark();
    s.style_dims = s.arch.d_img;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = default_benchmark();
    s.domains.clear();
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("pretraining is deterministic for a seed") {
    const BenchmarkSpec s = small_spec();
    const Benchmark b = build_benchmark(s, 4);
    std::mt19937_64 r(1);
    const auto init = TwoTowerModel::init(s.arch, r);
    const auto p1 = pretrain_toy(init, b, s.pretrain, 11), p2 = pretrain_toy(init, b, s.pretrain, 11);
    CHECK(p1.params() == p2.params());
    CHECK_FALSE(p1.params() == init.params());
    CHECK_FALSE(pretrain_toy(init, b, s.pretrain, 12).params() == p1.params());

    PretrainConfig strict = s.pretrain;
    strict.iterations = 0;
    strict.min_accuracy_factor = 4.0;  // requires 100% on 4 classes: unreachable
    CHECK_THROWS_AS(pretrain_toy(init, b, strict, 11), PretrainingFailedError);
  }

  TEST_CASE("a random model sits at chance") {
    const Benchmark b = build_benchmark(default_benchmark(), 1);
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      std::mt19937_64 r(seed + 100);
      const auto m = TwoTowerModel::init(default_benchmark().arch, r);
      for (const auto& t : b.tasks) {
        total += evaluate(m, t, EvalMode::kTaskIncremental, b.tasks) * static_cast<double>(t.test_images.rows());
        n += t.test_images.rows();
      }
    }
    // 20 000 predictions at p = 1/20: 4σ ≈ 0.0062. Errors are correlated within a
    // model, so allow a wider band.
    const double acc = total / static_cast<double>(n);
    CHECK(acc > 0.05 - 0.03);
    CHECK(acc < 0.05 + 0.03);
  }

  TEST_CASE("evaluation with a perfect projection model") {
    const World w = make_world(12, 6, 8, 4);
    std::vector<TaskData> tasks{gen_domain(quiet_domain(1), w), gen_domain(quiet_domain(2), w)};
    const auto m = oracle_model(w);
    for (const auto& t : tasks) {
      CHECK(evaluate(m, t, EvalMode::kTaskIncremental, tasks) == 1.0);
      CHECK(evaluate(m, t, EvalMode::kClassIncremental, tasks) == 1.0);
    }
    const std::vector<TaskData> solo{tasks[0]};
    std::mt19937_64 r(3);
    const auto rnd = TwoTowerModel::init(m.arch(), r);
    CHECK(evaluate(rnd, solo[0], EvalMode::kTaskIncremental, solo) ==
          evaluate(rnd, solo[0], EvalMode::kClassIncremental, solo));
    const TaskData stranger = gen_domain(quiet_domain(3), w);
    CHECK_THROWS_AS(evaluate(m, stranger, EvalMode::kClassIncremental, tasks), PreconditionError);
  }

  TEST_CASE("task-incremental accuracy dominates class-incremental") {
    const Benchmark b = build_benchmark(default_benchmark(), 2);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::mt19937_64 r(seed);
      const auto m = TwoTowerModel::init(default_benchmark().arch, r);
      for (const auto& t : b.tasks) {
        CHECK(evaluate(m, t, EvalMode::kTaskIncremental, b.tasks) >=
              evaluate(m, t, EvalMode::kClassIncremental, b.tasks));
      }
    }
  }

  TEST_CASE("accuracy matrix") {
    const World w = make_world(12, 6, 8, 4);
    std::vector<TaskData> tasks{gen_domain(quiet_domain(1), w)};
    const auto good = oracle_model(w);
    std::vector<TwoTowerModel> snaps{good};
    const auto one = build_matrix(snaps, tasks, EvalMode::kTaskIncremental);
    CHECK(one.size() == 1);
    CHECK(one.acc(0, 0) == 1.0);

    tasks.push_back(gen_domain(quiet_domain(2), w));
    tasks.push_back(gen_domain(quiet_domain(3), w));
    std::mt19937_64 r(5);
    const auto rnd = TwoTowerModel::init(good.arch(), r);
    snaps = {rnd, rnd, rnd};
    const auto same = build_matrix(snaps, tasks, EvalMode::kClassIncremental);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(same.acc(0, j) == same.acc(1, j));
      CHECK(same.acc(1, j) == same.acc(2, j));
    }
    snaps = {rnd, good, rnd};
    const auto mixed = build_matrix(snaps, tasks, EvalMode::kTaskIncremental);
    CHECK(mixed.acc(1, 2) == evaluate(good, tasks[2], EvalMode::kTaskIncremental, tasks));
    CHECK(mixed.acc(2, 0) == evaluate(rnd, tasks[0], EvalMode::kTaskIncremental, tasks));
    CHECK(mixed.names == std::vector<std::string>{tasks[0].name, tasks[1].name, tasks[2].name});
    snaps.pop_back();
    CHECK_THROWS_AS(build_matrix(snaps, tasks, EvalMode::kTaskIncremental), DimensionError);
  }

  TEST_CASE("metrics on a hand matrix") {
    const auto r = compute_metrics(percent_matrix({{80, 50, 40}, {70, 90, 45}, {65, 85, 95}}));
    REQUIRE(r.transfer.has_value());
    CHECK(std::abs(*r.transfer - 0.4625) < 1e-6);
    CHECK(std::abs(r.avg - 0.688889) < 1e-6);
    CHECK(std::abs(r.last - 0.816667) < 1e-6);
    CHECK_FALSE(r.transfer_j[0].has_value());
    CHECK(std::abs(*r.transfer_j[2] - 0.425) < 1e-12);
    CHECK(std::abs(r.avg_j[0] - 215.0 / 300.0) < 1e-12);
    CHECK(r.last_j == Vec{0.65, 0.85, 0.95});
  }

  TEST_CASE("metrics on degenerate matrices") {
    const auto c = compute_metrics(percent_matrix({{40, 40, 40, 40}, {40, 40, 40, 40}, {40, 40, 40, 40}, {40, 40, 40, 40}}));
    CHECK(std::abs(*c.transfer - 0.4) < 1e-15);
    CHECK(std::abs(c.avg - 0.4) < 1e-15);
    CHECK(std::abs(c.last - 0.4) < 1e-15);
    const auto one = compute_metrics(percent_matrix({{73}}));
    CHECK_FALSE(one.transfer.has_value());
    CHECK(one.avg == 0.73);
    CHECK(one.last == 0.73);
    CHECK_THROWS_AS(compute_metrics(AccuracyMatrix{}), DimensionError);
  }

  TEST_CASE("metrics stay within the matrix range") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + trial % 7;
      AccuracyMatrix a;
      a.acc = Mat(n, n);
      for (double& v : a.acc.data()) v = u(rng);
      for (std::size_t j = 0; j < n; ++j) a.names.push_back(std::to_string(j));
      const auto r = compute_metrics(a);
      double lo = 1.0, hi = 0.0;
      for (double v : a.acc.data()) lo = std::min(lo, v), hi = std::max(hi, v);
      for (double m : {*r.transfer, r.avg, r.last}) {
        CHECK(m >= lo);
        CHECK(m <= hi);
      }
    }
  }

  TEST_CASE("published 11-task accuracy table reproduces its summary metrics") {
    // Rows: after each training step; columns: datasets in training order.
    const auto r = compute_metrics(percent_matrix({
        {55.1, 86.0, 66.3, 44.9, 49.2, 70.6, 88.3, 53.6, 87.4, 61.3, 65.7},
        {48.9, 94.2, 68.6, 44.7, 50.4, 67.0, 87.6, 55.2, 85.0, 61.0, 65.9},
        {47.1, 93.1, 86.2, 46.5, 50.1, 68.8, 87.7, 63.4, 87.6, 60.6, 67.4},
        {47.0, 93.8, 85.0, 76.2, 51.7, 69.9, 87.8, 65.9, 88.4, 61.2, 67.2},
        {46.1, 92.8, 84.0, 75.0, 97.8, 69.1, 87.1, 67.6, 88.0, 60.3, 67.1},
        {43.8, 92.5, 83.2, 73.5, 97.2, 96.3, 87.1, 63.3, 86.5, 58.8, 66.9},
        {44.3, 92.2, 82.9, 71.2, 96.8, 93.8, 92.2, 63.5, 87.3, 60.3, 67.9},
        {41.9, 91.9, 80.5, 67.8, 95.3, 89.5, 91.9, 99.0, 84.4, 58.4, 66.5},
        {41.6, 91.8, 81.3, 68.2, 95.7, 90.7, 92.0, 98.8, 95.3, 58.9, 66.4},
        {39.8, 91.9, 81.8, 68.9, 95.7, 91.6, 91.8, 98.8, 94.5, 85.8, 67.3},
        {40.6, 92.2, 81.3, 70.5, 94.8, 90.5, 91.9, 98.7, 93.9, 85.3, 80.2},
    }));
    CHECK(std::abs(*r.transfer * 100.0 - 68.1) <= 0.1);
    CHECK(std::abs(r.avg * 100.0 - 75.4) <= 0.1);
    CHECK(std::abs(r.last * 100.0 - 83.6) <= 0.1);
    CHECK(std::abs(*r.transfer_j[2] * 100.0 - 67.45) < 1e-9);
    CHECK(std::abs(r.avg_j[0] * 100.0 - 45.1) <= 0.05);
  }

  TEST_CASE("matrix CSV round trip") {
    const auto a = percent_matrix({{80, 50.5}, {12.25, 99}});
    const std::string csv = matrix_csv(a);
    CHECK(csv == "t0,t1\n0.800000,0.505000\n0.122500,0.990000\n");
    const auto b = parse_matrix_csv(csv);
    CHECK(b.names == a.names);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(b.acc.data()[i] - a.acc.data()[i]) < 1e-12);
    CHECK_THROWS_AS(parse_matrix_csv(""), IoError);
    CHECK_THROWS_AS(parse_matrix_csv("a,b\n0.1,x\n0.2,0.3\n"), IoError);
    CHECK_THROWS_AS(parse_matrix_csv("a,b\n0.1,0.2\n"), IoError);
    CHECK_THROWS_AS(parse_matrix_csv("a,b\n0.1,0.2\n0.3,1.5\n"), PreconditionError);
  }
}
