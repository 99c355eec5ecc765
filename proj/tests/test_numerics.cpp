#include <doctest.h>

#include <cmath>
#include <random>

#include "zscl/error.hpp"
#include "zscl/numerics.hpp"

using namespace zscl;

TEST_SUITE("numerics") {
  TEST_CASE("softmax closed forms") {
    const Vec zero{0.0, 0.0};
    auto p = softmax(zero);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

    const Vec l3{std::log(3.0), 0.0};
    p = softmax(l3);
    CHECK(std::abs(p[0] - 0.75) < 1e-12);
    CHECK(std::abs(p[1] - 0.25) < 1e-12);
  }

  TEST_CASE("softmax survives huge logits") {
    const Vec big{1000.0, 999.0};
    const auto p = softmax(big);
    // Shifted by hand: [0, -1].
    const double e = std::exp(-1.0);
    CHECK(std::isfinite(p[0]));
    CHECK(std::abs(p[0] - 1.0 / (1.0 + e)) < 1e-12);
    CHECK(std::abs(p[1] - e / (1.0 + e)) < 1e-12);
  }

  TEST_CASE("softmax sums to one and ignores shifts") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    std::uniform_int_distribution<std::size_t> dim(1, 64);
    for (int trial = 0; trial < 200; ++trial) {
      Vec l(dim(rng));
      for (double& v : l) v = u(rng);
      const auto p = softmax(l);
      double s = 0.0;
      for (double v : p.probs) s += v;
      CHECK(std::abs(s - 1.0) < 1e-9);

      const double c = u(rng);
      Vec shifted = l;
      for (double& v : shifted) v += c;
      const auto q = softmax(shifted);
      for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
  }

  TEST_CASE("cosine similarity") {
    const Vec a{1.0, 2.0, 3.0}, e1{1.0, 0.0}, e2{0.0, 1.0};
    CHECK(cosine_sim(a, a) == doctest::Approx(1.0));
    CHECK(cosine_sim(e1, e2) == 0.0);
    const Vec neg{-1.0, -2.0, -3.0};
    CHECK(cosine_sim(a, neg) == doctest::Approx(-1.0));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> pos(0.01, 100.0);
    for (int t = 0; t < 100; ++t) {
      Vec x(7), y(7);
      for (double& v : x) v = n(rng);
      for (double& v : y) v = n(rng);
      const double al = pos(rng), be = pos(rng);
      Vec xs = x, ys = y;
      for (double& v : xs) v *= al;
      for (double& v : ys) v *= be;
      CHECK(std::abs(cosine_sim(xs, ys) - cosine_sim(x, y)) < 1e-12);
    }
    const Vec z{0.0, 0.0};
    CHECK_THROWS_AS(cosine_sim(z, e1), DegenerateInputError);
  }

  TEST_CASE("cross entropy") {
    const auto one_hot = Distribution::checked({1.0, 0.0});
    CHECK(cross_entropy(one_hot, one_hot) == 0.0);
    const auto t = Distribution::checked({0.75, 0.25});
    const auto u = Distribution::checked({0.5, 0.5});
    // -0.75 ln 0.5 - 0.25 ln 0.5
    CHECK(std::abs(cross_entropy(t, u) - 0.6931471805599453) < 1e-12);
    CHECK(std::abs(cross_entropy(u, u) - std::log(2.0)) < 1e-12);
    // Floor keeps log(0) finite.
    CHECK(std::abs(cross_entropy(t, one_hot) - (-0.25 * std::log(kProbFloor))) < 1e-9);
  }

  TEST_CASE("Gibbs inequality on random pairs") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      Vec a(5), b(5);
      double sa = 0, sb = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        a[i] = u(rng) + 1e-3;
        b[i] = u(rng) + 1e-3;
        sa += a[i];
        sb += b[i];
      }
      for (std::size_t i = 0; i < 5; ++i) {
        a[i] /= sa;
        b[i] /= sb;
      }
      const auto t = Distribution::checked(a), q = Distribution::checked(b);
      CHECK(cross_entropy(t, q) >= cross_entropy(t, t) - 1e-12);
    }
  }

  TEST_CASE("Distribution::checked rejects non-simplex input") {
    CHECK_THROWS_AS(Distribution::checked({0.5, 0.6}), PreconditionError);
    CHECK_THROWS_AS(Distribution::checked({1.5, -0.5}), PreconditionError);
  }

  TEST_CASE("finite differences") {
    const Vec x{3.0};
    auto g = finite_diff_grad([](const Vec& v) { return v[0] * v[0]; }, x, 1e-4);
    CHECK(std::abs(g[0] - 6.0) < 1e-6);

    const Vec y{1.0, -2.0, 0.5};
    g = finite_diff_grad([](const Vec&) { return 4.0; }, y, 1e-5);
    for (double v : g) CHECK(v == 0.0);

    g = finite_diff_grad([](const Vec& v) { return v[0] + v[1] + v[2]; }, y, 1e-5);
    for (double v : g) CHECK(std::abs(v - 1.0) < 1e-8);

    CHECK_THROWS_AS(finite_diff_grad([](const Vec&) { return NAN; }, y, 1e-5), NonFiniteError);
  }

  TEST_CASE("normalization and error helpers") {
    const Vec v{3.0, 4.0};
    const Vec n = l2_normalize(v);
    CHECK(std::abs(n[0] - 0.6) < 1e-15);
    CHECK(std::abs(n[1] - 0.8) < 1e-15);
    const Vec z{0.0, 0.0};
    CHECK_THROWS_AS(l2_normalize(z), DegenerateInputError);

    const Vec a{1.0, 10.0}, b{1.0, 9.0};
    CHECK(max_relative_error(a, b) == doctest::Approx(0.1));
    CHECK(linf_norm(a) == 10.0);
  }

  TEST_CASE("matrix helpers") {
    const Mat a{{1, 2}, {3, 4}};
    const Mat b{{1, 0}, {0, 1}, {1, 1}};
    const Mat p = matmul_transposed(a, b);
    CHECK(p.rows() == 2);
    CHECK(p.cols() == 3);
    CHECK(p(1, 2) == 7.0);
    CHECK(a.transposed()(0, 1) == 3.0);
    const std::size_t idx[] = {1, 0};
    CHECK(a.gather_rows(idx)(0, 0) == 3.0);
    CHECK(Mat::vstack(a, a).rows() == 4);
    CHECK_THROWS_AS(Mat::vstack(a, b.transposed()), DimensionError);
  }
}
