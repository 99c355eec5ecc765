#include <doctest.h>

#include <random>

#include "zscl/error.hpp"
#include "zscl/weightspace.hpp"

using namespace zscl;

namespace {

const ParamLayout& tiny() {
  static const ParamLayout l({{"w", 0, 1}, {kLogTemperature, 1, 1}});
  return l;
}

ParamVector pv(double w) { return ParamVector(tiny(), Vec{w, 0.0}); }

ParamVector random_pv(const ParamLayout& l, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 3.0);
  ParamVector p(l);
  for (double& v : p.values()) v = n(rng);
  return p;
}

}  // namespace

TEST_SUITE("weightspace") {
  TEST_CASE("WiSE interpolation") {
    const ParamLayout l({{"w", 0, 2}, {kLogTemperature, 2, 1}});
    const ParamVector a(l, Vec{1.0, 0.0, 0.0}), b(l, Vec{0.0, 1.0, 0.0});
    CHECK(wise_interpolate(a, b, 0.0) == a);
    CHECK(wise_interpolate(a, b, 1.0) == b);
    const auto q = wise_interpolate(a, b, 0.25);
    CHECK(q.values() == Vec{0.75, 0.25, 0.0});
    CHECK_THROWS_AS(wise_interpolate(a, b, 1.5), PreconditionError);
    CHECK_THROWS_AS(wise_interpolate(a, pv(1.0), 0.5), LayoutMismatchError);
  }

  TEST_CASE("WiSE endpoints are exact and the map is linear") {
    std::mt19937_64 rng(21);
    const ParamLayout l({{"w", 0, 50}, {kLogTemperature, 50, 1}});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      const auto a = random_pv(l, rng), b = random_pv(l, rng);
      CHECK(wise_interpolate(a, b, 0.0) == a);
      CHECK(wise_interpolate(a, b, 1.0) == b);
      const double al = u(rng);
      const auto x = wise_interpolate(a, b, al), y = wise_interpolate(a, b, 1.0 - al);
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(x.values()[i] + y.values()[i] - a.values()[i] - b.values()[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("ensemble init") {
    const auto s = we_init(pv(3.0));
    CHECK(s.average == pv(3.0));
    CHECK(s.count == 0);
    CHECK(we_init(pv(3.0)).average == s.average);
  }

  TEST_CASE("ensemble recurrence by hand") {
    auto s = we_init(pv(0.0));
    s = we_update(s, pv(2.0));
    CHECK(s.average.values()[0] == 1.0);
    CHECK(s.count == 1);
    s = we_update(s, pv(4.0));
    CHECK(std::abs(s.average.values()[0] - 2.0) < 1e-15);

    auto fixed = we_init(pv(1.5));
    for (int i = 0; i < 10; ++i) {
      fixed = we_update(fixed, pv(1.5));
      CHECK(fixed.average == pv(1.5));
    }
    CHECK_THROWS_AS(we_update(s, ParamVector(ParamLayout({{kLogTemperature, 0, 1}}))), LayoutMismatchError);
  }

  TEST_CASE("ensemble equals the running mean for k up to 1000") {
    std::mt19937_64 rng(22);
    const ParamLayout l({{"w", 0, 40}, {kLogTemperature, 40, 1}});
    for (std::size_t k : {1u, 7u, 100u, 1000u}) {
      const auto first = random_pv(l, rng);
      Vec sum = first.values();
      auto s = we_init(first);
      for (std::size_t t = 0; t < k; ++t) {
        const auto p = random_pv(l, rng);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.values()[i];
        if (t % 2) {
          s = we_update(s, p);
        } else {
          we_update_in_place(s, p);
        }
        CHECK(s.average.layout() == l);
      }
      double err = 0.0;
      for (std::size_t i = 0; i < sum.size(); ++i) {
        err = std::max(err, std::abs(s.average.values()[i] - sum[i] / static_cast<double>(k + 1)));
      }
      CHECK_MESSAGE(err <= 1e-12, "k=" << k << " err=" << err);
      CHECK(s.count == k);
    }
  }

  TEST_CASE("sampling schedule") {
    CHECK(we_should_sample(100, 100));
    CHECK_FALSE(we_should_sample(99, 100));
    CHECK(we_should_sample(200, 100));
    for (std::size_t it = 1; it < 20; ++it) CHECK(we_should_sample(it, 1));
    CHECK_THROWS_AS(we_should_sample(5, 0), PreconditionError);
  }
}
