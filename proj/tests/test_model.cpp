#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "zscl/error.hpp"
#include "zscl/model.hpp"

using namespace zscl;
using namespace zscl::test;

TEST_SUITE("model") {
  TEST_CASE("layout of the default architecture") {
    const Arch a;
    const ParamLayout l = a.layout();
    // image: 32→32→16, text: 16→32→16, plus log_temperature.
    const std::size_t expect = (32 * 32 + 32) + (32 * 16 + 16) + (16 * 32 + 32) + (32 * 16 + 16) + 1;
    CHECK(l.total() == expect);
    CHECK(l.segments().back().name == kLogTemperature);
    CHECK(l.find("image.l0.weight").length == 32 * 32);
    CHECK(l.find("text.l1.bias").length == 16);
  }

  TEST_CASE("layout validation") {
    CHECK_THROWS_AS(ParamLayout({{"a", 0, 2}, {"b", 3, 1}, {kLogTemperature, 4, 1}}), PreconditionError);
    CHECK_THROWS_AS(ParamLayout({{"a", 0, 2}}), PreconditionError);
    CHECK_THROWS_AS(ParamLayout({{kLogTemperature, 0, 1}, {kLogTemperature, 1, 1}}), PreconditionError);
    CHECK_THROWS_AS(ParamLayout({{kLogTemperature, 0, 2}}), PreconditionError);
    const ParamLayout ok({{"w", 0, 2}, {kLogTemperature, 2, 1}});
    CHECK(ok.total() == 3);
    CHECK_THROWS_AS(ParamVector(ok, Vec{1.0, NAN, 0.0}), NonFiniteError);
    CHECK_THROWS_AS(ParamVector(ok, Vec{1.0}), DimensionError);
  }

  TEST_CASE("initialization bounds and temperature") {
    std::mt19937_64 rng(1);
    const Arch a;
    const auto m = TwoTowerModel::init(a, rng);
    CHECK(std::abs(m.temperature() - 1.0 / 0.07) < 1e-9);
    for (const auto& seg : m.params().layout().segments()) {
      if (seg.name == kLogTemperature) continue;
      // fan_in is the layer input width
      const auto w = m.params().segment(seg.name);
      std::size_t fan_in = 0;
      if (seg.name.rfind("image.l0", 0) == 0) fan_in = 32;
      if (seg.name.rfind("image.l1", 0) == 0) fan_in = 32;
      if (seg.name.rfind("text.l0", 0) == 0) fan_in = 16;
      if (seg.name.rfind("text.l1", 0) == 0) fan_in = 32;
      REQUIRE(fan_in > 0);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double v : w) CHECK(std::abs(v) <= bound);
    }
    std::mt19937_64 rng2(1);
    CHECK(TwoTowerModel::init(a, rng2).params() == m.params());
  }

  TEST_CASE("identity tower maps e1 to e1") {
    auto m = linear_model(3, 3, 3);
    set_identity(m, Tower::kImage);
    const Vec e1{1.0, 0.0, 0.0};
    const Vec out = m.encode_image(e1);
    CHECK(out == Vec{1.0, 0.0, 0.0});
  }

  TEST_CASE("embeddings are unit norm and deterministic") {
    std::mt19937_64 rng(2);
    const auto m = TwoTowerModel::init(Arch{}, rng);
    const Mat xs = random_mat(20, 32, rng);
    const Mat ts = random_mat(20, 16, rng);
    for (std::size_t i = 0; i < 20; ++i) {
      const Vec e = m.encode_image(xs.row(i));
      CHECK(std::abs(norm2(e) - 1.0) < 1e-9);
      CHECK(e == m.encode_image(xs.row(i)));
      CHECK(std::abs(norm2(m.encode_text(ts.row(i))) - 1.0) < 1e-9);
    }
    const Mat sim = similarity_matrix(m.encode_rows(Tower::kImage, xs), m.encode_rows(Tower::kText, ts));
    for (double v : sim.data()) CHECK((v >= -1.0 && v <= 1.0));
  }

  TEST_CASE("similarity matrix by hand") {
    const double r = 1.0 / std::sqrt(2.0);
    const Mat img{{1, 0}, {0, 1}};
    const Mat txt{{1, 0}, {r, r}};
    const Mat s = similarity_matrix(img, txt);
    CHECK(std::abs(s(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(s(0, 1) - 0.70711) < 1e-5);
    CHECK(std::abs(s(1, 0)) < 1e-12);
    CHECK(std::abs(s(1, 1) - 0.70711) < 1e-5);

    const Mat one{{0.6, 0.8}};
    CHECK(similarity_matrix(one, one)(0, 0) == doctest::Approx(1.0));
    const Mat orth{{0, 1}};
    const Mat e1{{1, 0}};
    CHECK(similarity_matrix(e1, orth)(0, 0) == 0.0);
    const Mat bad{{2, 0}};
    CHECK_THROWS_AS(similarity_matrix(bad, e1), PreconditionError);
  }

  TEST_CASE("logits scale by the temperature") {
    const Mat sim{{0.5, -0.25}, {0.0, 1.0}};
    const ParamLayout l({{"w", 0, 1}, {kLogTemperature, 1, 1}});
    ParamVector p(l);
    CHECK(logits(sim, p) == sim);
    p.segment(kLogTemperature)[0] = std::log(100.0);
    const Mat z = logits(sim, p);
    for (std::size_t i = 0; i < sim.data().size(); ++i) CHECK(z.data()[i] == doctest::Approx(100.0 * sim.data()[i]));
    const Mat zero(2, 3);
    CHECK(logits(zero, p) == zero);
  }

  TEST_CASE("predict: argmax with lowest-index ties") {
    const double r = 1.0 / std::sqrt(2.0);
    auto m = linear_model(2, 2, 2);
    set_identity(m, Tower::kImage);
    set_identity(m, Tower::kText);
    const Vec x{1.0, 0.0};
    // similarity row [1, 0.7071]
    CHECK(m.predict(x, Mat{{1, 0}, {r, r}}) == 0);
    // exact tie: both classes at the same angle
    const Vec diag{1.0, 1.0};
    CHECK(m.predict(diag, Mat{{1, 0}, {0, 1}}) == 0);
    CHECK(m.predict(x, Mat{{0, 1}}) == 0);
    CHECK(m.predict(x, Mat{{0, 1}, {1, 0}}) == 1);
    CHECK_THROWS_AS(m.predict(x, Mat(0, 2)), DegenerateInputError);

    const Vec scores{0.5, 0.5};
    CHECK(argmax_lowest(scores) == 0);
  }

  TEST_CASE("predict ignores the temperature") {
    std::mt19937_64 rng(4);
    auto m = TwoTowerModel::init(Arch{}, rng);
    const Mat xs = random_mat(30, 32, rng);
    const Mat cls = random_mat(7, 16, rng);
    std::vector<std::size_t> before;
    for (std::size_t i = 0; i < xs.rows(); ++i) before.push_back(m.predict(xs.row(i), cls));
    for (double lt : {-3.0, 0.0, 5.0}) {
      ParamVector p = m.params();
      p.segment(kLogTemperature)[0] = lt;
      m.set_params(p);
      for (std::size_t i = 0; i < xs.rows(); ++i) CHECK(m.predict(xs.row(i), cls) == before[i]);
    }
  }

  TEST_CASE("set_params rejects a foreign layout") {
    std::mt19937_64 rng(5);
    auto m = TwoTowerModel::init(Arch{}, rng);
    const ParamVector other(ParamLayout({{"w", 0, 1}, {kLogTemperature, 1, 1}}));
    CHECK_THROWS_AS(m.set_params(other), LayoutMismatchError);
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    std::mt19937_64 rng(6);
    Arch a;
    a.image_hidden = {8, 5};
    a.text_hidden = {};
    const auto m = TwoTowerModel::init(a, rng);
    std::ostringstream os;
    write_checkpoint(os, m);
    const std::string bytes = os.str();
    CHECK(bytes.rfind("ZSCL-CKPT v1\n", 0) == 0);
    const auto second = bytes.find('\n', 13);
    const std::string header = bytes.substr(13, second - 13);
    CHECK(header.find("image_hidden=8x5") != std::string::npos);
    CHECK(header.find("text_hidden=-") != std::string::npos);
    CHECK(header.find("log_temperature:") != std::string::npos);
    CHECK(bytes.size() - second - 1 == 8 * m.params().size());

    // Raw little-endian doubles in layout order.
    double first = 0.0;
    std::memcpy(&first, bytes.data() + second + 1, 8);
    CHECK(first == m.params().values()[0]);

    std::istringstream is(bytes);
    const auto back = read_checkpoint(is);
    CHECK(back.arch() == a);
    CHECK(std::memcmp(back.params().values().data(), m.params().values().data(), 8 * m.params().size()) == 0);

    std::istringstream bad("ZSCL-CKPT v2\n");
    CHECK_THROWS_AS(read_checkpoint(bad), IoError);
    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(truncated), IoError);
  }
}
