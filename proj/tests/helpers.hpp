#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "zscl/model.hpp"

namespace zscl::test {

/// Single-layer towers (no hidden layer) with every weight and bias zeroed.
inline TwoTowerModel linear_model(std::size_t d_img, std::size_t d_txt, std::size_t d_emb, double log_tau = 0.0) {
  Arch a;
  a.d_img = d_img;
  a.d_txt = d_txt;
  a.d_emb = d_emb;
  a.image_hidden = {};
  a.text_hidden = {};
  ParamVector p(a.layout());
  p.segment(kLogTemperature)[0] = log_tau;
  return TwoTowerModel(a, p);
}

/// Sets the single layer of `tower` to the row-major out×in matrix `w`.
inline void set_weights(TwoTowerModel& m, Tower tower, std::initializer_list<double> w) {
  ParamVector p = m.params();
  auto seg = p.segment(layer_weight_name(tower, 0));
  REQUIRE(seg.size() == w.size());
  std::copy(w.begin(), w.end(), seg.begin());
  m.set_params(p);
}

inline void set_identity(TwoTowerModel& m, Tower tower) {
  ParamVector p = m.params();
  auto seg = p.segment(layer_weight_name(tower, 0));
  const std::size_t out = m.arch().d_emb, in = m.arch().input_dim(tower);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) seg[o * in + i] = o == i ? 1.0 : 0.0;
  }
  m.set_params(p);
}

inline Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

/// Central differences written out independently of the library helper.
inline Vec central_diff(const std::function<double(const Vec&)>& f, Vec x, double h) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-8).
inline double rel_err(const Vec& a, const Vec& b) {
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

}  // namespace zscl::test
