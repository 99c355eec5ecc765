#include "zscl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zscl/error.hpp"

namespace zscl {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, Vec data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Mat: data length " + std::to_string(data_.size()) +
                         " != rows*cols " + std::to_string(rows_ * cols_));
  }
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Mat: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) return {};
  Mat m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols_) throw DimensionError("Mat::from_rows: ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

Vec Mat::row_copy(std::size_t r) const {
  auto s = row(r);
  return {s.begin(), s.end()};
}

Vec Mat::col_copy(std::size_t c) const {
  Vec out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Mat Mat::gather_rows(std::span<const std::size_t> idx) const {
  Mat out(idx.size(), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows_) throw DimensionError("Mat::gather_rows: index out of range");
    auto src = row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Mat Mat::vstack(const Mat& top, const Mat& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols_ != bottom.cols_) throw DimensionError("Mat::vstack: column mismatch");
  Mat out(top.rows_ + bottom.rows_, top.cols_);
  std::copy(top.data_.begin(), top.data_.end(), out.data_.begin());
  std::copy(bottom.data_.begin(), bottom.data_.end(),
            out.data_.begin() + static_cast<std::ptrdiff_t>(top.data_.size()));
  return out;
}

Distribution Distribution::checked(Vec p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw PreconditionError("Distribution: negative or non-finite entry");
    sum += v;
  }
  if (p.empty() || std::abs(sum - 1.0) > 1e-9) throw PreconditionError("Distribution: entries do not sum to 1");
  return Distribution{std::move(p)};
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vec l2_normalize(std::span<const double> a) {
  const double n = norm2(a);
  if (!(n > 0.0)) throw DegenerateInputError("l2_normalize: zero vector");
  Vec out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

Distribution softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  if (!all_finite(logits)) throw NonFiniteError("softmax: non-finite logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return Distribution{std::move(p)};
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInputError("cosine_sim: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cross_entropy(const Distribution& target, const Distribution& pred) {
  if (target.size() != pred.size()) throw DimensionError("cross_entropy: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    s -= target[i] * std::log(std::max(pred[i], kProbFloor));
  }
  return s;
}

Mat matmul_transposed(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_transposed: inner dimension mismatch");
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw PreconditionError("finite_diff_grad: h must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double linf_norm(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double scale_floor) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double scale = std::max({scale_floor, linf_norm(a), linf_norm(b)});
  return diff / scale;
}

}  // namespace zscl
