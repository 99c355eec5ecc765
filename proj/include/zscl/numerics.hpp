#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace zscl {

using Vec = std::vector<double>;

/// Floor applied to probabilities inside every logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, Vec data);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat from_rows(const std::vector<Vec>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vec row_copy(std::size_t r) const;
  Vec col_copy(std::size_t c) const;

  const Vec& data() const noexcept { return data_; }
  Vec& data() noexcept { return data_; }

  Mat transposed() const;
  /// Rows selected by index, in the given order.
  Mat gather_rows(std::span<const std::size_t> idx) const;
  /// Vertical concatenation; column counts must agree.
  static Mat vstack(const Mat& top, const Mat& bottom);

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

/// Probability vector: non-negative entries summing to one.
struct Distribution {
  Vec probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  /// Validates the simplex constraint (tolerance 1e-9) and wraps `p`.
  static Distribution checked(Vec p);
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> a);

/// Returns a / ‖a‖₂; throws DegenerateInputError on a zero vector.
Vec l2_normalize(std::span<const double> a);

/// Numerically stable softmax (max-subtraction). No temperature.
Distribution softmax(std::span<const double> logits);

double cosine_sim(std::span<const double> a, std::span<const double> b);

/// -Σ target_i · log(max(pred_i, kProbFloor)).
double cross_entropy(const Distribution& target, const Distribution& pred);

/// A·Bᵀ for row-major A (n×k) and B (m×k).
Mat matmul_transposed(const Mat& a, const Mat& b);

using ScalarFn = std::function<double(const Vec&)>;

/// Central finite-difference gradient, one coordinate at a time.
/// Throws NonFiniteError if any evaluation of `f` is not finite.
Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h);

/// max_i |a_i - b_i| / max(scale_floor, max(‖a‖∞, ‖b‖∞)).
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double scale_floor = 1e-8);
double linf_norm(std::span<const double> a);

}  // namespace zscl
