#ifndef POISSONRED_LINALG_HPP
#define POISSONRED_LINALG_HPP

// Small dense row-major matrices.  Phase spaces here are 2n <= ~10
// dimensional, so nothing fancier than partial-pivot LU is needed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace poissonred {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> data() const noexcept { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw std::invalid_argument("matrix product: shape mismatch");
    Matrix m(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) m(i, j) += aik * b(k, j);
      }
    return m;
  }

  friend Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw std::invalid_argument("matrix sum: shape mismatch");
    Matrix m = a;
    for (std::size_t i = 0; i < m.data_.size(); ++i) m.data_[i] += b.data_[i];
    return m;
  }

  std::vector<double> apply(std::span<const double> v) const {
    if (v.size() != cols_) throw std::invalid_argument("matrix-vector product: shape mismatch");
    std::vector<double> out(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) s += (*this)(r, c) * v[c];
      out[r] = s;
    }
    return out;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

// In-place LU with partial pivoting; returns the permutation sign, or 0 when
// a zero pivot column is met (singular).
inline int lu_decompose(Matrix& a, std::vector<std::size_t>& perm) {
  const std::size_t n = a.rows();
  perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  int sign = 1;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a(r, k)) > std::abs(a(pivot, k))) pivot = r;
    if (a(pivot, k) == 0.0) return 0;
    if (pivot != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(k, c), a(pivot, c));
      std::swap(perm[k], perm[pivot]);
      sign = -sign;
    }
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = a(r, k) / a(k, k);
      a(r, k) = f;
      for (std::size_t c = k + 1; c < n; ++c) a(r, c) -= f * a(k, c);
    }
  }
  return sign;
}

}  // namespace detail

inline double determinant(Matrix a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("determinant of non-square matrix");
  std::vector<std::size_t> perm;
  const int sign = detail::lu_decompose(a, perm);
  if (sign == 0) return 0.0;
  double det = sign;
  for (std::size_t i = 0; i < a.rows(); ++i) det *= a(i, i);
  return det;
}

/// Solves a x = b.  Throws std::domain_error for singular `a`.
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
  if (a.rows() != a.cols() || b.size() != a.rows()) throw std::invalid_argument("solve: shape mismatch");
  std::vector<std::size_t> perm;
  if (detail::lu_decompose(a, perm) == 0) throw std::domain_error("solve: singular matrix");
  const std::size_t n = a.rows();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= a(i, j) * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
    x[i] = s / a(i, i);
  }
  return x;
}

inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> e(n, 0.0);
    e[c] = 1.0;
    const auto col = solve(a, e);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least-squares line through (x_i, y_i); needs two distinct x.
inline LineFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_fit needs distinct abscissae");
  return {sxy / sxx, my - sxy / sxx * mx};
}

}  // namespace poissonred

#endif  // POISSONRED_LINALG_HPP
