// Dense real and split-complex matrices with the handful of kernels the
// attention code needs. Storage is row-major double precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cope {

/// Raised when operand shapes are not conformable.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid model or encoding configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("RealMatrix: data length " + std::to_string(data_.size()) +
                           " does not match " + shape_string());
    }
  }
  RealMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("RealMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static RealMatrix identity(std::size_t n) {
    RealMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const RealMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  RealMatrix& operator+=(const RealMatrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  RealMatrix& operator-=(const RealMatrix& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  RealMatrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend RealMatrix operator+(RealMatrix a, const RealMatrix& b) { return a += b; }
  friend RealMatrix operator-(RealMatrix a, const RealMatrix& b) { return a -= b; }
  friend RealMatrix operator*(RealMatrix a, double s) { return a *= s; }
  friend RealMatrix operator*(double s, RealMatrix a) { return a *= s; }
  friend RealMatrix operator-(RealMatrix a) { return a *= -1.0; }

  bool operator==(const RealMatrix& o) const = default;

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  void require_same(const RealMatrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string("RealMatrix ") + op + ": shapes " + shape_string() +
                           " and " + o.shape_string() + " differ");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Split (structure-of-arrays) complex matrix.
struct ComplexMatrix {
  RealMatrix re;
  RealMatrix im;

  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols) : re(rows, cols), im(rows, cols) {}
  ComplexMatrix(RealMatrix real, RealMatrix imag) : re(std::move(real)), im(std::move(imag)) {
    if (!re.same_shape(im)) {
      throw DimensionError("ComplexMatrix: real part " + re.shape_string() +
                           " and imaginary part " + im.shape_string() + " differ");
    }
  }

  std::size_t rows() const noexcept { return re.rows(); }
  std::size_t cols() const noexcept { return re.cols(); }

  bool operator==(const ComplexMatrix& o) const = default;

  friend ComplexMatrix operator+(const ComplexMatrix& a, const ComplexMatrix& b) {
    return {a.re + b.re, a.im + b.im};
  }
};

inline ComplexMatrix conjugate(const ComplexMatrix& m) { return {m.re, -m.im}; }

inline RealMatrix transpose(const RealMatrix& a) {
  RealMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline ComplexMatrix conjugate_transpose(const ComplexMatrix& m) {
  return {transpose(m.re), -transpose(m.im)};
}

namespace detail {

inline void require_inner(std::size_t a_inner, std::size_t b_inner, const RealMatrix& a,
                          const RealMatrix& b, const char* op) {
  if (a_inner != b_inner) {
    throw DimensionError(std::string(op) + ": cannot combine " + a.shape_string() + " with " +
                         b.shape_string());
  }
}

// out += a * b
inline void gemm_acc(const RealMatrix& a, const RealMatrix& b, RealMatrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = od + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a * b^T
inline void gemm_nt_acc(const RealMatrix& a, const RealMatrix& b, RealMatrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = bd + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      od[i * m + j] += s;
    }
  }
}

// out += a^T * b
inline void gemm_tn_acc(const RealMatrix& a, const RealMatrix& b, RealMatrix& out) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = ad + p * n;
    const double* brow = bd + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = od + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  detail::require_inner(a.cols(), b.rows(), a, b, "matmul");
  RealMatrix out(a.rows(), b.cols());
  detail::gemm_acc(a, b, out);
  return out;
}

/// a * b^T
inline RealMatrix matmul_nt(const RealMatrix& a, const RealMatrix& b) {
  detail::require_inner(a.cols(), b.cols(), a, b, "matmul_nt");
  RealMatrix out(a.rows(), b.rows());
  detail::gemm_nt_acc(a, b, out);
  return out;
}

/// a^T * b
inline RealMatrix matmul_tn(const RealMatrix& a, const RealMatrix& b) {
  detail::require_inner(a.rows(), b.rows(), a, b, "matmul_tn");
  RealMatrix out(a.cols(), b.cols());
  detail::gemm_tn_acc(a, b, out);
  return out;
}

inline RealMatrix hadamard(const RealMatrix& a, const RealMatrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("hadamard: shapes " + a.shape_string() + " and " + b.shape_string() +
                         " differ");
  }
  RealMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

/// (a.re + i a.im)(b.re + i b.im), expanded into four real products.
inline ComplexMatrix cmatmul(const ComplexMatrix& a, const ComplexMatrix& b) {
  detail::require_inner(a.cols(), b.rows(), a.re, b.re, "cmatmul");
  RealMatrix re(a.rows(), b.cols());
  RealMatrix im(a.rows(), b.cols());
  detail::gemm_acc(a.re, b.re, re);
  re -= matmul(a.im, b.im);
  detail::gemm_acc(a.re, b.im, im);
  detail::gemm_acc(a.im, b.re, im);
  return {std::move(re), std::move(im)};
}

/// q * conj(k)^T: entry (m, n) is sum_j q[m,j] * conj(k[n,j]).
inline ComplexMatrix hermitian_product(const ComplexMatrix& q, const ComplexMatrix& k) {
  detail::require_inner(q.cols(), k.cols(), q.re, k.re, "hermitian_product");
  RealMatrix re(q.rows(), k.rows());
  RealMatrix im(q.rows(), k.rows());
  detail::gemm_nt_acc(q.re, k.re, re);
  detail::gemm_nt_acc(q.im, k.im, re);
  detail::gemm_nt_acc(q.im, k.re, im);
  im -= matmul_nt(q.re, k.im);
  return {std::move(re), std::move(im)};
}

/// Row-wise softmax with max subtraction.
inline RealMatrix softmax_rows(const RealMatrix& a) {
  RealMatrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto in = a.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

inline double elu1(double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); }

/// elu(x) + 1, entrywise. Strictly positive.
inline RealMatrix elu1(const RealMatrix& x) {
  RealMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = elu1(x[i]);
  return out;
}

inline RealMatrix slice_cols(const RealMatrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw DimensionError("slice_cols: range exceeds " + a.shape_string());
  RealMatrix out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    std::copy_n(a.row(r).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(r).begin());
  return out;
}

inline RealMatrix slice_rows(const RealMatrix& a, std::size_t begin, std::size_t count = 1) {
  if (begin + count > a.rows()) throw DimensionError("slice_rows: range exceeds " + a.shape_string());
  const auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  return RealMatrix(count, a.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * a.cols())));
}

inline double max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: shapes " + a.shape_string() + " and " + b.shape_string() +
                         " differ");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const RealMatrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace cope
