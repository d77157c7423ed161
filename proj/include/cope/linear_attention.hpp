// Linear-time phase-aware attention.
//
// Complex queries and keys are lifted to positive real features
// phi = elu + 1 applied separately to the real and imaginary parts. The
// complex kernel between query m and key n is
//
//   K(m, n) = (A_rr + A_ii) + i (A_ir - A_ri),
//   A_uv    = phi(q_u,m) . phi(k_v,n)
//
// so the numerator sum_n K(m, n) v_n factors through the key-value aggregates
// G_r = sum_n phi(k_r,n) v_n^T and G_i = sum_n phi(k_i,n) v_n^T, and the real
// denominator through s_r = sum_n phi(k_r,n), s_i = sum_n phi(k_i,n). Score
// variants are applied entrywise to the complex numerator and divided by the
// denominator.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/matrix.hpp"
#include "cope/score_variant.hpp"

namespace cope {

enum class AttentionMode { softmax, linear };

inline std::string_view to_string(AttentionMode m) {
  return m == AttentionMode::softmax ? "softmax" : "linear";
}

inline AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "softmax") return AttentionMode::softmax;
  if (s == "linear") return AttentionMode::linear;
  throw ConfigError("unknown attention mode '" + std::string(s) + "'");
}

/// Raised when a linear-attention denominator is not safely positive.
class NumericGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMinDenominator = 1e-12;

struct LiftedFeatures {
  RealMatrix phi_r;  // T x d_k
  RealMatrix phi_i;  // T x d_k

  std::size_t rows() const { return phi_r.rows(); }
  std::size_t dim() const { return phi_r.cols(); }
};

inline LiftedFeatures lift(const ComplexMatrix& x) { return {elu1(x.re), elu1(x.im)}; }

/// The four real inner products between query row m and key row n.
struct KernelTerms {
  double rr = 0.0;
  double ii = 0.0;
  double ir = 0.0;
  double ri = 0.0;

  double real() const { return rr + ii; }
  double imag() const { return ir - ri; }
};

inline KernelTerms kernel_decompose(const LiftedFeatures& q, std::size_t m,
                                    const LiftedFeatures& k, std::size_t n) {
  if (q.dim() != k.dim()) {
    throw DimensionError("kernel_decompose: feature dims " + std::to_string(q.dim()) + " and " +
                         std::to_string(k.dim()) + " differ");
  }
  KernelTerms t;
  auto qr = q.phi_r.row(m), qi = q.phi_i.row(m);
  auto kr = k.phi_r.row(n), ki = k.phi_i.row(n);
  for (std::size_t j = 0; j < q.dim(); ++j) {
    t.rr += qr[j] * kr[j];
    t.ii += qi[j] * ki[j];
    t.ir += qi[j] * kr[j];
    t.ri += qr[j] * ki[j];
  }
  return t;
}

struct KVAggregates {
  RealMatrix g_r;  // d_k x d_v
  RealMatrix g_i;  // d_k x d_v
  std::vector<double> s_r;
  std::vector<double> s_i;

  KVAggregates() = default;
  KVAggregates(std::size_t d_k, std::size_t d_v)
      : g_r(d_k, d_v), g_i(d_k, d_v), s_r(d_k, 0.0), s_i(d_k, 0.0) {}

  /// Folds one key/value pair into the sums.
  void push(std::span<const double> phi_kr, std::span<const double> phi_ki,
            std::span<const double> v) {
    const std::size_t d_k = s_r.size(), d_v = g_r.cols();
    for (std::size_t j = 0; j < d_k; ++j) {
      const double a = phi_kr[j], b = phi_ki[j];
      s_r[j] += a;
      s_i[j] += b;
      double* gr = g_r.row(j).data();
      double* gi = g_i.row(j).data();
      for (std::size_t c = 0; c < d_v; ++c) {
        gr[c] += a * v[c];
        gi[c] += b * v[c];
      }
    }
  }

  KVAggregates& operator+=(const KVAggregates& o) {
    g_r += o.g_r;
    g_i += o.g_i;
    for (std::size_t j = 0; j < s_r.size(); ++j) {
      s_r[j] += o.s_r[j];
      s_i[j] += o.s_i[j];
    }
    return *this;
  }

  bool operator==(const KVAggregates&) const = default;
};

/// One left-to-right pass over the keys.
inline KVAggregates aggregate(const LiftedFeatures& k, const RealMatrix& v) {
  if (k.rows() != v.rows()) {
    throw DimensionError("aggregate: " + std::to_string(k.rows()) + " keys but " +
                         std::to_string(v.rows()) + " values");
  }
  KVAggregates agg(k.dim(), v.cols());
  for (std::size_t n = 0; n < k.rows(); ++n) agg.push(k.phi_r.row(n), k.phi_i.row(n), v.row(n));
  return agg;
}

struct LinearAttentionOutput {
  RealMatrix num_re;        // T x d_v
  RealMatrix num_im;        // T x d_v
  std::vector<double> den;  // T
};

inline LinearAttentionOutput linear_numerator(const LiftedFeatures& q, const KVAggregates& agg) {
  if (q.dim() != agg.s_r.size()) throw DimensionError("linear_attend: query/key feature dims differ");
  LinearAttentionOutput out;
  out.num_re = matmul(q.phi_r, agg.g_r);
  detail::gemm_acc(q.phi_i, agg.g_i, out.num_re);
  out.num_im = matmul(q.phi_i, agg.g_r);
  out.num_im -= matmul(q.phi_r, agg.g_i);
  out.den.assign(q.rows(), 0.0);
  for (std::size_t m = 0; m < q.rows(); ++m) {
    double d = 0.0;
    for (std::size_t j = 0; j < q.dim(); ++j) d += q.phi_r(m, j) * agg.s_r[j] + q.phi_i(m, j) * agg.s_i[j];
    out.den[m] = d;
  }
  return out;
}

namespace detail {

inline void require_linear_variant(const ScoreVariant& v) {
  if (v.kind == ScoreKind::hybrid_norm)
    throw ConfigError("hybrid_norm has no linear-attention form");
}

inline RealMatrix apply_variant(const RealMatrix& num_re, const RealMatrix& num_im,
                                const std::vector<double>& den, const ScoreVariant& v) {
  RealMatrix out(num_re.rows(), num_re.cols());
  for (std::size_t m = 0; m < num_re.rows(); ++m) {
    if (!(den[m] >= kMinDenominator))
      throw NumericGuardError("linear attention denominator " + std::to_string(den[m]) +
                              " at row " + std::to_string(m));
    for (std::size_t c = 0; c < num_re.cols(); ++c) {
      const auto e = complex_entry(num_re(m, c), num_im(m, c), v.phase_eps);
      out(m, c) = map_entry(e, num_re(m, c), v.kind, v.alpha, 1.0) / den[m];
    }
  }
  return out;
}

}  // namespace detail

/// Linear-time attention output for the magnitude, phase, real, and hybrid variants.
inline RealMatrix linear_attend(const LiftedFeatures& q, const KVAggregates& agg,
                                const ScoreVariant& v) {
  detail::require_linear_variant(v);
  const LinearAttentionOutput o = linear_numerator(q, agg);
  return detail::apply_variant(o.num_re, o.num_im, o.den, v);
}

/// Causal form: query m only sees keys 0..m, via running aggregates.
inline RealMatrix linear_attend_causal(const LiftedFeatures& q, const LiftedFeatures& k,
                                       const RealMatrix& v, const ScoreVariant& variant) {
  detail::require_linear_variant(variant);
  if (q.rows() != k.rows() || k.rows() != v.rows())
    throw DimensionError("linear_attend_causal: sequence lengths differ");
  KVAggregates running(k.dim(), v.cols());
  RealMatrix out(q.rows(), v.cols());
  for (std::size_t m = 0; m < q.rows(); ++m) {
    running.push(k.phi_r.row(m), k.phi_i.row(m), v.row(m));
    LiftedFeatures qm{slice_rows(q.phi_r, m), slice_rows(q.phi_i, m)};
    const RealMatrix row = linear_attend(qm, running, variant);
    std::copy(row.data().begin(), row.data().end(), out.row(m).begin());
  }
  return out;
}

/// Direct O(T^2) evaluation: every kernel value is formed explicitly, one
/// query row at a time, then the same variant mapping is applied.
inline RealMatrix quadratic_attend(const LiftedFeatures& q, const LiftedFeatures& k,
                                   const RealMatrix& v, const ScoreVariant& variant) {
  detail::require_linear_variant(variant);
  if (k.rows() != v.rows()) throw DimensionError("quadratic_attend: key/value counts differ");
  const std::size_t d_v = v.cols();
  RealMatrix num_re(q.rows(), d_v), num_im(q.rows(), d_v);
  std::vector<double> den(q.rows(), 0.0);
  std::vector<double> kre(k.rows()), kim(k.rows());
  for (std::size_t m = 0; m < q.rows(); ++m) {
    for (std::size_t n = 0; n < k.rows(); ++n) {
      const KernelTerms t = kernel_decompose(q, m, k, n);
      kre[n] = t.real();
      kim[n] = t.imag();
    }
    double* nr = num_re.row(m).data();
    double* ni = num_im.row(m).data();
    for (std::size_t n = 0; n < k.rows(); ++n) {
      den[m] += kre[n];
      const double* vn = v.row(n).data();
      for (std::size_t c = 0; c < d_v; ++c) {
        nr[c] += kre[n] * vn[c];
        ni[c] += kim[n] * vn[c];
      }
    }
  }
  return detail::apply_variant(num_re, num_im, den, variant);
}

namespace ad {

/// Differentiable linear phase attention for one head. Rows flagged in
/// `pad_mask` are dropped from the key set.
inline Var linear_phase_attend(Var q_re, Var q_im, Var k_re, Var k_im, Var v,
                               const std::vector<bool>& pad_mask, const ScoreVariant& variant) {
  cope::detail::require_linear_variant(variant);
  Tape& t = *q_re.tape();
  Var phi_qr = elu1(q_re), phi_qi = elu1(q_im);
  Var phi_kr = elu1(k_re), phi_ki = elu1(k_im);
  const std::size_t n_keys = k_re.rows();
  RealMatrix ones(n_keys, 1, 1.0);
  bool any_pad = false;
  for (std::size_t n = 0; n < pad_mask.size(); ++n)
    if (pad_mask[n]) {
      ones(n, 0) = 0.0;
      any_pad = true;
    }
  if (any_pad) {
    RealMatrix keep(n_keys, k_re.cols());
    for (std::size_t n = 0; n < n_keys; ++n)
      for (std::size_t j = 0; j < keep.cols(); ++j) keep(n, j) = ones(n, 0);
    phi_kr = mask(phi_kr, keep);
    phi_ki = mask(phi_ki, keep);
  }
  Var g_r = matmul_tn(phi_kr, v);
  Var g_i = matmul_tn(phi_ki, v);
  Var num_re = matmul(phi_qr, g_r) + matmul(phi_qi, g_i);
  Var num_im = matmul(phi_qi, g_r) - matmul(phi_qr, g_i);
  Var ones_v = t.constant(std::move(ones));
  Var s_r = matmul_tn(phi_kr, ones_v);
  Var s_i = matmul_tn(phi_ki, ones_v);
  Var den = matmul(phi_qr, s_r) + matmul(phi_qi, s_i);
  for (double d : den.value().data())
    if (!(d >= kMinDenominator)) throw NumericGuardError("linear attention denominator below guard");
  return div_rows(complex_to_real(num_re, num_im, variant, 1.0), den);
}

}  // namespace ad
}  // namespace cope
