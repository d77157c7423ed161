// Mapping complex attention scores to real scores.
//
// For a complex score a with magnitude |a| and phase arg(a):
//   magnitude    |a|
//   phase        cos(arg a)
//   real         Re(a)
//   hybrid       |a| + alpha * cos(arg a)
//   hybrid_norm  |a| / rowmax|a| + alpha * cos(arg a)
// all divided by sqrt(d_k). cos(arg a) is Re(a)/|a|, defined as 1 (with zero
// gradient) when |a| < phase_eps.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/matrix.hpp"

namespace cope {

enum class ScoreKind { magnitude, phase, real, hybrid, hybrid_norm };

inline constexpr ScoreKind kAllScoreKinds[] = {ScoreKind::magnitude, ScoreKind::phase,
                                               ScoreKind::real, ScoreKind::hybrid,
                                               ScoreKind::hybrid_norm};

inline std::string_view to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::magnitude: return "magnitude";
    case ScoreKind::phase: return "phase";
    case ScoreKind::real: return "real";
    case ScoreKind::hybrid: return "hybrid";
    case ScoreKind::hybrid_norm: return "hybrid_norm";
  }
  return "?";
}

inline ScoreKind parse_score_kind(std::string_view s) {
  for (ScoreKind k : kAllScoreKinds)
    if (to_string(k) == s) return k;
  if (s == "hybrid-norm") return ScoreKind::hybrid_norm;
  throw ConfigError("unknown score variant '" + std::string(s) + "'");
}

struct ScoreVariant {
  ScoreKind kind = ScoreKind::phase;
  double alpha = 0.2;
  double phase_eps = 1e-8;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("score variant: alpha must be >= 0");
    if (!(phase_eps > 0.0)) throw ConfigError("score variant: phase_eps must be > 0");
  }
};

namespace detail {

inline constexpr double kRowMaxEps = 1e-12;

struct ComplexEntry {
  double mag;
  double cos_phase;
  bool guarded;  // |a| < phase_eps
};

inline ComplexEntry complex_entry(double re, double im, double phase_eps) {
  const double m = std::hypot(re, im);
  if (m < phase_eps) return {m, 1.0, true};
  return {m, re / m, false};
}

// Row maximum of |a| over unmasked columns; 1 when every column is masked.
inline std::vector<double> row_max_magnitude(const RealMatrix& re, const RealMatrix& im,
                                             const std::vector<bool>& masked_cols,
                                             std::vector<std::size_t>* argmax) {
  std::vector<double> out(re.rows(), 1.0);
  if (argmax) argmax->assign(re.rows(), SIZE_MAX);
  for (std::size_t r = 0; r < re.rows(); ++r) {
    double best = -1.0;
    std::size_t at = SIZE_MAX;
    for (std::size_t c = 0; c < re.cols(); ++c) {
      if (!masked_cols.empty() && masked_cols[c]) continue;
      const double m = std::hypot(re(r, c), im(r, c));
      if (m > best) {
        best = m;
        at = c;
      }
    }
    if (at != SIZE_MAX) out[r] = best + kRowMaxEps;
    if (argmax) (*argmax)[r] = at;
  }
  return out;
}

inline double map_entry(const ComplexEntry& e, double re, ScoreKind kind, double alpha,
                        double row_max) {
  switch (kind) {
    case ScoreKind::magnitude: return e.mag;
    case ScoreKind::phase: return e.cos_phase;
    case ScoreKind::real: return re;
    case ScoreKind::hybrid: return e.mag + alpha * e.cos_phase;
    case ScoreKind::hybrid_norm: return e.mag / row_max + alpha * e.cos_phase;
  }
  return 0.0;
}

}  // namespace detail

/// Real scores from complex scores, divided by sqrt(d_k).
/// hybrid_norm normalizes by the per-row maximum over unmasked columns.
inline RealMatrix score_to_real(const ComplexMatrix& a, const ScoreVariant& v, std::size_t d_k,
                                const std::vector<bool>& masked_cols = {}) {
  if (d_k == 0) throw ConfigError("score_to_real: d_k must be positive");
  const double s = 1.0 / std::sqrt(static_cast<double>(d_k));
  std::vector<double> row_max(a.rows(), 1.0);
  if (v.kind == ScoreKind::hybrid_norm)
    row_max = detail::row_max_magnitude(a.re, a.im, masked_cols, nullptr);
  RealMatrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const auto e = detail::complex_entry(a.re(r, c), a.im(r, c), v.phase_eps);
      out(r, c) = s * detail::map_entry(e, a.re(r, c), v.kind, v.alpha, row_max[r]);
    }
  return out;
}

namespace ad {

/// Differentiable score mapping: out = scale * variant(re + i im).
inline Var complex_to_real(Var re, Var im, const ScoreVariant& v, double scale,
                           const std::vector<bool>& masked_cols = {}) {
  Tape& t = *re.tape();
  const RealMatrix& rv = re.value();
  const RealMatrix& iv = im.value();
  if (!rv.same_shape(iv)) throw DimensionError("complex_to_real: real/imag shapes differ");
  std::vector<double> row_max(rv.rows(), 1.0);
  std::vector<std::size_t> argmax;
  if (v.kind == ScoreKind::hybrid_norm)
    row_max = cope::detail::row_max_magnitude(rv, iv, masked_cols, &argmax);
  RealMatrix out(rv.rows(), rv.cols());
  for (std::size_t r = 0; r < rv.rows(); ++r)
    for (std::size_t c = 0; c < rv.cols(); ++c) {
      const auto e = cope::detail::complex_entry(rv(r, c), iv(r, c), v.phase_eps);
      out(r, c) = scale * cope::detail::map_entry(e, rv(r, c), v.kind, v.alpha, row_max[r]);
    }
  return t.record(std::move(out), {re, im},
                  [re, im, v, scale, row_max, argmax](Tape& t, const RealMatrix& g) {
                    const RealMatrix& rv = re.value();
                    const RealMatrix& iv = im.value();
                    RealMatrix gr(rv.rows(), rv.cols()), gi(rv.rows(), rv.cols());
                    for (std::size_t r = 0; r < rv.rows(); ++r) {
                      double norm_back = 0.0;  // d out / d rowmax accumulated
                      for (std::size_t c = 0; c < rv.cols(); ++c) {
                        const double x = rv(r, c), y = iv(r, c);
                        const double go = g(r, c) * scale;
                        const double m = std::hypot(x, y);
                        double dmag = 0.0, dcos = 0.0;
                        switch (v.kind) {
                          case ScoreKind::magnitude: dmag = go; break;
                          case ScoreKind::phase: dcos = go; break;
                          case ScoreKind::real: gr(r, c) += go; break;
                          case ScoreKind::hybrid:
                            dmag = go;
                            dcos = v.alpha * go;
                            break;
                          case ScoreKind::hybrid_norm:
                            dmag = go / row_max[r];
                            dcos = v.alpha * go;
                            norm_back -= go * m / (row_max[r] * row_max[r]);
                            break;
                        }
                        if (dmag != 0.0 && m > 0.0) {
                          gr(r, c) += dmag * x / m;
                          gi(r, c) += dmag * y / m;
                        }
                        if (dcos != 0.0 && m >= v.phase_eps) {
                          const double m3 = m * m * m;
                          gr(r, c) += dcos * y * y / m3;
                          gi(r, c) -= dcos * x * y / m3;
                        }
                      }
                      if (v.kind == ScoreKind::hybrid_norm && !argmax.empty() &&
                          argmax[r] != SIZE_MAX) {
                        const std::size_t k = argmax[r];
                        const double m = std::hypot(rv(r, k), iv(r, k));
                        if (m > 0.0) {
                          gr(r, k) += norm_back * rv(r, k) / m;
                          gi(r, k) += norm_back * iv(r, k) / m;
                        }
                      }
                    }
                    t.accumulate(re, gr);
                    t.accumulate(im, gi);
                  });
}

}  // namespace ad
}  // namespace cope
