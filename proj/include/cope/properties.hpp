// Executable checks of the analytic properties of the CoPE positional term:
// product-to-sum phase identity, absence of long-term decay, isolation of
// the position term, linear/quadratic equivalence, and gradient checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cope/autodiff.hpp"
#include "cope/embeddings.hpp"
#include "cope/gradcheck.hpp"
#include "cope/layers.hpp"
#include "cope/linear_attention.hpp"
#include "cope/model.hpp"
#include "cope/phase_attention.hpp"
#include "cope/random.hpp"
#include "cope/score_variant.hpp"

namespace cope {

// ---------------------------------------------------------------------------
// Phase identity: sin(wp) sin(wq) = (cos(w(p-q)) - cos(w(p+q))) / 2

inline double phase_identity_check(double omega, const std::vector<std::pair<double, double>>& grid) {
  double worst = 0.0;
  for (auto [p, q] : grid) {
    const double lhs = std::sin(omega * p) * std::sin(omega * q);
    const double rhs = 0.5 * (std::cos(omega * (p - q)) - std::cos(omega * (p + q)));
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

/// All (p, q) with 0 <= p, q < n.
inline std::vector<std::pair<double, double>> square_grid(std::size_t n) {
  std::vector<std::pair<double, double>> g;
  g.reserve(n * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) g.emplace_back(static_cast<double>(p), static_cast<double>(q));
  return g;
}

// ---------------------------------------------------------------------------
// Long-term decay

struct DecayProfile {
  double omega = 0.0;
  std::vector<std::size_t> deltas;
  std::vector<double> values;
  std::vector<std::pair<std::size_t, double>> window_max;  // (window index, max |value|)
};

inline constexpr std::size_t kPhasePointsPerPeriod = 64;

/// Per-window maxima of |values| over `windows` contiguous windows of equal
/// width; any remainder joins the last window.
inline std::vector<std::pair<std::size_t, double>> window_maxima(const std::vector<double>& values,
                                                                 std::size_t windows) {
  if (windows < 3) throw UsageError("decay check needs at least 3 windows, got " + std::to_string(windows));
  if (values.size() < windows)
    throw UsageError("decay check: " + std::to_string(values.size()) + " values cannot fill " +
                     std::to_string(windows) + " windows");
  const std::size_t width = values.size() / windows;
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t w = 0; w < windows; ++w) {
    const std::size_t begin = w * width;
    const std::size_t end = w + 1 == windows ? values.size() : begin + width;
    double m = 0.0;
    for (std::size_t i = begin; i < end; ++i) m = std::max(m, std::abs(values[i]));
    out.emplace_back(w, m);
  }
  return out;
}

/// value(D) = max over p+q of |cos(wD) - cos(w(p+q))| / 2 with p - q = D.
/// p+q sweeps one full period past D at kPhasePointsPerPeriod points, so the
/// maximum isolates the envelope of the relative term.
inline DecayProfile decay_profile(double omega, std::size_t max_delta, std::size_t windows) {
  if (!(omega > 0.0)) throw UsageError("decay_profile: omega must be > 0");
  if (max_delta < 100) throw UsageError("decay_profile: max_delta must be >= 100");
  DecayProfile prof;
  prof.omega = omega;
  const double period = 2.0 * std::numbers::pi / omega;
  for (std::size_t d = 0; d <= max_delta; ++d) {
    const double delta = static_cast<double>(d);
    const double rel = std::cos(omega * delta);
    double best = 0.0;
    for (std::size_t k = 0; k < kPhasePointsPerPeriod; ++k) {
      const double sum = delta + period * static_cast<double>(k) / kPhasePointsPerPeriod;
      best = std::max(best, std::abs(rel - std::cos(omega * sum)) / 2.0);
    }
    prof.deltas.push_back(d);
    prof.values.push_back(best);
  }
  prof.window_max = window_maxima(prof.values, windows);
  return prof;
}

/// Profile of an arbitrary signal, e.g. a decaying control.
inline DecayProfile profile_from_values(std::vector<double> values, std::size_t windows, double omega = 0.0) {
  DecayProfile prof;
  prof.omega = omega;
  for (std::size_t d = 0; d < values.size(); ++d) prof.deltas.push_back(d);
  prof.values = std::move(values);
  prof.window_max = window_maxima(prof.values, windows);
  return prof;
}

struct DecayReport {
  bool passed = false;
  double first = 0.0;
  double last = 0.0;
  double ratio = 0.0;  // last / first
  double slope = 0.0;  // least-squares slope of log(window max) per window index
  std::string diagnostic;
};

inline constexpr double kMinEnvelopeRatio = 0.5;
inline constexpr double kMinLogSlope = -1e-3;

/// PASS iff last-window max >= 0.5 x first-window max and the log-envelope
/// slope is >= -1e-3 per window.
inline DecayReport assert_no_decay(const DecayProfile& profile, std::size_t windows) {
  const auto wm = window_maxima(profile.values, windows);
  DecayReport r;
  r.first = wm.front().second;
  r.last = wm.back().second;
  const bool all_zero = std::all_of(wm.begin(), wm.end(), [](const auto& w) { return w.second == 0.0; });
  if (all_zero) {
    r.diagnostic = "degenerate signal: envelope is identically zero";
    return r;
  }
  for (const auto& [w, m] : wm) {
    if (m == 0.0) {
      r.slope = -INFINITY;
      r.ratio = r.first > 0.0 ? r.last / r.first : 0.0;
      r.diagnostic = "envelope vanishes in window " + std::to_string(w);
      return r;
    }
  }
  r.ratio = r.last / r.first;
  const double n = static_cast<double>(wm.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [w, m] : wm) {
    const double x = static_cast<double>(w), y = std::log(m);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  r.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const bool ratio_ok = r.ratio >= kMinEnvelopeRatio;
  const bool slope_ok = r.slope >= kMinLogSlope;
  r.passed = ratio_ok && slope_ok;
  std::ostringstream os;
  os << "last/first " << r.ratio << (ratio_ok ? " >= " : " < ") << kMinEnvelopeRatio << ", log slope "
     << r.slope << (slope_ok ? " >= " : " < ") << kMinLogSlope;
  r.diagnostic = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// Position term in isolation

struct PositionTermReport {
  double max_error = 0.0;      // complex score vs gamma^2 sum_j (cos(w(p-q)) - cos(w(p+q))) / 2
  double max_imag = 0.0;       // imaginary part of the score (exactly zero expected)
  double max_abs_score = 0.0;
};

/// Zero token content, sin_only imaginary part, unit real projections:
/// the complex score q k^* reduces to gamma^2 sum_j sin(w_j p) sin(w_j q).
inline PositionTermReport end_to_end_positional_term(const PositionalSpec& spec, std::size_t seq_len,
                                                     std::size_t dim) {
  PositionalSpec s = spec;
  s.imag_mode = ImagMode::sin_only;
  s.scheme = PositionalScheme::cope;
  const TokenEmbeddingTable zero(RealMatrix(2, dim));
  const EmbeddedBatch z = embed_cope(std::vector<std::size_t>(seq_len, 1), zero, s);
  const ComplexProjection unit(RealMatrix::identity(dim), RealMatrix(dim, dim));
  const ComplexMatrix a = complex_scores(project_complex(z.z, unit), project_complex(z.z, unit));

  std::vector<double> w(dim);
  if (!s.frequencies.empty()) {
    w = s.frequencies;
  } else {
    const auto sched = frequency_schedule(dim, s.omega_base);
    for (std::size_t c = 0; c < dim; ++c) w[c] = sched[c / 2];
  }
  PositionTermReport r;
  for (std::size_t p = 0; p < seq_len; ++p)
    for (std::size_t q = 0; q < seq_len; ++q) {
      const double dp = static_cast<double>(p), dq = static_cast<double>(q);
      double expect = 0.0;
      for (double wj : w) expect += 0.5 * (std::cos(wj * (dp - dq)) - std::cos(wj * (dp + dq)));
      expect *= s.gamma * s.gamma;
      r.max_error = std::max(r.max_error, std::abs(a.re(p, q) - expect));
      r.max_imag = std::max(r.max_imag, std::abs(a.im(p, q)));
      r.max_abs_score = std::max(r.max_abs_score, std::hypot(a.re(p, q), a.im(p, q)));
    }
  return r;
}

// ---------------------------------------------------------------------------
// Linear / quadratic equivalence

struct EquivalenceResult {
  ScoreKind kind;
  std::size_t seq_len;
  double rel_error;
};

inline std::vector<EquivalenceResult> linear_equivalence_check(const std::vector<std::size_t>& lengths,
                                                               std::size_t d_k, std::uint64_t seed) {
  std::vector<EquivalenceResult> out;
  Rng rng(seed);
  for (ScoreKind kind : kAllScoreKinds) {
    if (kind == ScoreKind::hybrid_norm) continue;
    ScoreVariant v;
    v.kind = kind;
    for (std::size_t t : lengths) {
      const ComplexMatrix q(normal_matrix(t, d_k, 1.0, rng), normal_matrix(t, d_k, 1.0, rng));
      const ComplexMatrix k(normal_matrix(t, d_k, 1.0, rng), normal_matrix(t, d_k, 1.0, rng));
      const RealMatrix val = normal_matrix(t, d_k, 1.0, rng);
      const LiftedFeatures lq = lift(q), lk = lift(k);
      const RealMatrix fast = linear_attend(lq, aggregate(lk, val), v);
      const RealMatrix slow = quadratic_attend(lq, lk, val, v);
      out.push_back({kind, t, relative_error(fast, slow)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradGroupResult {
  std::string variant;
  std::string group;
  double rel_error = 0.0;
};

struct GradcheckOptions {
  std::size_t d_model = 8;
  std::size_t heads = 2;
  std::size_t seq_len = 4;
  double eps = 1e-6;
  double min_magnitude = 0.1;  // phase variant: every |A| must clear this
  std::uint64_t seed = 7;
};

namespace detail {

/// Smallest |A| over all heads of the layer's unscaled complex scores.
inline double min_score_magnitude(PhaseAttentionLayer& layer, const ComplexMatrix& z) {
  double m = INFINITY;
  for (std::size_t h = 0; h < layer.heads; ++h) {
    const ComplexMatrix a = complex_scores(project_complex(z, layer.q_proj[h]), project_complex(z, layer.k_proj[h]));
    for (std::size_t i = 0; i < a.re.size(); ++i) m = std::min(m, std::hypot(a.re[i], a.im[i]));
  }
  return m;
}

inline std::vector<GradGroupResult> check_parameters(const std::string& label, NamedParameters params,
                                                     const std::function<Var(Tape&)>& loss_fn, double eps) {
  for (auto& [name, p] : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  const auto eval = [&] {
    Tape tape;
    return loss_fn(tape).value()(0, 0);
  };
  std::vector<GradGroupResult> out;
  for (auto& [name, p] : params) {
    if (!p->trainable) continue;
    const RealMatrix numeric = finite_diff_grad(eval, *p, eps);
    out.push_back({label, name, relative_error(p->grad, numeric)});
  }
  return out;
}

}  // namespace detail

/// Phase-aware layer gradients for one variant on a toy input. The loss is a
/// fixed random weighting of the layer output. For the phase variant the
/// seed is advanced until every |A| clears opts.min_magnitude.
inline std::vector<GradGroupResult> gradcheck_layer(ScoreKind kind, const GradcheckOptions& opts,
                                                    AttentionMode mode = AttentionMode::softmax) {
  ScoreVariant variant;
  variant.kind = kind;
  PositionalSpec spec;
  std::uint64_t seed = opts.seed;
  for (int attempt = 0;; ++attempt, ++seed) {
    if (attempt == 1000) throw std::runtime_error("gradcheck: no input found with |A| above the floor");
    Rng rng(seed);
    PhaseAttentionLayer layer(opts.d_model, opts.heads, variant, rng, mode);
    const TokenEmbeddingTable table(normal_matrix(opts.seq_len + 1, opts.d_model, 1.0, rng));
    std::vector<std::size_t> tokens(opts.seq_len);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = i + 1;
    const EmbeddedBatch z = embed_cope(tokens, table, spec);
    if (kind == ScoreKind::phase && detail::min_score_magnitude(layer, z.z) < opts.min_magnitude) continue;
    const RealMatrix weights = normal_matrix(opts.seq_len, opts.d_model, 1.0, rng);
    NamedParameters params;
    layer.collect("attn", params);
    const auto loss = [&](Tape& tape) {
      Binder bind(tape);
      Var out = layer.forward(bind, tape.constant(z.z.re), tape.constant(z.z.im), z.pad_mask, ForwardMode{});
      return ad::weighted_sum(out, weights);
    };
    return detail::check_parameters(std::string(to_string(kind)), params, loss, opts.eps);
  }
}

/// Whole-model gradients (dropout off) on a tiny configuration of `base`.
inline std::vector<GradGroupResult> gradcheck_model(const ModelConfig& base, const GradcheckOptions& opts) {
  ModelConfig cfg = base;
  cfg.d_model = opts.d_model;
  cfg.heads = opts.heads;
  cfg.vocab_size = std::max<std::size_t>(cfg.vocab_size, 8);
  cfg.dropout = 0.0;
  cfg.seed = opts.seed;
  TransformerModel model(cfg);
  Rng rng(opts.seed + 1);
  std::vector<Example> batch(2);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < opts.seq_len; ++i) batch[b].tokens.push_back(1 + rng.below(cfg.vocab_size - 1));
    batch[b].label = b % cfg.num_classes;
  }
  batch[1].tokens.back() = kPadId;
  const std::vector<const Example*> ptrs{&batch[0], &batch[1]};
  const std::vector<std::size_t> labels{batch[0].label, batch[1].label};
  const auto loss = [&](Tape& tape) {
    Binder bind(tape);
    return ad::cross_entropy(model.forward(bind, ptrs, ForwardMode{}), labels);
  };
  std::string label = std::string(to_string(cfg.positional.scheme));
  if (cfg.positional.scheme == PositionalScheme::cope) label += "/" + std::string(to_string(cfg.variant.kind));
  return detail::check_parameters(label, model.named_parameters(), loss, opts.eps);
}

inline constexpr double kGradTolerance = 1e-4;

// ---------------------------------------------------------------------------
// Verification report

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
  bool informational = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.informational || c.passed; });
  }

  std::string text() const {
    std::ostringstream os;
    os.precision(6);
    for (const auto& c : checks) {
      os << (c.informational ? "INFO" : c.passed ? "PASS" : "FAIL") << "  " << c.name;
      if (!c.informational) os << "  value=" << c.value << " threshold=" << c.threshold;
      if (!c.detail.empty()) os << "  (" << c.detail << ")";
      os << "\n";
    }
    os << (passed() ? "all checks passed" : "verification FAILED") << "\n";
    return os.str();
  }

  nlohmann::json json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["passed"] = passed();
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks) {
      j["checks"].push_back({{"name", c.name},
                             {"passed", c.passed},
                             {"informational", c.informational},
                             {"value", std::isfinite(c.value) ? nlohmann::json(c.value) : nlohmann::json(nullptr)},
                             {"threshold", c.threshold},
                             {"detail", c.detail}});
    }
    return j;
  }
};

struct VerifyOptions {
  std::size_t d_model = 64;
  double omega_base = 10000.0;
  std::size_t max_delta = 10000;
  std::size_t decay_windows = 1000;
  std::uint64_t seed = 0;
  bool model_gradients = true;
};

inline VerifyReport run_verification(const VerifyOptions& opts) {
  VerifyReport rep;
  auto add = [&](std::string name, bool ok, double value, double threshold, std::string detail = {}) {
    rep.checks.push_back({std::move(name), ok, value, threshold, std::move(detail), false});
  };

  {
    Rng rng(opts.seed);
    const auto grid = square_grid(64);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) worst = std::max(worst, phase_identity_check(rng.uniform(1e-6, std::numbers::pi), grid));
    add("phase_identity (20 random omega, 64x64 grid)", worst <= 1e-12, worst, 1e-12);
  }

  {
    const auto omegas = frequency_schedule(opts.d_model, opts.omega_base);
    double worst_ratio = INFINITY, worst_slope = INFINITY;
    bool ok = true;
    std::string failing;
    for (double w : omegas) {
      const DecayReport r = assert_no_decay(decay_profile(w, opts.max_delta, opts.decay_windows), opts.decay_windows);
      worst_ratio = std::min(worst_ratio, r.ratio);
      worst_slope = std::min(worst_slope, r.slope);
      if (!r.passed) {
        ok = false;
        failing += (failing.empty() ? "" : "; ") + std::string("omega=") + KeyValues::format_double(w) + ": " + r.diagnostic;
      }
    }
    add("no_long_term_decay (every default omega_j)", ok, worst_slope, kMinLogSlope,
        ok ? "worst last/first " + KeyValues::format_double(worst_ratio) : failing);

    std::vector<double> control(opts.max_delta + 1);
    for (std::size_t d = 0; d <= opts.max_delta; ++d)
      control[d] = std::exp(-0.01 * static_cast<double>(d)) * std::cos(omegas.front() * static_cast<double>(d));
    const DecayReport c = assert_no_decay(profile_from_values(control, opts.decay_windows), opts.decay_windows);
    add("decay_detector_rejects_damped_control", !c.passed, c.slope, kMinLogSlope, c.diagnostic);
  }

  {
    PositionalSpec spec;
    spec.omega_base = opts.omega_base;
    spec.max_positions = 64;
    const PositionTermReport r = end_to_end_positional_term(spec, 64, opts.d_model);
    add("position_term_isolation", r.max_error <= 1e-10 && r.max_imag == 0.0, r.max_error, 1e-10,
        "max imag " + KeyValues::format_double(r.max_imag));
  }

  {
    double worst = 0.0;
    for (const auto& r : linear_equivalence_check({1, 2, 7, 64}, 16, opts.seed + 11)) worst = std::max(worst, r.rel_error);
    add("linear_quadratic_equivalence (T in {1,2,7,64})", worst <= 1e-10, worst, 1e-10);
  }

  {
    GradcheckOptions go;
    go.seed = opts.seed + 7;
    for (ScoreKind kind : kAllScoreKinds) {
      double worst = 0.0;
      std::string where;
      for (const auto& g : gradcheck_layer(kind, go))
        if (g.rel_error >= worst) {
          worst = g.rel_error;
          where = g.group;
        }
      add("gradcheck_layer/" + std::string(to_string(kind)), worst <= kGradTolerance, worst, kGradTolerance,
          "worst group " + where);
    }
    if (opts.model_gradients) {
      for (PositionalScheme scheme : kAllSchemes) {
        ModelConfig cfg;
        cfg.positional.scheme = scheme;
        double worst = 0.0;
        std::string where;
        for (const auto& g : gradcheck_model(cfg, go))
          if (g.rel_error >= worst) {
            worst = g.rel_error;
            where = g.group;
          }
        add("gradcheck_model/" + std::string(to_string(scheme)), worst <= kGradTolerance, worst, kGradTolerance,
            "worst group " + where);
      }
    }
  }

  rep.checks.push_back({"rope_decay_claim", true, 0.0, 0.0,
                        "the claim that rotary encodings decay concerns another method and is not asserted here",
                        true});
  return rep;
}

}  // namespace cope
