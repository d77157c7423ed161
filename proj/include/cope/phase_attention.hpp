// Phase-aware attention over complex inputs.
//
// Queries and keys come from complex projections of z = z_re + i z_im:
//   Q = (W_re + i W_im) z = (z_re W_re - z_im W_im) + i (z_im W_re + z_re W_im)
// Scores are the Hermitian products A = Q K^*, mapped to real scores by a
// ScoreVariant, softmaxed, and applied to real values V = z_re W_v. The
// layer output is real.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/embeddings.hpp"
#include "cope/layers.hpp"
#include "cope/linear_attention.hpp"
#include "cope/matrix.hpp"
#include "cope/random.hpp"
#include "cope/score_variant.hpp"

namespace cope {

struct ComplexProjection {
  Parameter w_real;  // d_model x d_k
  Parameter w_imag;  // d_model x d_k

  ComplexProjection() = default;
  ComplexProjection(RealMatrix re, RealMatrix im) : w_real(std::move(re)), w_imag(std::move(im)) {
    if (!w_real.value.same_shape(w_imag.value))
      throw DimensionError("ComplexProjection: real and imaginary weights differ in shape");
  }

  ComplexMatrix weight() const { return {w_real.value, w_imag.value}; }
};

inline ComplexMatrix project_complex(const ComplexMatrix& z, const ComplexProjection& proj) {
  if (z.cols() != proj.w_real.value.rows()) {
    throw DimensionError("project_complex: input " + z.re.shape_string() + " for weight " +
                         proj.w_real.value.shape_string());
  }
  return cmatmul(z, proj.weight());
}

/// A = q k^* (one T_q x T_k complex score matrix).
inline ComplexMatrix complex_scores(const ComplexMatrix& q, const ComplexMatrix& k) {
  return hermitian_product(q, k);
}

/// Differentiable complex value as a pair of real tape nodes.
struct ComplexVar {
  Var re;
  Var im;
};

namespace ad {

inline ComplexVar project_complex(Binder& bind, Var z_re, Var z_im, ComplexProjection& proj) {
  Var wr = bind(proj.w_real), wi = bind(proj.w_imag);
  return {matmul(z_re, wr) - matmul(z_im, wi), matmul(z_im, wr) + matmul(z_re, wi)};
}

inline ComplexVar hermitian_product(ComplexVar q, ComplexVar k) {
  return {matmul_nt(q.re, k.re) + matmul_nt(q.im, k.im),
          matmul_nt(q.im, k.re) - matmul_nt(q.re, k.im)};
}

}  // namespace ad

struct PhaseAttentionLayer {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t d_k = 0;
  ScoreVariant variant;
  AttentionMode mode = AttentionMode::softmax;
  std::vector<ComplexProjection> q_proj;  // per head
  std::vector<ComplexProjection> k_proj;  // per head
  std::vector<Parameter> w_v;             // per head, d_model x d_k
  Parameter w_o;                          // d_model x d_model

  PhaseAttentionLayer() = default;
  PhaseAttentionLayer(std::size_t model_dim, std::size_t num_heads, ScoreVariant score_variant,
                      Rng& rng, AttentionMode attention_mode = AttentionMode::softmax)
      : d_model(model_dim), heads(num_heads), d_k(num_heads ? model_dim / num_heads : 0),
        variant(score_variant), mode(attention_mode) {
    if (num_heads == 0 || d_k * heads != d_model)
      throw ConfigError("phase attention: d_model must be divisible by heads");
    variant.validate();
    if (mode == AttentionMode::linear) detail::require_linear_variant(variant);
    for (std::size_t h = 0; h < heads; ++h) {
      q_proj.emplace_back(xavier_uniform(d_model, d_k, rng), xavier_uniform(d_model, d_k, rng));
      k_proj.emplace_back(xavier_uniform(d_model, d_k, rng), xavier_uniform(d_model, d_k, rng));
      w_v.emplace_back(xavier_uniform(d_model, d_k, rng));
    }
    w_o = Parameter(xavier_uniform(d_model, d_model, rng));
  }

  /// Real output (T x d_model). `weights_out` receives per-head attention
  /// weights in softmax mode.
  Var forward(Binder& bind, Var z_re, Var z_im, const std::vector<bool>& pad_mask,
              const ForwardMode& fmode, std::vector<RealMatrix>* weights_out = nullptr) {
    if (z_re.cols() != d_model || z_im.cols() != d_model || z_re.rows() != z_im.rows())
      throw DimensionError("phase attention: input width does not match d_model");
    const double s = 1.0 / std::sqrt(static_cast<double>(d_k));
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      ComplexVar q = ad::project_complex(bind, z_re, z_im, q_proj[h]);
      ComplexVar k = ad::project_complex(bind, z_re, z_im, k_proj[h]);
      Var v = ad::matmul(z_re, bind(w_v[h]));
      if (mode == AttentionMode::linear) {
        outs.push_back(ad::linear_phase_attend(q.re, q.im, k.re, k.im, v, pad_mask, variant));
        continue;
      }
      ComplexVar a = ad::hermitian_product(q, k);
      Var scores = ad::complex_to_real(a.re, a.im, variant, s, pad_mask);
      Var p = ad::softmax_rows(scores, pad_mask);
      if (weights_out) weights_out->push_back(p.value());
      p = dropout(p, fmode);
      outs.push_back(ad::matmul(p, v));
    }
    return ad::matmul(heads == 1 ? outs.front() : ad::concat_cols(outs), bind(w_o));
  }

  void collect(const std::string& prefix, NamedParameters& out) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      out.emplace_back(hp + ".q_real", &q_proj[h].w_real);
      out.emplace_back(hp + ".q_imag", &q_proj[h].w_imag);
      out.emplace_back(hp + ".k_real", &k_proj[h].w_real);
      out.emplace_back(hp + ".k_imag", &k_proj[h].w_imag);
      out.emplace_back(hp + ".w_v", &w_v[h]);
    }
    out.emplace_back(prefix + ".w_o", &w_o);
  }
};

/// Evaluation-mode forward of a single layer on an embedded sequence.
inline RealMatrix phase_attend(const EmbeddedBatch& z, PhaseAttentionLayer& layer,
                               std::vector<RealMatrix>* weights_out = nullptr) {
  Tape tape;
  Binder bind(tape);
  Var re = tape.constant(z.z.re);
  Var im = tape.constant(z.z.im);
  return layer.forward(bind, re, im, z.pad_mask, ForwardMode{}, weights_out).value();
}

}  // namespace cope
