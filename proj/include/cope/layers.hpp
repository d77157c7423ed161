// Real-valued transformer building blocks shared by every layer: parameter
// binding, dropout, layer norm, feed-forward, and standard multi-head
// attention (optionally with rotary position rotation on q and k).

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/embeddings.hpp"
#include "cope/random.hpp"

namespace cope {

using NamedParameters = std::vector<std::pair<std::string, Parameter*>>;

/// Binds each Parameter to a single leaf per tape.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(tape) {}

  Var operator()(Parameter& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    Var v = tape_.parameter(p);
    leaves_.emplace(&p, v);
    return v;
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::unordered_map<const Parameter*, Var> leaves_;
};

/// Per-forward switches. `rng` is only touched when training with dropout > 0.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool dropout_active() const { return training && dropout > 0.0 && rng != nullptr; }
};

/// Inverted dropout.
inline Var dropout(Var x, const ForwardMode& mode) {
  if (!mode.dropout_active()) return x;
  const double keep = 1.0 - mode.dropout;
  RealMatrix m(x.rows(), x.cols());
  for (double& v : m.data()) v = mode.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return ad::mask(x, std::move(m));
}

struct LayerNormParams {
  Parameter gain;
  Parameter bias;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t dim)
      : gain(RealMatrix(1, dim, 1.0)), bias(RealMatrix(1, dim, 0.0)) {}

  Var operator()(Binder& bind, Var x) { return ad::layer_norm(x, bind(gain), bind(bias)); }

  void collect(const std::string& prefix, NamedParameters& out) {
    out.emplace_back(prefix + ".gain", &gain);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

/// d_model -> 4 d_model -> d_model with GELU.
struct FeedForward {
  Parameter w1, b1, w2, b2;

  FeedForward() = default;
  FeedForward(std::size_t d_model, Rng& rng)
      : w1(xavier_uniform(d_model, 4 * d_model, rng)),
        b1(RealMatrix(1, 4 * d_model)),
        w2(xavier_uniform(4 * d_model, d_model, rng)),
        b2(RealMatrix(1, d_model)) {}

  Var operator()(Binder& bind, Var x) {
    Var h = ad::gelu(ad::add_bias(ad::matmul(x, bind(w1)), bind(b1)));
    return ad::add_bias(ad::matmul(h, bind(w2)), bind(b2));
  }

  void collect(const std::string& prefix, NamedParameters& out) {
    out.emplace_back(prefix + ".w1", &w1);
    out.emplace_back(prefix + ".b1", &b1);
    out.emplace_back(prefix + ".w2", &w2);
    out.emplace_back(prefix + ".b2", &b2);
  }
};

/// Scaled dot-product multi-head attention over real inputs.
struct StandardAttentionLayer {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t d_k = 0;
  bool rope = false;
  double omega_base = 10000.0;
  Parameter w_q, w_k, w_v, w_o;

  StandardAttentionLayer() = default;
  StandardAttentionLayer(std::size_t model_dim, std::size_t num_heads, Rng& rng)
      : d_model(model_dim), heads(num_heads), d_k(model_dim / num_heads) {
    if (num_heads == 0 || d_k * heads != d_model)
      throw ConfigError("attention: d_model must be divisible by heads");
    w_q = Parameter(xavier_uniform(d_model, d_model, rng));
    w_k = Parameter(xavier_uniform(d_model, d_model, rng));
    w_v = Parameter(xavier_uniform(d_model, d_model, rng));
    w_o = Parameter(xavier_uniform(d_model, d_model, rng));
  }

  Var forward(Binder& bind, Var x, const std::vector<std::size_t>& positions,
              const std::vector<bool>& pad_mask, const ForwardMode& mode,
              std::vector<RealMatrix>* weights_out = nullptr) {
    Var q = ad::matmul(x, bind(w_q));
    Var k = ad::matmul(x, bind(w_k));
    Var v = ad::matmul(x, bind(w_v));
    const double s = 1.0 / std::sqrt(static_cast<double>(d_k));
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = ad::slice_cols(q, h * d_k, d_k);
      Var kh = ad::slice_cols(k, h * d_k, d_k);
      if (rope) {
        qh = ad::rope_rotate(qh, positions, omega_base);
        kh = ad::rope_rotate(kh, positions, omega_base);
      }
      Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), s), pad_mask);
      if (weights_out) weights_out->push_back(p.value());
      p = dropout(p, mode);
      outs.push_back(ad::matmul(p, ad::slice_cols(v, h * d_k, d_k)));
    }
    return ad::matmul(heads == 1 ? outs.front() : ad::concat_cols(outs), bind(w_o));
  }

  void collect(const std::string& prefix, NamedParameters& out) {
    out.emplace_back(prefix + ".w_q", &w_q);
    out.emplace_back(prefix + ".w_k", &w_k);
    out.emplace_back(prefix + ".w_v", &w_v);
    out.emplace_back(prefix + ".w_o", &w_o);
  }
};

}  // namespace cope
