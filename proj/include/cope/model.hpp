// Sequence classifier: embeddings, a first attention layer (phase-aware for
// CoPE, standard otherwise), standard layers 2..L, mean pooling and a linear
// head. Blocks are pre-norm with a GELU feed-forward.

#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/checkpoint.hpp"
#include "cope/embeddings.hpp"
#include "cope/kv.hpp"
#include "cope/layers.hpp"
#include "cope/linear_attention.hpp"
#include "cope/phase_attention.hpp"
#include "cope/random.hpp"
#include "cope/score_variant.hpp"
#include "cope/tasks.hpp"

namespace cope {

enum class Pooling { mean, cls };

inline std::string_view to_string(Pooling p) { return p == Pooling::mean ? "mean" : "cls"; }

inline Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::mean;
  if (s == "cls") return Pooling::cls;
  throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t vocab_size = 16;
  std::size_t num_classes = 2;
  std::size_t segment_vocab = 0;  // 0 disables segment embeddings
  double dropout = 0.2;
  PositionalSpec positional;
  ScoreVariant variant;
  AttentionMode attention_mode = AttentionMode::softmax;
  Pooling pooling = Pooling::mean;
  std::uint64_t seed = 0;

  std::size_t d_k() const { return heads ? d_model / heads : 0; }
  std::size_t max_positions() const { return positional.max_positions; }

  void validate() const {
    if (layers == 0) throw ConfigError("model: layers must be >= 1");
    if (heads == 0 || d_k() * heads != d_model)
      throw ConfigError("model: d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    if (d_model % 2 != 0) throw ConfigError("model: d_model must be even");
    if (vocab_size == 0) throw ConfigError("model: vocab_size must be > 0");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
    positional.validate();
    variant.validate();
    if (positional.scheme == PositionalScheme::rope && d_k() % 2 != 0)
      throw ConfigError("model: rope needs an even head dimension");
    if (attention_mode == AttentionMode::linear) {
      if (positional.scheme != PositionalScheme::cope)
        throw ConfigError("model: linear attention mode is only available for the cope scheme");
      detail::require_linear_variant(variant);
    }
  }

  /// 2 layers, 4 heads, 64-d, 128 positions.
  static ModelConfig desk() { return ModelConfig{}; }

  /// 6 layers, 8 heads, 256-d, 512 positions.
  static ModelConfig paper() {
    ModelConfig c;
    c.layers = 6;
    c.heads = 8;
    c.d_model = 256;
    c.positional.max_positions = 512;
    return c;
  }

  static ModelConfig preset(std::string_view name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
  }

  void write(KeyValues& kv) const {
    kv.set("model.layers", std::uint64_t{layers});
    kv.set("model.heads", std::uint64_t{heads});
    kv.set("model.d_model", std::uint64_t{d_model});
    kv.set("model.vocab_size", std::uint64_t{vocab_size});
    kv.set("model.num_classes", std::uint64_t{num_classes});
    kv.set("model.segment_vocab", std::uint64_t{segment_vocab});
    kv.set("model.dropout", dropout);
    kv.set("model.pooling", std::string(to_string(pooling)));
    kv.set("model.seed", std::uint64_t{seed});
    kv.set("model.attention_mode", std::string(to_string(attention_mode)));
    kv.set("positional.scheme", std::string(to_string(positional.scheme)));
    kv.set("positional.gamma", positional.gamma);
    kv.set("positional.omega_base", positional.omega_base);
    kv.set("positional.max_positions", std::uint64_t{positional.max_positions});
    kv.set("positional.imag_mode", std::string(to_string(positional.imag_mode)));
    kv.set("variant.kind", std::string(to_string(variant.kind)));
    kv.set("variant.alpha", variant.alpha);
    kv.set("variant.phase_eps", variant.phase_eps);
  }

  /// Reads the keys written by write(); missing keys keep the current values.
  void read(const KeyValues& kv) {
    layers = kv.get_uint("model.layers", layers);
    heads = kv.get_uint("model.heads", heads);
    d_model = kv.get_uint("model.d_model", d_model);
    vocab_size = kv.get_uint("model.vocab_size", vocab_size);
    num_classes = kv.get_uint("model.num_classes", num_classes);
    segment_vocab = kv.get_uint("model.segment_vocab", segment_vocab);
    dropout = kv.get_double("model.dropout", dropout);
    pooling = parse_pooling(kv.get_or("model.pooling", std::string(to_string(pooling))));
    seed = kv.get_uint("model.seed", seed);
    attention_mode = parse_attention_mode(kv.get_or("model.attention_mode", std::string(to_string(attention_mode))));
    positional.scheme = parse_scheme(kv.get_or("positional.scheme", std::string(to_string(positional.scheme))));
    positional.gamma = kv.get_double("positional.gamma", positional.gamma);
    positional.omega_base = kv.get_double("positional.omega_base", positional.omega_base);
    positional.max_positions = kv.get_uint("positional.max_positions", positional.max_positions);
    positional.imag_mode = parse_imag_mode(kv.get_or("positional.imag_mode", std::string(to_string(positional.imag_mode))));
    variant.kind = parse_score_kind(kv.get_or("variant.kind", std::string(to_string(variant.kind))));
    variant.alpha = kv.get_double("variant.alpha", variant.alpha);
    variant.phase_eps = kv.get_double("variant.phase_eps", variant.phase_eps);
  }
};

/// Bookkeeping from one forward pass.
struct ForwardTrace {
  std::size_t complex_input_layers = 0;
  std::vector<RealMatrix> attention;  // layer-major, head-minor
};

class TransformerModel {
 public:
  explicit TransformerModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t d = config_.d_model;
    tokens_ = TokenEmbeddingTable(normal_matrix(config_.vocab_size, d, 0.02, rng));
    if (config_.segment_vocab > 0) segments_ = TokenEmbeddingTable(normal_matrix(config_.segment_vocab, d, 0.02, rng));
    if (config_.positional.scheme == PositionalScheme::learned)
      learned_pos_ = Parameter(normal_matrix(config_.positional.max_positions, d, 0.02, rng));
    if (config_.positional.scheme == PositionalScheme::cope) {
      phase_ = PhaseAttentionLayer(d, config_.heads, config_.variant, rng, config_.attention_mode);
    }
    for (std::size_t l = 0; l < config_.layers; ++l) {
      if (l > 0 || config_.positional.scheme != PositionalScheme::cope) {
        StandardAttentionLayer layer(d, config_.heads, rng);
        layer.rope = config_.positional.scheme == PositionalScheme::rope;
        layer.omega_base = config_.positional.omega_base;
        standard_.push_back(std::move(layer));
      }
      ln_attn_.emplace_back(d);
      ln_ff_.emplace_back(d);
      ff_.emplace_back(d, rng);
    }
    ln_final_ = LayerNormParams(d);
    head_w_ = Parameter(xavier_uniform(d, config_.num_classes, rng));
    head_b_ = Parameter(RealMatrix(1, config_.num_classes));
  }

  const ModelConfig& config() const { return config_; }

  /// Logits (1 x num_classes) for one example.
  Var forward(Binder& bind, const Example& ex, const ForwardMode& mode, ForwardTrace* trace = nullptr) {
    const std::size_t n = ex.tokens.size();
    if (n == 0) throw std::invalid_argument("forward: empty sequence");
    check_positions(n, config_.positional.max_positions);
    if (trace) *trace = ForwardTrace{};
    std::vector<std::size_t> positions(n);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::vector<bool> pad(n);
    std::vector<double> keep(n);
    bool any_real = false;
    for (std::size_t i = 0; i < n; ++i) {
      pad[i] = ex.tokens[i] == kPadId;
      keep[i] = pad[i] ? 0.0 : 1.0;
      any_real = any_real || !pad[i];
    }
    if (!any_real) keep.assign(n, 1.0);

    Var x = ad::gather_rows(bind(tokens_.table), ex.tokens);
    if (segments_ && !ex.segment_ids.empty()) {
      if (ex.segment_ids.size() != n) throw DimensionError("forward: segment ids do not match tokens");
      x = x + ad::gather_rows(bind(segments_->table), ex.segment_ids);
    }
    const PositionalScheme scheme = config_.positional.scheme;
    if (scheme == PositionalScheme::additive_sinusoidal) {
      x = x + bind.tape().constant(sinusoidal_table(n, config_.d_model, config_.positional.omega_base));
    } else if (scheme == PositionalScheme::learned) {
      x = x + ad::gather_rows(bind(*learned_pos_), positions);
    }
    x = dropout(x, mode);

    std::vector<RealMatrix>* weights = trace ? &trace->attention : nullptr;
    std::size_t next_standard = 0;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      Var h = ln_attn_[l](bind, x);
      Var a;
      if (l == 0 && phase_) {
        // the only complex-input layer; its output is real
        Var z_im = bind.tape().constant(cope_imaginary(config_.positional, n, config_.d_model));
        a = phase_->forward(bind, h, z_im, pad, mode, weights);
        if (trace) ++trace->complex_input_layers;
      } else {
        a = standard_[next_standard++].forward(bind, h, positions, pad, mode, weights);
      }
      x = x + dropout(a, mode);
      x = x + dropout(ff_[l](bind, ln_ff_[l](bind, x)), mode);
    }
    x = ln_final_(bind, x);
    Var pooled = config_.pooling == Pooling::mean ? ad::mean_rows(x, keep) : ad::slice_rows(x, 0, 1);
    return ad::add_bias(ad::matmul(pooled, bind(head_w_)), bind(head_b_));
  }

  /// Batch logits (batch x num_classes) on one tape.
  Var forward(Binder& bind, const std::vector<const Example*>& batch, const ForwardMode& mode) {
    std::vector<Var> rows;
    rows.reserve(batch.size());
    for (const Example* ex : batch) rows.push_back(forward(bind, *ex, mode));
    return rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  }

  /// Evaluation-mode logits for a list of examples.
  RealMatrix logits(const std::vector<Example>& examples) {
    RealMatrix out(examples.size(), config_.num_classes);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      Tape tape;
      Binder bind(tape);
      const RealMatrix& row = forward(bind, examples[i], ForwardMode{}).value();
      for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = row(0, c);
    }
    return out;
  }

  NamedParameters named_parameters() {
    NamedParameters out;
    out.emplace_back("embed.tokens", &tokens_.table);
    if (segments_) out.emplace_back("embed.segments", &segments_->table);
    if (learned_pos_) out.emplace_back("embed.positions", &*learned_pos_);
    std::size_t next_standard = 0;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      if (l == 0 && phase_)
        phase_->collect(p + ".attn", out);
      else
        standard_[next_standard++].collect(p + ".attn", out);
      ln_attn_[l].collect(p + ".ln_attn", out);
      ln_ff_[l].collect(p + ".ln_ff", out);
      ff_[l].collect(p + ".ff", out);
    }
    ln_final_.collect("final_ln", out);
    out.emplace_back("head.w", &head_w_);
    out.emplace_back("head.b", &head_b_);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto& [name, p] : named_parameters()) total += p->value.size();
    return total;
  }

  PhaseAttentionLayer* phase_layer() { return phase_ ? &*phase_ : nullptr; }
  TokenEmbeddingTable& token_table() { return tokens_; }

  /// Parameters as checkpoint blobs named "param/<name>".
  void write_parameters(Checkpoint& ck) {
    for (auto& [name, p] : named_parameters()) ck.blobs.emplace_back("param/" + name, p->value);
  }

  /// Restores every parameter; any missing or misshapen blob is an error.
  void read_parameters(const Checkpoint& ck) {
    for (auto& [name, p] : named_parameters()) {
      const RealMatrix* m = ck.find("param/" + name);
      if (!m) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
      if (!m->same_shape(p->value)) {
        throw CheckpointError("checkpoint parameter '" + name + "' has shape " + m->shape_string() +
                              ", model expects " + p->value.shape_string());
      }
      p->value = *m;
    }
  }

 private:
  ModelConfig config_;
  TokenEmbeddingTable tokens_;
  std::optional<TokenEmbeddingTable> segments_;
  std::optional<Parameter> learned_pos_;
  std::optional<PhaseAttentionLayer> phase_;
  std::vector<StandardAttentionLayer> standard_;
  std::vector<LayerNormParams> ln_attn_;
  std::vector<LayerNormParams> ln_ff_;
  std::vector<FeedForward> ff_;
  LayerNormParams ln_final_;
  Parameter head_w_;
  Parameter head_b_;
};

inline void save_model(const std::string& path, TransformerModel& model, const KeyValues& metadata = {}) {
  Checkpoint ck;
  model.config().write(ck.config);
  ck.metadata = metadata;
  model.write_parameters(ck);
  save_checkpoint(path, ck);
}

inline TransformerModel load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg;
  cfg.read(ck.config);
  TransformerModel model(cfg);
  model.read_parameters(ck);
  return model;
}

// ---------------------------------------------------------------------------
// Operation accounting for the position machinery.

struct OpCount {
  std::uint64_t complex_mults = 0;
  std::uint64_t real_mults = 0;
  std::uint64_t rotations = 0;

  bool operator==(const OpCount&) const = default;
};

/// Exact ratio num/den in lowest terms.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

inline Ratio make_ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw std::invalid_argument("ratio with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

struct PositionOps {
  OpCount rope;
  OpCount cope;
  Ratio rope_over_cope;  // real multiplications
};

/// Tallies for one forward pass over `batch` sequences of length `seq_len`.
///   RoPE: every layer rotates the d_k/2 planes of q and k in every head,
///         L*H*T*d_k plane rotations at 4 real multiplications each.
///   CoPE: layer 1 projects complex z to complex Q and K, 2*H*T*d_model*d_k
///         complex multiplications at 4 real multiplications each.
/// Score-matrix (T^2) terms are common to both and excluded.
inline PositionOps count_ops(const ModelConfig& config, std::size_t seq_len, std::size_t batch = 1) {
  config.validate();
  const std::uint64_t L = config.layers, H = config.heads, T = seq_len, N = batch;
  const std::uint64_t dk = config.d_k(), d = config.d_model;
  PositionOps ops;
  ops.rope.rotations = N * L * H * T * dk;
  ops.rope.real_mults = 4 * ops.rope.rotations;
  ops.cope.complex_mults = N * 2 * H * T * d * dk;
  ops.cope.real_mults = 4 * ops.cope.complex_mults;
  ops.rope_over_cope = make_ratio(ops.rope.real_mults, ops.cope.real_mults);
  return ops;
}

}  // namespace cope
