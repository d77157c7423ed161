// Input representations: the complex CoPE embedding (token content in the
// real part, scaled sinusoidal position in the imaginary part) and the real
// baselines (additive sinusoidal, learned, rotary, none).

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/matrix.hpp"

namespace cope {

enum class PositionalScheme { cope, additive_sinusoidal, learned, rope, none };

inline constexpr PositionalScheme kAllSchemes[] = {
    PositionalScheme::cope, PositionalScheme::additive_sinusoidal, PositionalScheme::learned,
    PositionalScheme::rope, PositionalScheme::none};

inline std::string_view to_string(PositionalScheme s) {
  switch (s) {
    case PositionalScheme::cope: return "cope";
    case PositionalScheme::additive_sinusoidal: return "additive_sinusoidal";
    case PositionalScheme::learned: return "learned";
    case PositionalScheme::rope: return "rope";
    case PositionalScheme::none: return "none";
  }
  return "?";
}

inline PositionalScheme parse_scheme(std::string_view s) {
  for (PositionalScheme p : kAllSchemes)
    if (to_string(p) == s) return p;
  if (s == "sinusoidal") return PositionalScheme::additive_sinusoidal;
  throw ConfigError("unknown positional scheme '" + std::string(s) + "'");
}

/// How the CoPE imaginary part is filled.
///   full_sinusoidal: interleaved sin/cos table (sin on even dims, cos on odd)
///   sin_only:        sin(p * omega) on every dim
enum class ImagMode { full_sinusoidal, sin_only };

inline std::string_view to_string(ImagMode m) {
  return m == ImagMode::full_sinusoidal ? "full_sinusoidal" : "sin_only";
}

inline ImagMode parse_imag_mode(std::string_view s) {
  if (s == "full_sinusoidal") return ImagMode::full_sinusoidal;
  if (s == "sin_only") return ImagMode::sin_only;
  throw ConfigError("unknown imag_mode '" + std::string(s) + "'");
}

struct PositionalSpec {
  PositionalScheme scheme = PositionalScheme::cope;
  double gamma = 1.0;
  double omega_base = 10000.0;
  std::size_t max_positions = 128;
  ImagMode imag_mode = ImagMode::full_sinusoidal;
  // Per-column frequencies for the CoPE imaginary part; empty means the
  // geometric schedule omega_base^(-2j/dim).
  std::vector<double> frequencies;

  void validate() const {
    if (scheme == PositionalScheme::cope && !(gamma > 0.0))
      throw ConfigError("cope: gamma must be > 0");
    if (!(omega_base > 0.0)) throw ConfigError("omega_base must be > 0");
    if (max_positions == 0) throw ConfigError("max_positions must be > 0");
  }
};

/// omega_j = base^(-2j/dim) for j in [0, dim/2).
inline std::vector<double> frequency_schedule(std::size_t dim, double omega_base) {
  std::vector<double> w(dim / 2);
  for (std::size_t j = 0; j < w.size(); ++j)
    w[j] = std::pow(omega_base, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
  return w;
}

/// Row p: [sin(p w_0), cos(p w_0), sin(p w_1), cos(p w_1), ...].
inline RealMatrix sinusoidal_table(std::size_t max_positions, std::size_t dim, double omega_base) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal_table: dim must be even, got " + std::to_string(dim));
  const auto w = frequency_schedule(dim, omega_base);
  RealMatrix t(max_positions, dim);
  for (std::size_t p = 0; p < max_positions; ++p)
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double angle = static_cast<double>(p) * w[j];
      t(p, 2 * j) = std::sin(angle);
      t(p, 2 * j + 1) = std::cos(angle);
    }
  return t;
}

inline void check_positions(std::size_t count, std::size_t max_positions) {
  if (count > max_positions) {
    throw std::out_of_range("sequence of length " + std::to_string(count) +
                            " exceeds max_positions " + std::to_string(max_positions));
  }
}

/// gamma-scaled imaginary part for positions 0..count-1.
inline RealMatrix cope_imaginary(const PositionalSpec& spec, std::size_t count, std::size_t dim) {
  check_positions(count, spec.max_positions);
  RealMatrix im(count, dim);
  if (spec.imag_mode == ImagMode::full_sinusoidal && spec.frequencies.empty()) {
    const RealMatrix table = sinusoidal_table(count, dim, spec.omega_base);
    for (std::size_t i = 0; i < table.size(); ++i) im[i] = spec.gamma * table[i];
    return im;
  }
  std::vector<double> w(dim);
  if (!spec.frequencies.empty()) {
    if (spec.frequencies.size() != dim)
      throw ConfigError("cope: frequencies override must list one frequency per dimension");
    w = spec.frequencies;
  } else {
    if (dim % 2 != 0) throw ConfigError("cope: dim must be even for the geometric schedule");
    const auto sched = frequency_schedule(dim, spec.omega_base);
    for (std::size_t c = 0; c < dim; ++c) w[c] = sched[c / 2];
  }
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t c = 0; c < dim; ++c) {
      const double angle = static_cast<double>(p) * w[c];
      const bool use_cos = spec.imag_mode == ImagMode::full_sinusoidal && c % 2 == 1;
      im(p, c) = spec.gamma * (use_cos ? std::cos(angle) : std::sin(angle));
    }
  return im;
}

struct TokenEmbeddingTable {
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  Parameter table;

  TokenEmbeddingTable() = default;
  explicit TokenEmbeddingTable(RealMatrix values, bool trainable = true)
      : vocab_size(values.rows()), dim(values.cols()), table(std::move(values), trainable) {}

  std::span<const double> lookup(std::size_t id) const {
    if (id >= vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " >= vocab_size " +
                              std::to_string(vocab_size));
    }
    return table.value.row(id);
  }
};

inline constexpr std::size_t kPadId = 0;

struct EmbeddedBatch {
  ComplexMatrix z;                   // tokens x dim; im is zero unless CoPE
  std::vector<std::size_t> positions;
  std::vector<bool> pad_mask;        // true where the token is padding
};

namespace detail {

inline EmbeddedBatch embed_tokens(const std::vector<std::size_t>& tokens,
                                  const TokenEmbeddingTable& table,
                                  const std::vector<std::size_t>* segment_ids,
                                  const TokenEmbeddingTable* segments) {
  EmbeddedBatch b;
  b.z = ComplexMatrix(tokens.size(), table.dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto row = table.lookup(tokens[i]);
    std::copy(row.begin(), row.end(), b.z.re.row(i).begin());
    b.positions.push_back(i);
    b.pad_mask.push_back(tokens[i] == kPadId);
  }
  if (segment_ids != nullptr && segments != nullptr) {
    if (segment_ids->size() != tokens.size())
      throw DimensionError("segment ids do not match token count");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto seg = segments->lookup((*segment_ids)[i]);
      for (std::size_t c = 0; c < table.dim; ++c) b.z.re(i, c) += seg[c];
    }
  }
  return b;
}

}  // namespace detail

/// z = E_vocab(x) [+ segment] + i * gamma * E_pos(pos).
inline EmbeddedBatch embed_cope(const std::vector<std::size_t>& tokens,
                                const TokenEmbeddingTable& table, const PositionalSpec& spec,
                                const std::vector<std::size_t>* segment_ids = nullptr,
                                const TokenEmbeddingTable* segments = nullptr) {
  if (spec.scheme != PositionalScheme::cope) throw ConfigError("embed_cope: scheme is not cope");
  check_positions(tokens.size(), spec.max_positions);
  EmbeddedBatch b = detail::embed_tokens(tokens, table, segment_ids, segments);
  if (spec.gamma != 0.0) b.z.im = cope_imaginary(spec, tokens.size(), table.dim);
  return b;
}

/// z.re = E_vocab(x) + positional vector, z.im = 0.
inline EmbeddedBatch embed_additive(const std::vector<std::size_t>& tokens,
                                    const TokenEmbeddingTable& table, const PositionalSpec& spec,
                                    const Parameter* learned_positions = nullptr,
                                    const std::vector<std::size_t>* segment_ids = nullptr,
                                    const TokenEmbeddingTable* segments = nullptr) {
  check_positions(tokens.size(), spec.max_positions);
  EmbeddedBatch b = detail::embed_tokens(tokens, table, segment_ids, segments);
  switch (spec.scheme) {
    case PositionalScheme::none:
    case PositionalScheme::rope:
      break;
    case PositionalScheme::additive_sinusoidal: {
      const RealMatrix pe = sinusoidal_table(tokens.size(), table.dim, spec.omega_base);
      b.z.re += pe;
      break;
    }
    case PositionalScheme::learned: {
      if (learned_positions == nullptr) throw ConfigError("embed_additive: learned table missing");
      for (std::size_t i = 0; i < tokens.size(); ++i)
        for (std::size_t c = 0; c < table.dim; ++c) b.z.re(i, c) += learned_positions->value(i, c);
      break;
    }
    case PositionalScheme::cope:
      throw ConfigError("embed_additive: use embed_cope for the cope scheme");
  }
  return b;
}

/// Rotates each (x_2j, x_2j+1) plane of row r by positions[r] * omega_j.
/// `sign` = -1 applies the inverse rotation.
inline RealMatrix rope_rotate(const RealMatrix& x, const std::vector<std::size_t>& positions,
                              double omega_base, double sign = 1.0) {
  if (x.cols() % 2 != 0) throw ConfigError("rope_rotate: head dim must be even");
  if (positions.size() != x.rows()) throw DimensionError("rope_rotate: position count mismatch");
  const auto w = frequency_schedule(x.cols(), omega_base);
  RealMatrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double angle = sign * static_cast<double>(positions[r]) * w[j];
      const double c = std::cos(angle), s = std::sin(angle);
      const double a = x(r, 2 * j), b = x(r, 2 * j + 1);
      out(r, 2 * j) = a * c - b * s;
      out(r, 2 * j + 1) = a * s + b * c;
    }
  return out;
}

namespace ad {

inline Var rope_rotate(Var x, const std::vector<std::size_t>& positions, double omega_base) {
  Tape& t = *x.tape();
  return t.record(cope::rope_rotate(x.value(), positions, omega_base), {x},
                  [x, positions, omega_base](Tape& t, const RealMatrix& g) {
                    if (t.requires_grad(x)) t.grad(x) += cope::rope_rotate(g, positions, omega_base, -1.0);
                  });
}

}  // namespace ad
}  // namespace cope
