// Define-by-run reverse-mode autodiff over RealMatrix values.
//
// A Tape owns every intermediate produced during one forward pass. Each
// recorded node keeps its value, a lazily allocated gradient buffer, and a
// closure that pushes its gradient to its inputs. Parameters enter the tape as
// leaves; backward() adds d(loss)/d(value) into Parameter::grad, so running it
// twice without zero_grad() doubles every parameter gradient.

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "cope/matrix.hpp"

namespace cope {

/// Misuse of the autodiff API (e.g. backward on an untracked value).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Parameter {
  RealMatrix value;
  RealMatrix grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(RealMatrix v, bool is_trainable = true)
      : value(std::move(v)), grad(value.rows(), value.cols()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const RealMatrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const RealMatrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(RealMatrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a Parameter. Non-trainable parameters are treated as constants.
  Var parameter(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, p.trainable, p.trainable ? &p : nullptr, nullptr});
    return {this, nodes_.size() - 1};
  }

  Var record(RealMatrix value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backprop) : nullptr});
    return {this, nodes_.size() - 1};
  }

  Var record(RealMatrix value, const std::vector<Var>& inputs, Backprop backprop) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backprop) : nullptr});
    return {this, nodes_.size() - 1};
  }

  const RealMatrix& value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  bool requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  /// Gradient buffer for v, allocated on first use. Callers must check requires_grad.
  RealMatrix& grad(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty() && !n.value.empty()) n.grad = RealMatrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const RealMatrix& g) {
    if (!requires_grad(v)) return;
    grad(v) += g;
  }

  /// Reverse accumulation from a 1x1 loss into every trainable Parameter reached.
  void backward(Var loss) {
    if (loss.tape() != this) throw UsageError("backward: loss was not recorded on this tape");
    const Node& ln = nodes_[loss.id()];
    if (!ln.requires_grad) throw UsageError("backward: loss is not tape-tracked");
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw UsageError("backward: loss must be 1x1, got " + ln.value.shape_string());
    }
    for (Node& n : nodes_) n.grad = RealMatrix();
    grad(loss)(0, 0) = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) n.param->grad += n.grad;
      if (n.backprop) n.backprop(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    RealMatrix value;
    RealMatrix grad;
    bool requires_grad;
    Parameter* param;
    Backprop backprop;
  };

  void check_owned(Var v) const {
    if (v.tape() != this) throw UsageError("Var belongs to a different tape");
  }

  std::deque<Node> nodes_;
};

inline const RealMatrix& Var::value() const {
  if (tape_ == nullptr) throw UsageError("Var: uninitialized handle");
  return tape_->value(*this);
}

/// Differentiable operations. Each records one node.
namespace ad {

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(cope::matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const RealMatrix& g) {
                    if (t.requires_grad(a)) detail::gemm_nt_acc(g, b.value(), t.grad(a));
                    if (t.requires_grad(b)) detail::gemm_tn_acc(a.value(), g, t.grad(b));
                  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(cope::matmul_nt(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const RealMatrix& g) {
                    if (t.requires_grad(a)) detail::gemm_acc(g, b.value(), t.grad(a));
                    if (t.requires_grad(b)) detail::gemm_tn_acc(g, a.value(), t.grad(b));
                  });
}

/// a^T * b
inline Var matmul_tn(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(cope::matmul_tn(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const RealMatrix& g) {
                    if (t.requires_grad(a)) detail::gemm_nt_acc(b.value(), g, t.grad(a));
                    if (t.requires_grad(b)) detail::gemm_acc(a.value(), g, t.grad(b));
                  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const RealMatrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const RealMatrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.grad(b) -= g;
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

inline Var hadamard(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(cope::hadamard(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const RealMatrix& g) {
                    if (t.requires_grad(a)) t.grad(a) += cope::hadamard(g, b.value());
                    if (t.requires_grad(b)) t.grad(b) += cope::hadamard(g, a.value());
                  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const RealMatrix& g) {
    if (t.requires_grad(a)) t.grad(a) += g * s;
  });
}

/// Entrywise product with a constant mask (dropout, row masks).
inline Var mask(Var a, RealMatrix m) {
  Tape& t = *a.tape();
  RealMatrix out = cope::hadamard(a.value(), m);
  return t.record(std::move(out), {a}, [a, m = std::move(m)](Tape& t, const RealMatrix& g) {
    if (t.requires_grad(a)) t.grad(a) += cope::hadamard(g, m);
  });
}

/// x + 1 * bias, bias is 1 x cols.
inline Var add_bias(Var x, Var bias) {
  Tape& t = *x.tape();
  const RealMatrix& xv = x.value();
  const RealMatrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " for input " + xv.shape_string());
  }
  RealMatrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  return t.record(std::move(out), {x, bias}, [x, bias](Tape& t, const RealMatrix& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) {
      RealMatrix& gb = t.grad(bias);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.record(cope::transpose(a.value()), {a}, [a](Tape& t, const RealMatrix& g) {
    if (t.requires_grad(a)) t.grad(a) += cope::transpose(g);
  });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  return t.record(cope::slice_cols(a.value(), begin, count), {a},
                  [a, begin, count](Tape& t, const RealMatrix& g) {
                    if (!t.requires_grad(a)) return;
                    RealMatrix& ga = t.grad(a);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) += g(r, c);
                  });
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  return t.record(cope::slice_rows(a.value(), begin, count), {a},
                  [a, begin, count](Tape& t, const RealMatrix& g) {
                    if (!t.requires_grad(a)) return;
                    RealMatrix& ga = t.grad(a);
                    for (std::size_t r = 0; r < count; ++r)
                      for (std::size_t c = 0; c < g.cols(); ++c) ga(begin + r, c) += g(r, c);
                  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  RealMatrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const RealMatrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, const RealMatrix& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (t.requires_grad(p)) {
        RealMatrix& gp = t.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
      }
      off += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    rows += p.rows();
  }
  return t.record(RealMatrix(rows, cols, std::move(data)), parts,
                  [parts, cols](Tape& t, const RealMatrix& g) {
                    std::size_t off = 0;
                    for (const Var& p : parts) {
                      const std::size_t n = p.rows() * cols;
                      if (t.requires_grad(p)) {
                        RealMatrix& gp = t.grad(p);
                        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                      }
                      off += n;
                    }
                  });
}

/// Rows of `table` selected by `ids`; gradient scatters back.
inline Var gather_rows(Var table, const std::vector<std::size_t>& ids) {
  Tape& t = *table.tape();
  const RealMatrix& tv = table.value();
  RealMatrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[r]) + " >= " +
                              std::to_string(tv.rows()));
    }
    auto src = tv.row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return t.record(std::move(out), {table}, [table, ids](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(table)) return;
    RealMatrix& gt = t.grad(table);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gt(ids[r], c) += g(r, c);
  });
}

/// Score placed in masked key columns before softmax.
inline constexpr double kMaskedScore = -1e30;

/// Row softmax. Columns flagged in `masked_cols` are replaced by kMaskedScore
/// and receive no gradient.
inline Var softmax_rows(Var a, const std::vector<bool>& masked_cols = {}) {
  Tape& t = *a.tape();
  RealMatrix in = a.value();
  if (!masked_cols.empty()) {
    if (masked_cols.size() != in.cols()) throw DimensionError("softmax_rows: mask width mismatch");
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < in.cols(); ++c)
        if (masked_cols[c]) in(r, c) = kMaskedScore;
  }
  RealMatrix y = cope::softmax_rows(in);
  return t.record(y, {a}, [a, y, masked_cols](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(a)) return;
    RealMatrix& ga = t.grad(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) {
        if (!masked_cols.empty() && masked_cols[c]) continue;
        ga(r, c) += y(r, c) * (g(r, c) - dot);
      }
    }
  });
}

inline Var elu1(Var a) {
  Tape& t = *a.tape();
  RealMatrix y = cope::elu1(a.value());
  return t.record(y, {a}, [a, y](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(a)) return;
    RealMatrix& ga = t.grad(a);
    const RealMatrix& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (x[i] >= 0.0 ? 1.0 : y[i]);
  });
}

/// GELU, tanh approximation.
inline Var gelu(Var a) {
  Tape& t = *a.tape();
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  const RealMatrix& x = a.value();
  RealMatrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v)));
  }
  return t.record(std::move(y), {a}, [a](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(a)) return;
    RealMatrix& ga = t.grad(a);
    const RealMatrix& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double u = k * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * 0.044715 * v * v);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  Tape& t = *x.tape();
  const RealMatrix& xv = x.value();
  const std::size_t n = xv.cols();
  RealMatrix xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (double v : xv.row(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
  }
  const RealMatrix& gv = gain.value();
  const RealMatrix& bv = bias.value();
  RealMatrix y(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) y(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
  return t.record(std::move(y), {x, gain, bias},
                  [x, gain, bias, xhat, inv_std](Tape& t, const RealMatrix& g) {
                    const RealMatrix& gv = gain.value();
                    const std::size_t n = g.cols();
                    if (t.requires_grad(gain) || t.requires_grad(bias)) {
                      RealMatrix dg(1, n), db(1, n);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) {
                          dg(0, c) += g(r, c) * xhat(r, c);
                          db(0, c) += g(r, c);
                        }
                      t.accumulate(gain, dg);
                      t.accumulate(bias, db);
                    }
                    if (!t.requires_grad(x)) return;
                    RealMatrix& gx = t.grad(x);
                    std::vector<double> dxhat(n);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        dxhat[c] = g(r, c) * gv(0, c);
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat(r, c);
                      }
                      mean_d /= static_cast<double>(n);
                      mean_dx /= static_cast<double>(n);
                      for (std::size_t c = 0; c < n; ++c)
                        gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                    }
                  });
}

/// Weighted mean of rows: sum_r w[r] x[r] / sum_r w[r]. Result is 1 x cols.
inline Var mean_rows(Var x, const std::vector<double>& weights) {
  Tape& t = *x.tape();
  const RealMatrix& xv = x.value();
  if (weights.size() != xv.rows()) throw DimensionError("mean_rows: weight count mismatch");
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) throw DimensionError("mean_rows: weights sum to zero");
  RealMatrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(0, c) += weights[r] * xv(r, c) / total;
  return t.record(std::move(out), {x}, [x, weights, total](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(x)) return;
    RealMatrix& gx = t.grad(x);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += weights[r] * g(0, c) / total;
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(RealMatrix(1, 1, s), {a}, [a](Tape& t, const RealMatrix& g) {
    if (!t.requires_grad(a)) return;
    RealMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g(0, 0);
  });
}

/// sum(a .* w) for a constant weight matrix w.
inline Var weighted_sum(Var a, const RealMatrix& w) {
  Tape& t = *a.tape();
  const RealMatrix& av = a.value();
  if (!av.same_shape(w)) throw DimensionError("weighted_sum: weight shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * w[i];
  return t.record(RealMatrix(1, 1, s), {a}, [a, w](Tape& t, const RealMatrix& g) {
    if (t.requires_grad(a)) t.grad(a) += w * g(0, 0);
  });
}

/// Mean cross-entropy of row-wise logits against integer labels.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  Tape& t = *logits.tape();
  const RealMatrix& z = logits.value();
  if (labels.size() != z.rows()) throw DimensionError("cross_entropy: label count mismatch");
  RealMatrix probs = cope::softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] >= z.cols()) throw std::out_of_range("cross_entropy: label out of range");
    double mx = z(r, 0);
    for (double v : z.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z.row(r)) s += std::exp(v - mx);
    loss += mx + std::log(s) - z(r, labels[r]);
  }
  const double batch = static_cast<double>(z.rows());
  return t.record(RealMatrix(1, 1, loss / batch), {logits},
                  [logits, probs, labels, batch](Tape& t, const RealMatrix& g) {
                    if (!t.requires_grad(logits)) return;
                    RealMatrix d = probs;
                    for (std::size_t r = 0; r < d.rows(); ++r) d(r, labels[r]) -= 1.0;
                    t.grad(logits) += d * (g(0, 0) / batch);
                  });
}

/// x[r, c] / den[r, 0].
inline Var div_rows(Var x, Var den) {
  Tape& t = *x.tape();
  const RealMatrix& xv = x.value();
  const RealMatrix& dv = den.value();
  if (dv.rows() != xv.rows() || dv.cols() != 1) {
    throw DimensionError("div_rows: denominator " + dv.shape_string() + " for " + xv.shape_string());
  }
  RealMatrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / dv(r, 0);
  return t.record(std::move(out), {x, den}, [x, den](Tape& t, const RealMatrix& g) {
    const RealMatrix& xv = x.value();
    const RealMatrix& dv = den.value();
    if (t.requires_grad(x)) {
      RealMatrix& gx = t.grad(x);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c) / dv(r, 0);
    }
    if (t.requires_grad(den)) {
      RealMatrix& gd = t.grad(den);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) s += g(r, c) * xv(r, c);
        gd(r, 0) -= s / (dv(r, 0) * dv(r, 0));
      }
    }
  });
}

}  // namespace ad

using ad::operator+;
using ad::operator-;
}  // namespace cope
