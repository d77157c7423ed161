// Central-difference gradient oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "cope/autodiff.hpp"
#include "cope/matrix.hpp"

namespace cope {

/// (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) for every entry i of p.value.
/// p.value is restored bit-exactly afterwards.
inline RealMatrix finite_diff_grad(const std::function<double()>& f, Parameter& p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  RealMatrix g(p.value.rows(), p.value.cols());
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double saved = p.value[i];
    p.value[i] = saved + eps;
    const double up = f();
    p.value[i] = saved - eps;
    const double down = f();
    p.value[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// ||a - b||_inf / max(||a||_inf, ||b||_inf, floor).
inline double relative_error(const RealMatrix& a, const RealMatrix& b, double floor = 1e-10) {
  const double scale = std::max({max_abs(a), max_abs(b), floor});
  return max_abs_diff(a, b) / scale;
}

}  // namespace cope
