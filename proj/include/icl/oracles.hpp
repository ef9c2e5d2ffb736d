#pragma once

// Closed-form per-prompt baselines: minimum-norm ordinary least squares and
// ridge regression fitted on the demonstrations of a prefix.
//
// Demonstrations are brought into a canonical (lexicographic) order before the
// solve; both oracles are therefore bit-exactly permutation invariant.

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <numeric>
#include <vector>

#include "icl/errors.hpp"
#include "icl/linalg.hpp"
#include "icl/taskgen.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct RidgeConfig {
  double lambda = 1.0;

  void validate() const {
    if (lambda < 0.0) throw ConfigError("ridge: lambda must be >= 0");
  }
};

namespace detail {

template <typename T>
std::vector<std::size_t> canonical_demo_order(const PromptPrefix<T>& prefix) {
  std::vector<std::size_t> idx(prefix.i);
  std::iota(idx.begin(), idx.end(), 0u);
  const std::size_t d = prefix.d();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const T* xa = prefix.demo_x(a);
    const T* xb = prefix.demo_x(b);
    for (std::size_t c = 0; c < d; ++c) {
      if (xa[c] != xb[c]) return xa[c] < xb[c];
    }
    return prefix.demo_y(a) < prefix.demo_y(b);
  });
  return idx;
}

template <typename T>
void design_matrix(const PromptPrefix<T>& prefix, Tensor<T>* x, std::vector<T>* y) {
  const std::size_t d = prefix.d();
  const auto order = canonical_demo_order(prefix);
  *x = Tensor<T>({prefix.i, d});
  y->resize(prefix.i);
  for (std::size_t r = 0; r < prefix.i; ++r) {
    const T* xr = prefix.demo_x(order[r]);
    for (std::size_t c = 0; c < d; ++c) x->at(r, c) = xr[c];
    (*y)[r] = prefix.demo_y(order[r]);
  }
}

#ifndef NDEBUG
// Normal-equation residual of a ridge solve, checked in debug builds.
template <typename T>
T ridge_residual_norm(const Tensor<T>& x, const std::vector<T>& y, const std::vector<T>& w,
                      T lambda) {
  const std::size_t m = x.rows(), d = x.cols();
  std::vector<T> xw(m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) xw[i] += x.at(i, c) * w[c];
  T norm2 = T(0);
  for (std::size_t c = 0; c < d; ++c) {
    T r = lambda * w[c];
    for (std::size_t i = 0; i < m; ++i) r += x.at(i, c) * (xw[i] - y[i]);
    norm2 += r * r;
  }
  return std::sqrt(norm2);
}
#endif

}  // namespace detail

// Minimum-norm least squares over the demonstrations, evaluated at the query;
// an empty prefix predicts 0.
template <typename T>
T ols_predict(const PromptPrefix<T>& prefix) {
  if (prefix.i == 0) return T(0);
  Tensor<T> x;
  std::vector<T> y;
  detail::design_matrix(prefix, &x, &y);
  const std::vector<T> w = svd_solve(x, y, T(0));
  return dot(w.data(), prefix.query_x(), prefix.d());
}

// Ridge regression (X^T X + lambda I)^-1 X^T y via SVD filter factors;
// lambda == 0 falls back to the minimum-norm OLS solution.
template <typename T>
T ridge_predict(const PromptPrefix<T>& prefix, const RidgeConfig& cfg) {
  cfg.validate();
  if (prefix.i == 0) return T(0);
  Tensor<T> x;
  std::vector<T> y;
  detail::design_matrix(prefix, &x, &y);
  const std::vector<T> w = svd_solve(x, y, static_cast<T>(cfg.lambda));
#ifndef NDEBUG
  if (cfg.lambda > 0.0) {
    assert(detail::ridge_residual_norm(x, y, w, static_cast<T>(cfg.lambda)) <= T(1e-8));
  }
#endif
  return dot(w.data(), prefix.query_x(), prefix.d());
}

}  // namespace icl
