#pragma once

// Small dense linear algebra: one-sided Jacobi SVD (Hestenes) for the
// matrices that appear per prompt (at most a few hundred rows, d columns).
// Economy form A = U diag(sigma) V^T with U m x r, V n x r, r = min(m, n),
// singular values sorted descending.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "icl/errors.hpp"
#include "icl/tensor.hpp"

namespace icl {

template <typename T>
struct Svd {
  Tensor<T> u;           // m x r
  std::vector<T> sigma;  // r, descending
  Tensor<T> v;           // n x r
};

namespace detail {

// Requires m >= n. Column rotations until all pairs are orthogonal.
template <typename T>
Svd<T> jacobi_svd_tall(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> w = a;  // columns get rotated in place
  Tensor<T> v({n, n});
  for (std::size_t j = 0; j < n; ++j) v.at(j, j) = T(1);

  const T tol = T(1e-14);
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        T alpha = T(0), beta = T(0), gamma = T(0);
        for (std::size_t i = 0; i < m; ++i) {
          const T wp = w.at(i, p), wq = w.at(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == T(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const T zeta = (beta - alpha) / (T(2) * gamma);
        const T t = (zeta >= T(0) ? T(1) : T(-1)) / (std::abs(zeta) + std::sqrt(T(1) + zeta * zeta));
        const T c = T(1) / std::sqrt(T(1) + t * t);
        const T s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const T wp = w.at(i, p), wq = w.at(i, q);
          w.at(i, p) = c * wp - s * wq;
          w.at(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const T vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = c * vp - s * vq;
          v.at(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  Svd<T> out;
  out.sigma.resize(n);
  out.u = Tensor<T>({m, n});
  out.v = std::move(v);
  for (std::size_t j = 0; j < n; ++j) {
    T norm2 = T(0);
    for (std::size_t i = 0; i < m; ++i) norm2 += w.at(i, j) * w.at(i, j);
    const T sigma = std::sqrt(norm2);
    out.sigma[j] = sigma;
    if (sigma > T(0)) {
      const T inv = T(1) / sigma;
      for (std::size_t i = 0; i < m; ++i) out.u.at(i, j) = w.at(i, j) * inv;
    }
  }
  // sort descending by sigma
  std::vector<std::size_t> idx(n);
  for (std::size_t j = 0; j < n; ++j) idx[j] = j;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t x, std::size_t y) { return out.sigma[x] > out.sigma[y]; });
  Svd<T> sorted;
  sorted.sigma.resize(n);
  sorted.u = Tensor<T>({m, n});
  sorted.v = Tensor<T>({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    sorted.sigma[j] = out.sigma[idx[j]];
    for (std::size_t i = 0; i < m; ++i) sorted.u.at(i, j) = out.u.at(i, idx[j]);
    for (std::size_t i = 0; i < n; ++i) sorted.v.at(i, j) = out.v.at(i, idx[j]);
  }
  return sorted;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace detail

template <typename T>
Svd<T> jacobi_svd(const Tensor<T>& a) {
  if (a.rank() != 2 || a.numel() == 0) throw ShapeError("jacobi_svd: expected non-empty 2-D tensor");
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall(a);
  Svd<T> t = detail::jacobi_svd_tall(detail::transpose(a));
  return Svd<T>{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

// Solves X w ~ y through the SVD. lambda > 0 applies ridge filter factors
// sigma/(sigma^2 + lambda); lambda == 0 is the pseudoinverse with singular
// values below cutoff_rel * sigma_max treated as zero (min-norm solution).
template <typename T>
std::vector<T> svd_solve(const Tensor<T>& x, const std::vector<T>& y, T lambda,
                         T cutoff_rel = T(1e-10)) {
  const std::size_t m = x.rows(), n = x.cols();
  if (y.size() != m) {
    throw ShapeError("svd_solve: rhs length " + std::to_string(y.size()) + " != rows " +
                     std::to_string(m));
  }
  Svd<T> svd = jacobi_svd(x);
  const std::size_t r = svd.sigma.size();
  const T smax = r ? svd.sigma[0] : T(0);
  std::vector<T> uty(r, T(0));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < m; ++i) uty[j] += svd.u.at(i, j) * y[i];
  for (std::size_t j = 0; j < r; ++j) {
    const T s = svd.sigma[j];
    T f = T(0);
    if (lambda > T(0)) {
      f = s / (s * s + lambda);
    } else if (smax > T(0) && s > cutoff_rel * smax) {
      f = T(1) / s;
    }
    uty[j] *= f;
  }
  std::vector<T> w(n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r; ++j) w[i] += svd.v.at(i, j) * uty[j];
  return w;
}

}  // namespace icl
