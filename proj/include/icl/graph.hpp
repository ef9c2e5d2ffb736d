#pragma once

// Reverse-mode autodiff on a tape of dense tensors.
//
// A Graph owns the tape: nodes are appended in topological order during the
// forward pass, each carrying its output value and a backward closure that
// accumulates into the gradients of its inputs. One backward pass per tape;
// a second call is an error. Every primitive verifies its output is finite
// and reports the (scoped) op label when it is not, so numeric failures name
// the layer that produced them.
//
// All reductions run in a fixed ascending order: identical inputs give
// bit-identical values and gradients within one build.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "icl/errors.hpp"
#include "icl/kernels.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

template <typename T>
T gelu_scalar(T x) {
  const double xd = static_cast<double>(x);
  return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd / std::numbers::sqrt2)));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const double xd = static_cast<double>(x);
  const double cdf = 0.5 * (1.0 + std::erf(xd / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014326779399460599343818684;
  return static_cast<T>(cdf + xd * pdf);
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  Graph() { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- leaves ---------------------------------------------------------

  Var leaf(Tensor<T> value, bool requires_grad, std::string label = "leaf") {
    return push(std::move(value), {}, requires_grad, nullptr, std::move(label));
  }

  Var constant(Tensor<T> value, std::string label = "const") {
    return leaf(std::move(value), false, std::move(label));
  }

  // Label prefix applied to ops created while the scope is set.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  // ---- access ---------------------------------------------------------

  const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() w.r.t. v; zeros if v never contributed.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.numel() == 0) return Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- primitives ------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor<T>&A = v(a), &B = v(b);
    require_2d(A, "matmul lhs");
    require_2d(B, "matmul rhs");
    if (A.cols() != B.rows()) {
      throw ShapeError("matmul: inner dimensions disagree, " + A.shape_str() + " * " + B.shape_str());
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> out({m, n});
    kernels::mm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), {a.id, b.id}, needs(a) || needs(b),
                [m, k, n](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const int ia = g.nodes_[id].inputs[0], ib = g.nodes_[id].inputs[1];
                  if (g.nodes_[ia].requires_grad) {
                    Tensor<T> da({m, k});
                    kernels::mm_nt(go.data.data(), g.nodes_[ib].value.data.data(), da.data.data(), m, n, k);
                    g.accumulate(ia, da);
                  }
                  if (g.nodes_[ib].requires_grad) {
                    Tensor<T> db({k, n});
                    kernels::mm_tn(g.nodes_[ia].value.data.data(), go.data.data(), db.data.data(), m, k, n);
                    g.accumulate(ib, db);
                  }
                },
                scoped("matmul"));
  }

  // C = A * B^T (B stored row-major as n x k).
  Var matmul_nt(Var a, Var b) {
    const Tensor<T>&A = v(a), &B = v(b);
    require_2d(A, "matmul_nt lhs");
    require_2d(B, "matmul_nt rhs");
    if (A.cols() != B.cols()) {
      throw ShapeError("matmul_nt: inner dimensions disagree, " + A.shape_str() + " * " + B.shape_str() + "^T");
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor<T> out({m, n});
    kernels::mm_nt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), {a.id, b.id}, needs(a) || needs(b),
                [m, k, n](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const int ia = g.nodes_[id].inputs[0], ib = g.nodes_[id].inputs[1];
                  if (g.nodes_[ia].requires_grad) {
                    Tensor<T> da({m, k});
                    kernels::mm_nn(go.data.data(), g.nodes_[ib].value.data.data(), da.data.data(), m, n, k);
                    g.accumulate(ia, da);
                  }
                  if (g.nodes_[ib].requires_grad) {
                    Tensor<T> db({n, k});
                    kernels::mm_tn(go.data.data(), g.nodes_[ia].value.data.data(), db.data.data(), m, n, k);
                    g.accumulate(ib, db);
                  }
                },
                scoped("matmul_nt"));
  }

  Var add(Var a, Var b) {
    const Tensor<T>&A = v(a), &B = v(b);
    check_same_shape(A, B, "add");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), {a.id, b.id}, needs(a) || needs(b),
                [](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  g.accumulate(g.nodes_[id].inputs[0], go);
                  g.accumulate(g.nodes_[id].inputs[1], go);
                },
                scoped("add"));
  }

  // a (m x n) + row vector b (n), broadcast over rows.
  Var add_rowvec(Var a, Var b) {
    const Tensor<T>&A = v(a), &B = v(b);
    require_2d(A, "add_rowvec lhs");
    if (B.numel() != A.cols()) {
      throw ShapeError("add_rowvec: row vector " + B.shape_str() + " does not match " + A.shape_str());
    }
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += B.data[j];
    return push(std::move(out), {a.id, b.id}, needs(a) || needs(b),
                [m, n](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const int ia = g.nodes_[id].inputs[0], ib = g.nodes_[id].inputs[1];
                  if (g.nodes_[ia].requires_grad) g.accumulate(ia, go);
                  if (g.nodes_[ib].requires_grad) {
                    Tensor<T>& gb = g.ensure_grad(ib);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb.data[j] += go.data[i * n + j];
                  }
                },
                scoped("add_rowvec"));
  }

  Var sub_const(Var a, const Tensor<T>& c) {
    const Tensor<T>& A = v(a);
    check_same_shape(A, c, "sub_const");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= c.data[i];
    return push(std::move(out), {a.id}, needs(a),
                [](Graph& g, int id) { g.accumulate(g.nodes_[id].inputs[0], g.nodes_[id].grad); },
                scoped("sub_const"));
  }

  Var mul(Var a, Var b) {
    const Tensor<T>&A = v(a), &B = v(b);
    check_same_shape(A, B, "mul");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
    return push(std::move(out), {a.id, b.id}, needs(a) || needs(b),
                [](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const int ia = g.nodes_[id].inputs[0], ib = g.nodes_[id].inputs[1];
                  if (g.nodes_[ia].requires_grad) {
                    Tensor<T> da = go;
                    const Tensor<T>& B = g.nodes_[ib].value;
                    for (std::size_t i = 0; i < da.numel(); ++i) da.data[i] *= B.data[i];
                    g.accumulate(ia, da);
                  }
                  if (g.nodes_[ib].requires_grad) {
                    Tensor<T> db = go;
                    const Tensor<T>& A = g.nodes_[ia].value;
                    for (std::size_t i = 0; i < db.numel(); ++i) db.data[i] *= A.data[i];
                    g.accumulate(ib, db);
                  }
                },
                scoped("mul"));
  }

  Var scale(Var a, T s) {
    Tensor<T> out = v(a);
    for (auto& x : out.data) x *= s;
    return push(std::move(out), {a.id}, needs(a),
                [s](Graph& g, int id) {
                  if (!g.nodes_[g.nodes_[id].inputs[0]].requires_grad) return;
                  Tensor<T> da = g.nodes_[id].grad;
                  for (auto& x : da.data) x *= s;
                  g.accumulate(g.nodes_[id].inputs[0], da);
                },
                scoped("scale"));
  }

  Var relu(Var a) {
    Tensor<T> out = v(a);
    for (auto& x : out.data) x = x > T(0) ? x : T(0);
    return push(std::move(out), {a.id}, needs(a),
                [](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  Tensor<T> da = g.nodes_[id].grad;
                  const Tensor<T>& x = g.nodes_[ia].value;
                  for (std::size_t i = 0; i < da.numel(); ++i)
                    if (!(x.data[i] > T(0))) da.data[i] = T(0);
                  g.accumulate(ia, da);
                },
                scoped("relu"));
  }

  // Exact Gaussian-CDF GELU, x * Phi(x); not the tanh approximation.
  Var gelu(Var a) {
    Tensor<T> out = v(a);
    for (auto& x : out.data) x = detail::gelu_scalar(x);
    return push(std::move(out), {a.id}, needs(a),
                [](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  Tensor<T> da = g.nodes_[id].grad;
                  const Tensor<T>& x = g.nodes_[ia].value;
                  for (std::size_t i = 0; i < da.numel(); ++i)
                    da.data[i] *= detail::gelu_grad_scalar(x.data[i]);
                  g.accumulate(ia, da);
                },
                scoped("gelu"));
  }

  // Normalizes each length-h vector along the last axis to zero mean / unit
  // variance (eps inside the square root), then applies gain and bias.
  Var layer_norm(Var a, Var gain, Var bias, T eps = T(1e-5)) {
    const Tensor<T>&A = v(a), &G = v(gain), &B = v(bias);
    if (A.rank() < 1 || A.shape.back() < 1) {
      throw ShapeError("layer_norm: input " + A.shape_str() + " has no last dimension");
    }
    const std::size_t h = A.shape.back();
    if (G.numel() != h || B.numel() != h) {
      throw ShapeError("layer_norm: gain " + G.shape_str() + " / bias " + B.shape_str() +
                       " do not match last dimension of " + A.shape_str());
    }
    const std::size_t rows = A.numel() / h;
    Tensor<T> out = A;
    for (std::size_t r = 0; r < rows; ++r) {
      T* x = out.data.data() + r * h;
      T mean = T(0);
      for (std::size_t j = 0; j < h; ++j) mean += x[j];
      mean /= T(h);
      T var = T(0);
      for (std::size_t j = 0; j < h; ++j) var += (x[j] - mean) * (x[j] - mean);
      var /= T(h);
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < h; ++j) x[j] = (x[j] - mean) * inv * G.data[j] + B.data[j];
    }
    return push(std::move(out), {a.id, gain.id, bias.id}, needs(a) || needs(gain) || needs(bias),
                [h, rows, eps](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const int ia = g.nodes_[id].inputs[0];
                  const int ig = g.nodes_[id].inputs[1];
                  const int ib = g.nodes_[id].inputs[2];
                  const Tensor<T>& A = g.nodes_[ia].value;
                  const Tensor<T>& G = g.nodes_[ig].value;
                  const bool wa = g.nodes_[ia].requires_grad;
                  const bool wg = g.nodes_[ig].requires_grad;
                  const bool wb = g.nodes_[ib].requires_grad;
                  Tensor<T>* ga = wa ? &g.ensure_grad(ia) : nullptr;
                  Tensor<T>* gg = wg ? &g.ensure_grad(ig) : nullptr;
                  Tensor<T>* gb = wb ? &g.ensure_grad(ib) : nullptr;
                  std::vector<T> xhat(h);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T* x = A.data.data() + r * h;
                    const T* dy = go.data.data() + r * h;
                    T mean = T(0);
                    for (std::size_t j = 0; j < h; ++j) mean += x[j];
                    mean /= T(h);
                    T var = T(0);
                    for (std::size_t j = 0; j < h; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= T(h);
                    const T inv = T(1) / std::sqrt(var + eps);
                    for (std::size_t j = 0; j < h; ++j) xhat[j] = (x[j] - mean) * inv;
                    if (wg || wb) {
                      for (std::size_t j = 0; j < h; ++j) {
                        if (wg) gg->data[j] += dy[j] * xhat[j];
                        if (wb) gb->data[j] += dy[j];
                      }
                    }
                    if (wa) {
                      T mean_hg = T(0), mean_hgx = T(0);
                      for (std::size_t j = 0; j < h; ++j) {
                        const T hj = dy[j] * G.data[j];
                        mean_hg += hj;
                        mean_hgx += hj * xhat[j];
                      }
                      mean_hg /= T(h);
                      mean_hgx /= T(h);
                      for (std::size_t j = 0; j < h; ++j) {
                        const T hj = dy[j] * G.data[j];
                        ga->data[r * h + j] += inv * (hj - mean_hg - xhat[j] * mean_hgx);
                      }
                    }
                  }
                },
                scoped("layer_norm"));
  }

  // Row-wise softmax with per-row max subtraction. `mask` (same shape,
  // entries 0/1) restricts each row to the positions with mask != 0; masked
  // positions get probability zero.
  Var softmax_rows(Var a, const Tensor<T>* mask = nullptr) {
    const Tensor<T>& A = v(a);
    require_2d(A, "softmax_rows");
    if (mask != nullptr) check_same_shape(A, *mask, "softmax_rows mask");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      const T* x = A.data.data() + i * n;
      const T* mk = mask ? mask->data.data() + i * n : nullptr;
      T mx = T(0);
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        if (mk && mk[j] == T(0)) continue;
        if (!any || x[j] > mx) mx = x[j];
        any = true;
      }
      if (!any) throw NumericError(scoped("softmax_rows") + ": fully masked row " + std::to_string(i));
      T sum = T(0);
      T* o = out.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        if (mk && mk[j] == T(0)) {
          o[j] = T(0);
        } else {
          o[j] = std::exp(x[j] - mx);
          sum += o[j];
        }
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    return push(std::move(out), {a.id}, needs(a),
                [m, n](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const Tensor<T>& go = g.nodes_[id].grad;
                  const Tensor<T>& p = g.nodes_[id].value;
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (std::size_t i = 0; i < m; ++i) {
                    const T* dp = go.data.data() + i * n;
                    const T* pi = p.data.data() + i * n;
                    T dot = T(0);
                    for (std::size_t j = 0; j < n; ++j) dot += dp[j] * pi[j];
                    for (std::size_t j = 0; j < n; ++j) ga.data[i * n + j] += pi[j] * (dp[j] - dot);
                  }
                },
                scoped("softmax_rows"));
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor<T>& A = v(a);
    require_2d(A, "slice_cols");
    if (!(c0 < c1 && c1 <= A.cols())) {
      throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") out of bounds for " + A.shape_str());
    }
    const std::size_t m = A.rows(), n = A.cols(), w = c1 - c0;
    Tensor<T> out({m, w});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = A.data[i * n + c0 + j];
    return push(std::move(out), {a.id}, needs(a),
                [m, n, w, c0](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const Tensor<T>& go = g.nodes_[id].grad;
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) ga.data[i * n + c0 + j] += go.data[i * w + j];
                },
                scoped("slice_cols"));
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor<T>& A = v(a);
    require_2d(A, "slice_rows");
    if (!(r0 < r1 && r1 <= A.rows())) {
      throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                       ") out of bounds for " + A.shape_str());
    }
    const std::size_t n = A.cols(), m = r1 - r0;
    Tensor<T> out({m, n});
    std::copy(A.data.begin() + r0 * n, A.data.begin() + r1 * n, out.data.begin());
    return push(std::move(out), {a.id}, needs(a),
                [m, n, r0](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const Tensor<T>& go = g.nodes_[id].grad;
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (std::size_t i = 0; i < m * n; ++i) ga.data[r0 * n + i] += go.data[i];
                },
                scoped("slice_rows"));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = v(parts[0]).rows();
    std::size_t n = 0;
    bool any_grad = false;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
      const Tensor<T>& P = v(p);
      require_2d(P, "concat_cols");
      if (P.rows() != m) {
        throw ShapeError("concat_cols: row count mismatch " + P.shape_str() + " vs " +
                         std::to_string(m) + " rows");
      }
      widths.push_back(P.cols());
      n += P.cols();
      any_grad = any_grad || needs(p);
      ids.push_back(p.id);
    }
    Tensor<T> out({m, n});
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const Tensor<T>& P = nodes_[ids[pi]].value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < widths[pi]; ++j) out.data[i * n + off + j] = P.data[i * widths[pi] + j];
      off += widths[pi];
    }
    return push(std::move(out), ids, any_grad,
                [m, n, widths](Graph& g, int id) {
                  const Tensor<T>& go = g.nodes_[id].grad;
                  std::size_t off = 0;
                  for (std::size_t pi = 0; pi < g.nodes_[id].inputs.size(); ++pi) {
                    const int ip = g.nodes_[id].inputs[pi];
                    const std::size_t w = widths[pi];
                    if (g.nodes_[ip].requires_grad) {
                      Tensor<T>& gp = g.ensure_grad(ip);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) gp.data[i * w + j] += go.data[i * n + off + j];
                    }
                    off += w;
                  }
                },
                scoped("concat_cols"));
  }

  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Tensor<T>& A = v(a);
    require_2d(A, "gather_rows");
    for (std::size_t r : idx) {
      if (r >= A.rows()) {
        throw ShapeError("gather_rows: index " + std::to_string(r) + " out of bounds for " + A.shape_str());
      }
    }
    const std::size_t n = A.cols(), m = idx.size();
    Tensor<T> out({m, n});
    for (std::size_t r = 0; r < m; ++r)
      std::copy(A.data.begin() + idx[r] * n, A.data.begin() + (idx[r] + 1) * n, out.data.begin() + r * n);
    return push(std::move(out), {a.id}, needs(a),
                [n, idx = std::move(idx)](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const Tensor<T>& go = g.nodes_[id].grad;
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t j = 0; j < n; ++j) ga.data[idx[r] * n + j] += go.data[r * n + j];
                },
                scoped("gather_rows"));
  }

  Var sum_all(Var a) {
    const Tensor<T>& A = v(a);
    T s = T(0);
    for (const T& x : A.data) s += x;
    return push(Tensor<T>::scalar(s), {a.id}, needs(a),
                [](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const T go = g.nodes_[id].grad.data[0];
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (auto& x : ga.data) x += go;
                },
                scoped("sum_all"));
  }

  Var mean_all(Var a) {
    const Tensor<T>& A = v(a);
    if (A.numel() == 0) throw ShapeError("mean_all: empty tensor");
    T s = T(0);
    for (const T& x : A.data) s += x;
    const T invn = T(1) / T(A.numel());
    return push(Tensor<T>::scalar(s * invn), {a.id}, needs(a),
                [invn](Graph& g, int id) {
                  const int ia = g.nodes_[id].inputs[0];
                  if (!g.nodes_[ia].requires_grad) return;
                  const T go = g.nodes_[id].grad.data[0] * invn;
                  Tensor<T>& ga = g.ensure_grad(ia);
                  for (auto& x : ga.data) x += go;
                },
                scoped("mean_all"));
  }

  // Mean squared error against a constant target, one graph op at a time.
  Var mse_against(Var pred, const Tensor<T>& target) {
    Var d = sub_const(pred, target);
    return mean_all(mul(d, d));
  }

  // ---- backward --------------------------------------------------------

  void backward(Var loss) {
    const int lid = check(loss);
    if (backward_done_) throw TapeError("backward: tape already differentiated once");
    if (nodes_[lid].value.numel() != 1) {
      throw TapeError("backward: loss " + nodes_[lid].value.shape_str() + " is not a scalar");
    }
    backward_done_ = true;
    if (!nodes_[lid].requires_grad) return;  // constant graph, all gradients zero
    ensure_grad(lid).data[0] = T(1);
    for (int i = lid; i >= 0; --i) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.numel() == 0 || !node.backward) continue;
      node.backward(*this, i);
    }
  }

  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until a contribution arrives
    std::vector<int> inputs;
    std::function<void(Graph&, int)> backward;
    std::string label;
    bool requires_grad = false;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw TapeError("invalid Var handle");
    return v.id;
  }

  const Tensor<T>& v(Var var) const { return nodes_[check(var)].value; }
  bool needs(Var var) const { return nodes_[check(var)].requires_grad; }

  static void require_2d(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected 2-D tensor, got " + t.shape_str());
  }

  std::string scoped(const char* op) const { return scope_.empty() ? op : scope_ + "." + op; }

  Tensor<T>& ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  void accumulate(int id, const Tensor<T>& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor<T>& dst = ensure_grad(id);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += g.data[i];
  }

  Var push(Tensor<T> value, std::vector<int> inputs, bool requires_grad,
           std::function<void(Graph&, int)> bwd, std::string label) {
    if (!value.all_finite()) {
      throw NumericError(label + ": non-finite values in output " + value.shape_str());
    }
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = requires_grad ? std::move(bwd) : nullptr;
    n.label = std::move(label);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::string scope_;
  bool backward_done_ = false;
};

}  // namespace icl
