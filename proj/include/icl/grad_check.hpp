#pragma once

// Central-difference validation of reverse-mode gradients.
//
// `build` must construct a scalar loss from the given leaf Vars, one per input
// tensor, and must be a pure function of those leaves. The returned figure is
//   max over coordinates of |analytic - central| / max(1, |analytic|, |central|).

#include <cstddef>
#include <vector>

#include "icl/graph.hpp"
#include "icl/tensor.hpp"

namespace icl {

template <typename T, typename BuildFn>
double grad_check(BuildFn&& build, const std::vector<Tensor<T>>& inputs, T eps = T(1e-5)) {
  std::vector<Tensor<T>> analytic;
  {
    Graph<T> g;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(g.leaf(in, true));
    Var loss = build(g, leaves);
    g.backward(loss);  // rejects non-scalar losses
    for (Var l : leaves) analytic.push_back(g.grad(l));
  }

  auto eval = [&](const std::vector<Tensor<T>>& xs) -> T {
    Graph<T> g;
    std::vector<Var> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(g.leaf(x, false));
    return g.value(build(g, leaves)).data[0];
  };

  double max_rel = 0.0;
  std::vector<Tensor<T>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t c = 0; c < inputs[i].numel(); ++c) {
      const T orig = work[i].data[c];
      work[i].data[c] = orig + eps;
      const double fp = static_cast<double>(eval(work));
      work[i].data[c] = orig - eps;
      const double fm = static_cast<double>(eval(work));
      work[i].data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[i].data[c]);
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace icl
