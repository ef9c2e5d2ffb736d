#pragma once

// Adam with bias correction. Moment tensors are created lazily per parameter
// name; the step counter t increases by exactly one per update call.

#include <cmath>
#include <cstdint>

#include "icl/errors.hpp"
#include "icl/params.hpp"
#include "icl/tensor.hpp"

namespace icl {

template <typename T>
struct AdamState {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t t = 0;
  Params<T> m;
  Params<T> v;
};

// In-place update of `params` from `grads`. Parameters missing from `grads`
// are treated as having zero gradient (their moments still decay).
template <typename T>
void adam_update(Params<T>& params, const Params<T>& grads, AdamState<T>& state) {
  state.t += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
  for (auto& [name, p] : params) {
    auto mit = state.m.find(name);
    if (mit == state.m.end()) mit = state.m.emplace(name, Tensor<T>::zeros(p.shape)).first;
    auto vit = state.v.find(name);
    if (vit == state.v.end()) vit = state.v.emplace(name, Tensor<T>::zeros(p.shape)).first;
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    check_same_shape(p, m, "adam_update moment m");
    check_same_shape(p, v, "adam_update moment v");

    const Tensor<T>* g = nullptr;
    auto git = grads.find(name);
    if (git != grads.end()) {
      check_same_shape(p, git->second, "adam_update gradient");
      g = &git->second;
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T gi = g ? g->data[i] : T(0);
      m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * gi;
      v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * gi * gi;
      const T mhat = m.data[i] / bc1;
      const T vhat = v.data[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace icl
