#pragma once

#include <map>
#include <string>

#include "icl/errors.hpp"
#include "icl/tensor.hpp"

namespace icl {

// Named parameter/gradient store. std::map keeps iteration order sorted by
// name, which fixes the accumulation and update order everywhere.
template <typename T>
using Params = std::map<std::string, Tensor<T>>;

template <typename T>
void params_accumulate(Params<T>& dst, const Params<T>& src) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, g);
    } else {
      check_same_shape(it->second, g, "params_accumulate");
      for (std::size_t i = 0; i < g.numel(); ++i) it->second.data[i] += g.data[i];
    }
  }
}

template <typename T>
void params_scale(Params<T>& p, T s) {
  for (auto& [name, t] : p)
    for (auto& x : t.data) x *= s;
}

}  // namespace icl
