#pragma once

// Synthetic linear-regression task sampling.
//
// A prompt holds k+1 inputs and labels: rows 0..k-1 serve as demonstrations,
// row k is the final query, and the prefix with i demonstrations uses row i
// as its query. Inputs are N(mu*1, I_d), the hidden weight is w ~ N(0, I_d),
// and labels are y = w.x + sigma*eta with eta ~ N(0,1).
//
// Draw order inside sample_prompt is fixed (xs row-major, then w, then one
// noise draw per label), so a (config, seed) pair reproduces bit-identically.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "icl/errors.hpp"
#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

// Kept out of line (and never constant-propagation cloned) so every caller
// computes labels with identical rounding.
template <typename T>
[[gnu::noinline, gnu::noclone]] T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

struct TaskConfig {
  std::size_t d = 10;   // input dimension
  double mu = 0.0;      // input mean scale, D_X = N(mu*1, I_d)
  double sigma = 0.0;   // label noise scale
  std::size_t k = 10;   // demonstrations per prompt

  void validate() const {
    if (d < 1) throw ConfigError("task.d must be >= 1");
    if (sigma < 0.0) throw ConfigError("task.sigma must be >= 0");
  }
};

template <typename T>
struct Prompt {
  Tensor<T> xs;  // (k+1) x d
  Tensor<T> ys;  // k+1
  Tensor<T> w;   // d
  TaskConfig cfg;

  std::size_t k() const { return cfg.k; }
  std::size_t d() const { return cfg.d; }
  const T* x_row(std::size_t r) const { return xs.data.data() + r * cfg.d; }
  // Noiseless label w.x for row r.
  T clean_y(std::size_t r) const { return dot(w.data.data(), x_row(r), cfg.d); }
};

template <typename T>
Prompt<T> sample_prompt(const TaskConfig& cfg, Rng& rng) {
  cfg.validate();
  Prompt<T> p;
  p.cfg = cfg;
  const std::size_t rows = cfg.k + 1;
  p.xs = Tensor<T>({rows, cfg.d});
  for (auto& x : p.xs.data) x = static_cast<T>(cfg.mu + rng.gaussian());
  p.w = Tensor<T>({cfg.d});
  for (auto& x : p.w.data) x = static_cast<T>(rng.gaussian());
  p.ys = Tensor<T>({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    p.ys.data[r] = p.clean_y(r) + static_cast<T>(cfg.sigma) * static_cast<T>(rng.gaussian());
  }
  return p;
}

// View of a prompt with i demonstrations plus the (i+1)-th input as query.
// `order` maps demonstration slot j to a prompt row, so permutations are
// index shuffles rather than copies; the query is always row i.
template <typename T>
struct PromptPrefix {
  const Prompt<T>* prompt = nullptr;
  std::size_t i = 0;
  std::vector<std::uint32_t> order;

  std::size_t d() const { return prompt->cfg.d; }
  const T* demo_x(std::size_t j) const { return prompt->x_row(order[j]); }
  T demo_y(std::size_t j) const { return prompt->ys.data[order[j]]; }
  const T* query_x() const { return prompt->x_row(i); }
  T target_y() const { return prompt->ys.data[i]; }
  T clean_target_y() const { return prompt->clean_y(i); }
};

template <typename T>
PromptPrefix<T> make_prefix(const Prompt<T>& prompt, std::size_t i) {
  if (i > prompt.k()) {
    throw ShapeError("make_prefix: i=" + std::to_string(i) + " out of range for k=" +
                     std::to_string(prompt.k()));
  }
  PromptPrefix<T> p;
  p.prompt = &prompt;
  p.i = i;
  p.order.resize(i);
  std::iota(p.order.begin(), p.order.end(), 0u);
  return p;
}

// Reorders demonstrations by `perm` (a bijection on 0..i-1); the query and
// target are untouched.
template <typename T>
PromptPrefix<T> permute_demos(const PromptPrefix<T>& prefix, const std::vector<std::uint32_t>& perm) {
  if (perm.size() != prefix.i) {
    throw ShapeError("permute_demos: permutation size " + std::to_string(perm.size()) +
                     " != demonstration count " + std::to_string(prefix.i));
  }
  std::vector<bool> seen(prefix.i, false);
  for (std::uint32_t v : perm) {
    if (v >= prefix.i || seen[v]) throw ShapeError("permute_demos: not a permutation of 0.." + std::to_string(prefix.i ? prefix.i - 1 : 0));
    seen[v] = true;
  }
  PromptPrefix<T> out = prefix;
  for (std::size_t j = 0; j < prefix.i; ++j) out.order[j] = prefix.order[perm[j]];
  return out;
}

inline std::vector<std::uint32_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t j = n; j > 1; --j) {
    const std::size_t r = static_cast<std::size_t>(rng.below(j));
    std::swap(perm[j - 1], perm[r]);
  }
  return perm;
}

// ---- datagen CSV dump ----------------------------------------------------
// Format: prompt_id,row,role,x_0..x_{d-1},y with role in {demo, query}; the
// last row of each prompt is the query. Floats use 17 significant digits so
// parsing them back is bit-exact.

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
void write_prompts_csv(std::ostream& os, const std::vector<Prompt<T>>& prompts, std::size_t d) {
  os << "prompt_id,row,role";
  for (std::size_t j = 0; j < d; ++j) os << ",x_" << j;
  os << ",y\n";
  for (std::size_t id = 0; id < prompts.size(); ++id) {
    const Prompt<T>& p = prompts[id];
    for (std::size_t r = 0; r <= p.k(); ++r) {
      os << id << ',' << r << ',' << (r == p.k() ? "query" : "demo");
      for (std::size_t j = 0; j < d; ++j) os << ',' << format_g17(static_cast<double>(p.x_row(r)[j]));
      os << ',' << format_g17(static_cast<double>(p.ys.data[r])) << '\n';
    }
  }
}

template <typename T>
void write_weights_csv(std::ostream& os, const std::vector<Prompt<T>>& prompts, std::size_t d) {
  os << "prompt_id";
  for (std::size_t j = 0; j < d; ++j) os << ",w_" << j;
  os << '\n';
  for (std::size_t id = 0; id < prompts.size(); ++id) {
    os << id;
    for (std::size_t j = 0; j < d; ++j) os << ',' << format_g17(static_cast<double>(prompts[id].w.data[j]));
    os << '\n';
  }
}

}  // namespace icl
