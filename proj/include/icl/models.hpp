#pragma once

// The three in-context regressors: a causal transformer with learned
// positional encodings, the identical-positional-encoding variant (single
// learned vector added to every position, optionally with unmasked attention
// over the demonstrations), and a DeepSet.
//
// Prompt serialization: a prefix with i demonstrations becomes the token
// sequence (x_1,0),(0,y_1),...,(x_i,0),(0,y_i),(x_{i+1},0) of length 2i+1;
// each (d+1)-row is mapped into the hidden space by the read_in matrix. The
// prediction for the prefix is a linear read-out at the final x-token.
//
// For causal attention, running the truncated prefix sequence is bit-exactly
// equal to reading the full-prompt forward at token 2i: masked softmax only
// ever sums the surviving positions and the matmul kernels reduce in an
// m-independent order.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "icl/errors.hpp"
#include "icl/graph.hpp"
#include "icl/params.hpp"
#include "icl/rng.hpp"
#include "icl/taskgen.hpp"
#include "icl/tensor.hpp"

namespace icl {

enum class Arch { Transformer, DeepSet };
enum class PeMode { Learned, Identical };
enum class MaskMode { Causal, BidirectionalDemos };

inline const char* to_string(Arch a) { return a == Arch::Transformer ? "transformer" : "deepset"; }
inline const char* to_string(PeMode m) { return m == PeMode::Learned ? "learned" : "identical"; }
inline const char* to_string(MaskMode m) { return m == MaskMode::Causal ? "causal" : "bidirectional_demos"; }

struct ModelConfig {
  Arch arch = Arch::Transformer;
  PeMode pe_mode = PeMode::Learned;
  MaskMode mask_mode = MaskMode::Causal;
  std::size_t n_layers = 3;
  std::size_t n_heads = 2;
  std::size_t hidden_dim = 64;
  std::size_t max_positions = 101;
  std::size_t d = 10;
  std::size_t deepset_width = 128;
  std::size_t deepset_depth = 3;

  std::size_t head_dim() const { return hidden_dim / n_heads; }

  void validate() const {
    if (d < 1) throw ConfigError("model: d must be >= 1");
    if (arch == Arch::Transformer) {
      if (n_layers < 1 || n_heads < 1 || hidden_dim < 1) {
        throw ConfigError("model: n_layers, n_heads and hidden_dim must be >= 1");
      }
      if (hidden_dim % n_heads != 0) {
        throw ConfigError("model: hidden_dim " + std::to_string(hidden_dim) +
                          " not divisible by n_heads " + std::to_string(n_heads));
      }
      if (pe_mode == PeMode::Learned && max_positions < 1) {
        throw ConfigError("model: max_positions must be >= 1 for learned positional encodings");
      }
    } else {
      if (deepset_width < 1 || deepset_depth < 1) {
        throw ConfigError("model: deepset_width and deepset_depth must be >= 1");
      }
    }
  }

  // Largest demonstration count this model accepts, or SIZE_MAX if unbounded.
  std::size_t max_demos() const {
    if (arch == Arch::Transformer && pe_mode == PeMode::Learned) return (max_positions - 1) / 2;
    return static_cast<std::size_t>(-1);
  }
};

// ---- parameter schema ------------------------------------------------------

using ParamShape = std::pair<std::string, std::vector<std::size_t>>;

namespace detail {

// Layer dims (in,out) for the three DeepSet MLPs.
inline std::vector<std::pair<std::size_t, std::size_t>> mlp_dims(std::size_t in, std::size_t width,
                                                                 std::size_t out, std::size_t depth) {
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t li = (l == 0) ? in : width;
    const std::size_t lo = (l + 1 == depth) ? out : width;
    dims.emplace_back(li, lo);
  }
  return dims;
}

}  // namespace detail

inline std::vector<ParamShape> param_schema(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamShape> s;
  const std::size_t H = cfg.hidden_dim, d = cfg.d, W = cfg.deepset_width;
  if (cfg.arch == Arch::Transformer) {
    s.push_back({"read_in.w", {d + 1, H}});
    if (cfg.pe_mode == PeMode::Learned) {
      s.push_back({"pos.table", {cfg.max_positions, H}});
    } else {
      s.push_back({"pos.vec", {H}});
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      s.push_back({p + "ln1.g", {H}});
      s.push_back({p + "ln1.b", {H}});
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) s.push_back({p + w, {H, H}});
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) s.push_back({p + b, {H}});
      s.push_back({p + "ln2.g", {H}});
      s.push_back({p + "ln2.b", {H}});
      s.push_back({p + "mlp.w1", {H, 4 * H}});
      s.push_back({p + "mlp.b1", {4 * H}});
      s.push_back({p + "mlp.w2", {4 * H, H}});
      s.push_back({p + "mlp.b2", {H}});
    }
    s.push_back({"ln_f.g", {H}});
    s.push_back({"ln_f.b", {H}});
    s.push_back({"read_out.w", {H, 1}});
    s.push_back({"read_out.b", {1}});
  } else {
    auto push_mlp = [&](const char* name, std::size_t in, std::size_t out) {
      auto dims = detail::mlp_dims(in, W, out, cfg.deepset_depth);
      for (std::size_t l = 0; l < dims.size(); ++l) {
        const std::string p = std::string(name) + std::to_string(l) + ".";
        s.push_back({p + "w", {dims[l].first, dims[l].second}});
        s.push_back({p + "b", {dims[l].second}});
      }
    };
    push_mlp("phi.", d + 1, W);
    push_mlp("rho.", W, W);
    push_mlp("psi.", W + d, 1);
  }
  return s;
}

// Gaussian init: transformer weights std 0.02 (GPT-2 convention), DeepSet
// weights Kaiming fan-in. The read-out (psi's last layer for DeepSet) is
// zero-initialized unless `zero_readout` is false, in which case it is drawn
// like any other weight so untrained models produce nonzero outputs.
template <typename T>
Params<T> init_params(const ModelConfig& cfg, Rng& rng, bool zero_readout = true) {
  Params<T> params;
  const std::string last_psi = "psi." + std::to_string(cfg.deepset_depth - 1) + ".w";
  for (const auto& [name, shape] : param_schema(cfg)) {
    Tensor<T> t(shape);
    const std::string leaf = name.substr(name.rfind('.') + 1);
    const bool is_gain = leaf == "g";
    const bool is_weight = (!leaf.empty() && leaf[0] == 'w') || leaf == "table" || leaf == "vec";
    const bool is_readout = (name == "read_out.w" || name == "read_out.b" ||
                             (cfg.arch == Arch::DeepSet && name == last_psi));
    if (is_gain) {
      for (auto& x : t.data) x = T(1);
    } else if (is_readout && zero_readout) {
      // stays zero
    } else if (is_weight) {
      double std_dev = 0.02;
      if (cfg.arch == Arch::DeepSet) {
        const std::size_t fan_in = shape.size() == 2 ? shape[0] : 1;
        std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      }
      for (auto& x : t.data) x = static_cast<T>(std_dev * rng.gaussian());
    }
    // biases stay zero
    params.emplace(name, std::move(t));
  }
  return params;
}

template <typename T>
void validate_params(const Params<T>& params, const ModelConfig& cfg) {
  auto schema = param_schema(cfg);
  if (params.size() != schema.size()) {
    throw ShapeError("params: expected " + std::to_string(schema.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (const auto& [name, shape] : schema) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("params: missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw ShapeError("params: tensor '" + name + "' has shape " + it->second.shape_str() +
                       ", schema requires " + Tensor<T>::shape_str(shape));
    }
  }
}

// ---- graph construction ----------------------------------------------------

template <typename T>
struct BoundParams {
  std::map<std::string, Var> vars;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ShapeError("params: missing tensor '" + name + "'");
    return it->second;
  }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const Params<T>& params, bool trainable) {
  BoundParams<T> bound;
  for (const auto& [name, tensor] : params) bound.vars.emplace(name, g.leaf(tensor, trainable, name));
  return bound;
}

namespace detail {

template <typename T>
Tensor<T> token_row(const ModelConfig& cfg) {
  return Tensor<T>({cfg.d + 1});
}

// Interleaved token inputs for a prefix: rows (x_j;0),(0;y_j) per
// demonstration in prefix order, then the query (x;0). Shape (2i+1) x (d+1).
template <typename T>
Tensor<T> prefix_token_inputs(const PromptPrefix<T>& prefix, const ModelConfig& cfg) {
  if (prefix.d() != cfg.d) {
    throw ShapeError("embed: prompt dimension d=" + std::to_string(prefix.d()) +
                     " does not match model d=" + std::to_string(cfg.d));
  }
  const std::size_t d = cfg.d, tlen = 2 * prefix.i + 1;
  Tensor<T> tok({tlen, d + 1});
  for (std::size_t j = 0; j < prefix.i; ++j) {
    T* xr = tok.data.data() + (2 * j) * (d + 1);
    const T* x = prefix.demo_x(j);
    for (std::size_t c = 0; c < d; ++c) xr[c] = x[c];
    T* yr = tok.data.data() + (2 * j + 1) * (d + 1);
    yr[d] = prefix.demo_y(j);
  }
  T* qr = tok.data.data() + (tlen - 1) * (d + 1);
  const T* q = prefix.query_x();
  for (std::size_t c = 0; c < d; ++c) qr[c] = q[c];
  return tok;
}

// Full prompt, natural order: all k+1 x-tokens interleaved with the first k
// y-tokens. Shape (2k+1) x (d+1).
template <typename T>
Tensor<T> prompt_token_inputs(const Prompt<T>& prompt, const ModelConfig& cfg) {
  if (prompt.d() != cfg.d) {
    throw ShapeError("embed: prompt dimension d=" + std::to_string(prompt.d()) +
                     " does not match model d=" + std::to_string(cfg.d));
  }
  const std::size_t d = cfg.d, k = prompt.k(), tlen = 2 * k + 1;
  Tensor<T> tok({tlen, d + 1});
  for (std::size_t r = 0; r <= k; ++r) {
    T* xr = tok.data.data() + (2 * r) * (d + 1);
    const T* x = prompt.x_row(r);
    for (std::size_t c = 0; c < d; ++c) xr[c] = x[c];
    if (r < k) tok.data[(2 * r + 1) * (d + 1) + d] = prompt.ys.data[r];
  }
  return tok;
}

template <typename T>
Tensor<T> causal_mask(std::size_t tlen) {
  Tensor<T> m({tlen, tlen});
  for (std::size_t i = 0; i < tlen; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.data[i * tlen + j] = T(1);
  return m;
}

template <typename T>
Var linear(Graph<T>& g, Var x, const BoundParams<T>& pv, const std::string& w, const std::string& b) {
  return g.add_rowvec(g.matmul(x, pv.at(w)), pv.at(b));
}

// Pre-norm decoder trunk over an already position-encoded sequence; returns
// the final-layer-normed hidden states. `mask` == nullptr means full attention.
template <typename T>
Var transformer_trunk(Graph<T>& g, Var x, const BoundParams<T>& pv, const ModelConfig& cfg,
                      const Tensor<T>* mask) {
  const std::size_t H = cfg.hidden_dim, dh = cfg.head_dim();
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    g.set_scope("layer" + std::to_string(l));
    Var a_in = g.layer_norm(x, pv.at(p + "ln1.g"), pv.at(p + "ln1.b"));
    Var q = linear(g, a_in, pv, p + "attn.wq", p + "attn.bq");
    Var k = linear(g, a_in, pv, p + "attn.wk", p + "attn.bk");
    Var v = linear(g, a_in, pv, p + "attn.wv", p + "attn.bv");
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
      Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
      Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
      Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);
      Var probs = g.softmax_rows(scores, mask);
      heads.push_back(g.matmul(probs, vh));
    }
    Var ctx = cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    Var attn = linear(g, ctx, pv, p + "attn.wo", p + "attn.bo");
    x = g.add(x, attn);
    Var m_in = g.layer_norm(x, pv.at(p + "ln2.g"), pv.at(p + "ln2.b"));
    Var h1 = g.gelu(linear(g, m_in, pv, p + "mlp.w1", p + "mlp.b1"));
    Var mlp = g.add_rowvec(g.matmul(h1, pv.at(p + "mlp.w2")), pv.at(p + "mlp.b2"));
    x = g.add(x, mlp);
    (void)H;
  }
  g.set_scope("final");
  Var out = g.layer_norm(x, pv.at("ln_f.g"), pv.at("ln_f.b"));
  g.set_scope("");
  return out;
}

template <typename T>
Var readout(Graph<T>& g, Var hidden, const BoundParams<T>& pv) {
  return g.add_rowvec(g.matmul(hidden, pv.at("read_out.w")), pv.at("read_out.b"));
}

// Shared MLP walker for DeepSet stacks. relu_last controls whether the final
// layer is followed by a ReLU (phi/rho: yes, psi: no).
template <typename T>
Var deepset_mlp(Graph<T>& g, Var x, const BoundParams<T>& pv, const char* stack, std::size_t depth,
                bool relu_last) {
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string p = std::string(stack) + std::to_string(l) + ".";
    x = linear(g, x, pv, p + "w", p + "b");
    if (relu_last || l + 1 < depth) x = g.relu(x);
  }
  return x;
}

}  // namespace detail

// Token sequence for a prefix after read-in embedding: (2i+1) x hidden_dim,
// before positional encoding.
template <typename T>
Var embed_prefix(Graph<T>& g, const PromptPrefix<T>& prefix, const BoundParams<T>& pv,
                 const ModelConfig& cfg) {
  Tensor<T> tok = detail::prefix_token_inputs(prefix, cfg);
  return g.matmul(g.constant(std::move(tok), "tokens"), pv.at("read_in.w"));
}

// Adds positional information. Learned mode indexes a per-position table and
// rejects sequences longer than max_positions; identical mode adds one shared
// vector to every position and accepts any length.
template <typename T>
Var positional_encode(Graph<T>& g, Var seq, const BoundParams<T>& pv, const ModelConfig& cfg) {
  const std::size_t tlen = g.value(seq).rows();
  if (cfg.pe_mode == PeMode::Learned) {
    if (tlen > cfg.max_positions) {
      throw ShapeError("positional_encode: sequence length " + std::to_string(tlen) +
                       " exceeds max_positions " + std::to_string(cfg.max_positions) +
                       " of the learned positional table");
    }
    return g.add(seq, g.slice_rows(pv.at("pos.table"), 0, tlen));
  }
  return g.add_rowvec(seq, pv.at("pos.vec"));
}

// ---- DeepSet ---------------------------------------------------------------

// psi(rho(mean_j phi(x_j;y_j)), x_query) for one prefix; an empty prefix pools
// to the zero vector. The mean accumulates in the order the demonstrations are
// given.
template <typename T>
Var deepset_predict_graph(Graph<T>& g, const PromptPrefix<T>& prefix, const BoundParams<T>& pv,
                          const ModelConfig& cfg) {
  if (prefix.d() != cfg.d) {
    throw ShapeError("deepset: prompt dimension d=" + std::to_string(prefix.d()) +
                     " does not match model d=" + std::to_string(cfg.d));
  }
  const std::size_t d = cfg.d, W = cfg.deepset_width, i = prefix.i;
  Var pooled;
  if (i > 0) {
    Tensor<T> demos({i, d + 1});
    for (std::size_t j = 0; j < i; ++j) {
      const T* x = prefix.demo_x(j);
      for (std::size_t c = 0; c < d; ++c) demos.data[j * (d + 1) + c] = x[c];
      demos.data[j * (d + 1) + d] = prefix.demo_y(j);
    }
    g.set_scope("phi");
    Var phi = detail::deepset_mlp(g, g.constant(std::move(demos), "demos"), pv, "phi.",
                                  cfg.deepset_depth, true);
    Tensor<T> pool({1, i});
    for (auto& x : pool.data) x = T(1) / static_cast<T>(i);
    pooled = g.matmul(g.constant(std::move(pool), "pool"), phi);
  } else {
    pooled = g.constant(Tensor<T>({1, W}), "pool_empty");
  }
  g.set_scope("rho");
  Var r = detail::deepset_mlp(g, pooled, pv, "rho.", cfg.deepset_depth, true);
  Tensor<T> query({1, d});
  for (std::size_t c = 0; c < d; ++c) query.data[c] = prefix.query_x()[c];
  g.set_scope("psi");
  Var z = g.concat_cols({r, g.constant(std::move(query), "query")});
  Var out = detail::deepset_mlp(g, z, pv, "psi.", cfg.deepset_depth, false);
  g.set_scope("");
  return out;  // 1 x 1
}

// All k+1 prefix predictions of a prompt in one graph: phi runs once over the
// k demonstrations and a constant prefix-averaging matrix pools rows 0..i-1
// for prefix i (row 0 pools nothing and stays zero).
template <typename T>
Var deepset_forward_all_graph(Graph<T>& g, const Prompt<T>& prompt, const BoundParams<T>& pv,
                              const ModelConfig& cfg) {
  if (prompt.d() != cfg.d) {
    throw ShapeError("deepset: prompt dimension d=" + std::to_string(prompt.d()) +
                     " does not match model d=" + std::to_string(cfg.d));
  }
  const std::size_t d = cfg.d, W = cfg.deepset_width, k = prompt.k();
  Var pooled;
  if (k > 0) {
    Tensor<T> demos({k, d + 1});
    for (std::size_t j = 0; j < k; ++j) {
      const T* x = prompt.x_row(j);
      for (std::size_t c = 0; c < d; ++c) demos.data[j * (d + 1) + c] = x[c];
      demos.data[j * (d + 1) + d] = prompt.ys.data[j];
    }
    g.set_scope("phi");
    Var phi = detail::deepset_mlp(g, g.constant(std::move(demos), "demos"), pv, "phi.",
                                  cfg.deepset_depth, true);
    Tensor<T> pool({k + 1, k});
    for (std::size_t i = 1; i <= k; ++i)
      for (std::size_t j = 0; j < i; ++j) pool.data[i * k + j] = T(1) / static_cast<T>(i);
    pooled = g.matmul(g.constant(std::move(pool), "pool"), phi);
  } else {
    pooled = g.constant(Tensor<T>({1, W}), "pool_empty");
  }
  g.set_scope("rho");
  Var r = detail::deepset_mlp(g, pooled, pv, "rho.", cfg.deepset_depth, true);
  Tensor<T> queries({k + 1, d});
  for (std::size_t i = 0; i <= k; ++i) {
    const T* x = prompt.x_row(i);
    for (std::size_t c = 0; c < d; ++c) queries.data[i * d + c] = x[c];
  }
  g.set_scope("psi");
  Var z = g.concat_cols({r, g.constant(std::move(queries), "queries")});
  Var out = detail::deepset_mlp(g, z, pv, "psi.", cfg.deepset_depth, false);
  g.set_scope("");
  return out;  // (k+1) x 1
}

// ---- transformer -----------------------------------------------------------

// Scalar prediction for one prefix. Causal mask modes run the truncated
// sequence under a causal mask; bidirectional_demos attends over all 2i+1
// tokens unmasked, which together with identical positional encodings makes
// the prediction permutation invariant in the demonstrations.
template <typename T>
Var transformer_predict_graph(Graph<T>& g, const PromptPrefix<T>& prefix, const BoundParams<T>& pv,
                              const ModelConfig& cfg) {
  Var seq = positional_encode(g, embed_prefix(g, prefix, pv, cfg), pv, cfg);
  const std::size_t tlen = 2 * prefix.i + 1;
  Tensor<T> mask;  // only read while the graph is built
  if (cfg.mask_mode == MaskMode::Causal) mask = detail::causal_mask<T>(tlen);
  Var hidden = detail::transformer_trunk(g, seq, pv, cfg, mask.numel() ? &mask : nullptr);
  Var last = g.gather_rows(hidden, {tlen - 1});
  return detail::readout(g, last, pv);  // 1 x 1
}

// Predictions for every prefix of a prompt from one causal pass: read-outs at
// the x-token positions 0,2,...,2k. Requires mask_mode == Causal.
template <typename T>
Var transformer_forward_graph(Graph<T>& g, const Prompt<T>& prompt, const BoundParams<T>& pv,
                              const ModelConfig& cfg) {
  if (cfg.mask_mode != MaskMode::Causal) {
    throw ShapeError("transformer_forward_graph: single-pass forward requires the causal mask");
  }
  Tensor<T> tok = detail::prompt_token_inputs(prompt, cfg);
  Var seq = positional_encode(g, g.matmul(g.constant(std::move(tok), "tokens"), pv.at("read_in.w")),
                              pv, cfg);
  const std::size_t tlen = 2 * prompt.k() + 1;
  Tensor<T> mask = detail::causal_mask<T>(tlen);
  Var hidden = detail::transformer_trunk(g, seq, pv, cfg, &mask);
  std::vector<std::size_t> even(prompt.k() + 1);
  for (std::size_t i = 0; i <= prompt.k(); ++i) even[i] = 2 * i;
  return detail::readout(g, g.gather_rows(hidden, std::move(even)), pv);  // (k+1) x 1
}

// Mean over the k+1 prefixes of the squared error against the clean targets
// f(x_{i+1}) = w.x_{i+1}; this is the per-prompt training objective. Causal
// transformers and DeepSets share one batched pass per prompt; unmasked
// attention needs one pass per prefix.
template <typename T>
Var train_loss_graph(Graph<T>& g, const Prompt<T>& prompt, const BoundParams<T>& pv,
                     const ModelConfig& cfg) {
  Tensor<T> targets({prompt.k() + 1, 1});
  for (std::size_t i = 0; i <= prompt.k(); ++i) targets.data[i] = prompt.clean_y(i);
  if (cfg.arch == Arch::DeepSet) {
    return g.mse_against(deepset_forward_all_graph(g, prompt, pv, cfg), targets);
  }
  if (cfg.mask_mode == MaskMode::Causal) {
    return g.mse_against(transformer_forward_graph(g, prompt, pv, cfg), targets);
  }
  Var sum;
  for (std::size_t i = 0; i <= prompt.k(); ++i) {
    auto prefix = make_prefix(prompt, i);
    Tensor<T> target({1, 1});
    target.data[0] = targets.data[i];
    Var sq = g.mse_against(transformer_predict_graph(g, prefix, pv, cfg), target);
    sum = sum.valid() ? g.add(sum, sq) : sq;
  }
  return g.scale(sum, T(1) / static_cast<T>(prompt.k() + 1));
}

// ---- evaluation entry points ------------------------------------------------

// M(p^i): scalar prediction of a model on one prompt prefix.
template <typename T>
T predict(const Params<T>& params, const ModelConfig& cfg, const PromptPrefix<T>& prefix) {
  Graph<T> g;
  BoundParams<T> pv = bind_params(g, params, false);
  if (cfg.arch == Arch::DeepSet) {
    return g.value(deepset_predict_graph(g, prefix, pv, cfg)).data[0];
  }
  return g.value(transformer_predict_graph(g, prefix, pv, cfg)).data[0];
}

// Predictions for all k+1 prefixes of a prompt (natural demonstration order).
template <typename T>
std::vector<T> forward_all(const Params<T>& params, const ModelConfig& cfg, const Prompt<T>& prompt) {
  Graph<T> g;
  BoundParams<T> pv = bind_params(g, params, false);
  if (cfg.arch == Arch::DeepSet) {
    const Tensor<T>& out = g.value(deepset_forward_all_graph(g, prompt, pv, cfg));
    return out.data;
  }
  if (cfg.mask_mode == MaskMode::Causal) {
    const Tensor<T>& out = g.value(transformer_forward_graph(g, prompt, pv, cfg));
    return out.data;
  }
  // Unmasked attention has no shared-pass shortcut: evaluate each prefix.
  std::vector<T> preds(prompt.k() + 1);
  for (std::size_t i = 0; i <= prompt.k(); ++i) {
    preds[i] = predict(params, cfg, make_prefix(prompt, i));
  }
  return preds;
}

}  // namespace icl
