#pragma once

// Training: minimizes the mean-over-prefixes squared error on sampled prompts
// with a staircase curriculum over context length, and persists checkpoints.
//
// Determinism: parameters are initialized from seed-child 0 and step s draws
// its batch from seed-child 1+s, so resuming from a checkpoint at step s
// replays exactly the same stream. Per-prompt gradients are accumulated into a
// fixed number of chunks combined in index order, making the result
// independent of the worker count.
//
// Checkpoint file layout: 8 magic bytes "ICLCKPT1", a little-endian u64 JSON
// header length, the UTF-8 JSON header, then raw little-endian row-major
// tensor payloads. Offsets in the header's tensor directory are relative to
// the end of the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "icl/adam.hpp"
#include "icl/config_io.hpp"
#include "icl/models.hpp"
#include "icl/taskgen.hpp"
#include "icl/threadpool.hpp"

namespace icl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host byte order and assume little-endian");

struct CurriculumConfig {
  std::size_t k_start = 5;
  std::size_t k_increment = 5;
  std::size_t steps_per_stage = 2000;
};

struct TrainConfig {
  std::int64_t steps = 20000;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t k_max = 20;
  CurriculumConfig curriculum;
  std::int64_t eval_every = 100;       // training-log interval (steps)
  std::int64_t checkpoint_every = 0;   // 0 = only the final checkpoint
  std::string precision = "f64";

  void validate() const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
    if (curriculum.k_start > k_max) throw ConfigError("train.curriculum.k_start must be <= k_max");
    if (curriculum.steps_per_stage < 1) throw ConfigError("train.curriculum.steps_per_stage must be >= 1");
    if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (precision != "f64" && precision != "f32") {
      throw ConfigError("train.precision must be 'f64' or 'f32'");
    }
  }
};

inline json train_to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"seed", c.seed},
              {"k_max", c.k_max},
              {"curriculum",
               json{{"k_start", c.curriculum.k_start},
                    {"k_increment", c.curriculum.k_increment},
                    {"steps_per_stage", c.curriculum.steps_per_stage}}},
              {"eval_every", c.eval_every},
              {"checkpoint_every", c.checkpoint_every},
              {"precision", c.precision}};
}

inline TrainConfig train_from_json(const json& j, const std::string& scope = "train") {
  json_require_keys(j,
                    {"steps", "batch_size", "lr", "beta1", "beta2", "eps", "seed", "k_max",
                     "curriculum", "eval_every", "checkpoint_every", "precision"},
                    scope);
  TrainConfig c;
  json_get(j, "steps", c.steps, scope);
  json_get(j, "batch_size", c.batch_size, scope);
  json_get(j, "lr", c.lr, scope);
  json_get(j, "beta1", c.beta1, scope);
  json_get(j, "beta2", c.beta2, scope);
  json_get(j, "eps", c.eps, scope);
  json_get(j, "seed", c.seed, scope);
  json_get(j, "k_max", c.k_max, scope);
  if (j.contains("curriculum")) {
    const json& cur = j.at("curriculum");
    json_require_keys(cur, {"k_start", "k_increment", "steps_per_stage"}, scope + ".curriculum");
    json_get(cur, "k_start", c.curriculum.k_start, scope + ".curriculum");
    json_get(cur, "k_increment", c.curriculum.k_increment, scope + ".curriculum");
    json_get(cur, "steps_per_stage", c.curriculum.steps_per_stage, scope + ".curriculum");
  }
  json_get(j, "eval_every", c.eval_every, scope);
  json_get(j, "checkpoint_every", c.checkpoint_every, scope);
  json_get(j, "precision", c.precision, scope);
  c.validate();
  return c;
}

// ---- objective ---------------------------------------------------------------

// Mean over prompt prefixes of the squared prediction error.
template <typename T>
T icl_loss(const std::vector<T>& preds, const std::vector<T>& targets) {
  if (preds.size() != targets.size()) {
    throw ShapeError("icl_loss: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (preds.empty()) throw ShapeError("icl_loss: empty inputs");
  T acc = T(0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const T e = preds[i] - targets[i];
    acc += e * e;
  }
  return acc / static_cast<T>(preds.size());
}

// Staircase curriculum: k grows by k_increment every steps_per_stage steps,
// clamped to k_max.
inline std::size_t curriculum_k(std::int64_t step, const TrainConfig& cfg) {
  const std::size_t stage = static_cast<std::size_t>(step / cfg.curriculum.steps_per_stage);
  const std::size_t k = cfg.curriculum.k_start + cfg.curriculum.k_increment * stage;
  return k < cfg.k_max ? k : cfg.k_max;
}

// ---- checkpoints ---------------------------------------------------------------

template <typename T>
struct Checkpoint {
  ModelConfig model;
  TaskConfig task;
  TrainConfig train;
  std::int64_t step = 0;
  Params<T> params;
  bool has_adam = false;
  AdamState<T> adam;
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, double>) {
    return "f64";
  } else {
    return "f32";
  }
}

constexpr char kCheckpointMagic[8] = {'I', 'C', 'L', 'C', 'K', 'P', 'T', '1'};

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  // Directory is assembled in name order; offsets are relative to the end of
  // the JSON header.
  std::vector<std::pair<std::string, const Tensor<T>*>> entries;
  for (const auto& [name, t] : ckpt.params) entries.emplace_back("param." + name, &t);
  if (ckpt.has_adam) {
    for (const auto& [name, t] : ckpt.adam.m) entries.emplace_back("adam.m." + name, &t);
    for (const auto& [name, t] : ckpt.adam.v) entries.emplace_back("adam.v." + name, &t);
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries) {
    const std::uint64_t nbytes = t->numel() * sizeof(T);
    dir.push_back(json{{"name", name},
                       {"dtype", detail::dtype_name<T>()},
                       {"shape", t->shape},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  json header{{"format_version", 1},
              {"dtype", detail::dtype_name<T>()},
              {"step", ckpt.step},
              {"model", model_to_json(ckpt.model)},
              {"task", task_to_json(ckpt.task)},
              {"train", train_to_json(ckpt.train)},
              {"rng", json{{"root_key", ckpt.train.seed}, {"next_step", ckpt.step}}},
              {"adam", json{{"present", ckpt.has_adam}, {"t", ckpt.has_adam ? ckpt.adam.t : 0}}},
              {"tensors", dir}};
  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCheckpointMagic, 8);
  const std::uint64_t hlen = header_str.size();
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : entries) {
    os.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->numel() * sizeof(T)));
  }
  if (!os) throw IoError("save_checkpoint: write to '" + path + "' failed");
}

// Header of a checkpoint file without its payload; also used by the CLI to
// pick the right precision before a typed load. `payload_base_out`, when
// given, receives the file offset where tensor payloads start.
inline json read_checkpoint_header(const std::string& path, std::uint64_t* payload_base_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8)) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint '" + path + "': file shorter than magic");
  }
  if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "checkpoint '" + path + "': bad magic bytes");
  }
  std::uint64_t hlen = 0;
  if (!is.read(reinterpret_cast<char*>(&hlen), 8)) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint '" + path + "': missing header length");
  }
  const std::uint64_t file_size = std::filesystem::file_size(path);
  if (16 + hlen > file_size) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint '" + path + "': truncated header");
  }
  std::string header_str(hlen, '\0');
  if (!is.read(header_str.data(), static_cast<std::streamsize>(hlen))) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint '" + path + "': truncated header");
  }
  json header = json::parse(header_str, nullptr, false);
  if (header.is_discarded()) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint '" + path + "': header is not valid JSON");
  }
  if (!header.contains("format_version") || header["format_version"] != 1) {
    throw CheckpointError(CheckpointError::Kind::BadVersion,
                          "checkpoint '" + path + "': unsupported format version");
  }
  if (payload_base_out != nullptr) *payload_base_out = 16 + hlen;
  return header;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::uint64_t payload_base = 0;
  const json header = read_checkpoint_header(path, &payload_base);
  if (header.at("dtype").get<std::string>() != detail::dtype_name<T>()) {
    throw CheckpointError(CheckpointError::Kind::DtypeMismatch,
                          "checkpoint '" + path + "': dtype " + header.at("dtype").get<std::string>() +
                              " does not match requested " + detail::dtype_name<T>());
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  const std::uint64_t file_size = std::filesystem::file_size(path);

  Checkpoint<T> ckpt;
  try {
    ckpt.model = model_from_json(header.at("model"), "checkpoint.model");
    ckpt.task = task_from_json(header.at("task"), "checkpoint.task");
    ckpt.train = train_from_json(header.at("train"), "checkpoint.train");
    ckpt.step = header.at("step").get<std::int64_t>();
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint '" + path + "': " + e.what());
  }
  ckpt.has_adam = header.at("adam").at("present").get<bool>();
  ckpt.adam.t = header.at("adam").at("t").get<std::int64_t>();
  ckpt.adam.lr = static_cast<T>(ckpt.train.lr);
  ckpt.adam.beta1 = static_cast<T>(ckpt.train.beta1);
  ckpt.adam.beta2 = static_cast<T>(ckpt.train.beta2);
  ckpt.adam.eps = static_cast<T>(ckpt.train.eps);

  for (const json& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != detail::dtype_name<T>()) {
      throw CheckpointError(CheckpointError::Kind::DtypeMismatch,
                            "checkpoint tensor '" + name + "': dtype " + dtype);
    }
    const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
    Tensor<T> t(shape);
    if (t.numel() * sizeof(T) != nbytes) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "checkpoint tensor '" + name + "': shape " + t.shape_str() +
                                " does not match payload of " + std::to_string(nbytes) + " bytes");
    }
    if (payload_base + offset + nbytes > file_size) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "checkpoint tensor '" + name + "': payload extends past end of file");
    }
    is.seekg(static_cast<std::streamoff>(payload_base + offset));
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(nbytes))) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "checkpoint tensor '" + name + "': short read");
    }
    if (name.rfind("param.", 0) == 0) {
      ckpt.params.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("adam.m.", 0) == 0) {
      ckpt.adam.m.emplace(name.substr(7), std::move(t));
    } else if (name.rfind("adam.v.", 0) == 0) {
      ckpt.adam.v.emplace(name.substr(7), std::move(t));
    } else {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint tensor '" + name + "': unknown section");
    }
  }
  try {
    validate_params(ckpt.params, ckpt.model);
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          "checkpoint '" + path + "': " + e.what());
  }
  return ckpt;
}

// ---- training loop ----------------------------------------------------------

// Gradients are accumulated per chunk and chunks are combined in index order;
// the chunk count is a constant so the result does not depend on the pool size.
inline constexpr std::size_t kGradChunks = 16;

template <typename T>
struct StepCallback {
  std::function<void(std::int64_t step, std::size_t k, double loss)> on_log;
  std::function<void(const Checkpoint<T>&, std::int64_t step)> on_checkpoint;
};

template <typename T>
Checkpoint<T> train(const ModelConfig& model_cfg, const TaskConfig& task_cfg,
                    const TrainConfig& train_cfg, ThreadPool& pool,
                    const StepCallback<T>& cb = {}, const Checkpoint<T>* resume = nullptr) {
  model_cfg.validate();
  task_cfg.validate();
  train_cfg.validate();
  if (model_cfg.arch == Arch::Transformer && model_cfg.pe_mode == PeMode::Learned &&
      model_cfg.max_positions < 2 * train_cfg.k_max + 1) {
    throw ConfigError("model.max_positions must be >= 2*k_max+1 for learned positional encodings");
  }

  Rng root(train_cfg.seed);
  Checkpoint<T> ckpt;
  ckpt.model = model_cfg;
  ckpt.task = task_cfg;
  ckpt.train = train_cfg;
  ckpt.has_adam = true;
  ckpt.adam.lr = static_cast<T>(train_cfg.lr);
  ckpt.adam.beta1 = static_cast<T>(train_cfg.beta1);
  ckpt.adam.beta2 = static_cast<T>(train_cfg.beta2);
  ckpt.adam.eps = static_cast<T>(train_cfg.eps);
  if (resume != nullptr) {
    ckpt.params = resume->params;
    ckpt.adam = resume->adam;
    ckpt.step = resume->step;
    if (!resume->has_adam) ckpt.adam.t = 0;
  } else {
    Rng init_rng = root.child(0);
    ckpt.params = init_params<T>(model_cfg, init_rng);
  }

  const std::size_t batch = train_cfg.batch_size;
  const std::size_t n_chunks = batch < kGradChunks ? batch : kGradChunks;
  std::vector<Params<T>> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks);

  for (std::int64_t step = ckpt.step; step < train_cfg.steps; ++step) {
    const std::size_t k = curriculum_k(step, train_cfg);
    TaskConfig step_task = task_cfg;
    step_task.k = k;

    Rng step_rng = root.child(1 + static_cast<std::uint64_t>(step));
    std::vector<Prompt<T>> prompts;
    prompts.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) prompts.push_back(sample_prompt<T>(step_task, step_rng));

    pool.parallel_for(n_chunks, [&](std::size_t c) {
      Params<T> grads;
      double loss_sum = 0.0;
      const std::size_t lo = c * batch / n_chunks;
      const std::size_t hi = (c + 1) * batch / n_chunks;
      for (std::size_t b = lo; b < hi; ++b) {
        Graph<T> g;
        BoundParams<T> pv = bind_params(g, ckpt.params, true);
        Var loss = train_loss_graph(g, prompts[b], pv, model_cfg);
        g.backward(loss);
        loss_sum += static_cast<double>(g.value(loss).data[0]);
        for (const auto& [name, var] : pv.vars) {
          Tensor<T> grad = g.grad(var);
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, std::move(grad));
          } else {
            for (std::size_t i = 0; i < grad.numel(); ++i) it->second.data[i] += grad.data[i];
          }
        }
      }
      chunk_grads[c] = std::move(grads);
      chunk_loss[c] = loss_sum;
    });

    Params<T> grads;
    double batch_loss = 0.0;
    for (std::size_t c = 0; c < n_chunks; ++c) {
      params_accumulate(grads, chunk_grads[c]);
      batch_loss += chunk_loss[c];
      chunk_grads[c].clear();
    }
    params_scale(grads, T(1) / static_cast<T>(batch));
    batch_loss /= static_cast<double>(batch);
    if (!std::isfinite(batch_loss)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    }

    adam_update(ckpt.params, grads, ckpt.adam);
    ckpt.step = step + 1;

    if (cb.on_log && (step % train_cfg.eval_every == 0 || step + 1 == train_cfg.steps)) {
      cb.on_log(step, k, batch_loss);
    }
    if (cb.on_checkpoint && train_cfg.checkpoint_every > 0 &&
        (step + 1) % train_cfg.checkpoint_every == 0 && step + 1 != train_cfg.steps) {
      cb.on_checkpoint(ckpt, step + 1);
    }
  }
  return ckpt;
}

}  // namespace icl
