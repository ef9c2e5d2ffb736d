// icl_lab: train in-context linear-regression models, evaluate them against
// OLS/ridge baselines over distribution-shift grids, and measure permutation
// invariance.
//
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure,
// 4 I/O failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icl/config_io.hpp"
#include "icl/evaluation.hpp"
#include "icl/models.hpp"
#include "icl/taskgen.hpp"
#include "icl/threadpool.hpp"
#include "icl/training.hpp"

namespace fs = std::filesystem;
using icl::json;

namespace {

std::size_t resolve_threads(std::size_t flag_threads) {
  if (flag_threads > 0) return flag_threads;
  if (const char* env = std::getenv("ICL_LAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return icl::ThreadPool::default_threads();
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw icl::ConfigError("config file '" + path + "' cannot be opened");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw icl::ConfigError("config file '" + path + "' is not valid JSON");
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw icl::IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw icl::IoError("write to '" + path + "' failed");
}

struct RunConfig {
  icl::ModelConfig model;
  icl::TaskConfig task;
  icl::TrainConfig train;
};

// Full run configuration; the task dimension is authoritative for the model.
RunConfig parse_run_config(const json& j) {
  icl::json_require_keys(j, {"model", "task", "train", "eval"}, "config");
  RunConfig cfg;
  if (j.contains("task")) cfg.task = icl::task_from_json(j.at("task"));
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (m.contains("d") && m.at("d").get<std::size_t>() != cfg.task.d) {
      throw icl::ConfigError("model.d conflicts with task.d; set the dimension under task");
    }
    cfg.model = icl::model_from_json(m);
  }
  cfg.model.d = cfg.task.d;
  if (j.contains("train")) cfg.train = icl::train_from_json(j.at("train"));
  return cfg;
}

icl::EvalSpec eval_spec_from_json(const json& j, std::size_t d) {
  icl::EvalSpec spec = icl::EvalSpec::defaults(d);
  icl::json_require_keys(j, {"scenarios", "k_grid", "n", "seed", "normalized"}, "eval");
  if (j.contains("scenarios")) {
    spec.scenarios.clear();
    for (const json& s : j.at("scenarios")) {
      if (!s.is_array() || s.size() != 2) {
        throw icl::ConfigError("eval.scenarios entries must be [mu, sigma] pairs");
      }
      spec.scenarios.push_back({s[0].get<double>(), s[1].get<double>()});
    }
  }
  if (j.contains("k_grid")) {
    spec.k_grid = j.at("k_grid").get<std::vector<std::size_t>>();
  }
  icl::json_get(j, "n", spec.n, "eval");
  icl::json_get(j, "seed", spec.seed, "eval");
  icl::json_get(j, "normalized", spec.normalized, "eval");
  spec.validate();
  return spec;
}

json eval_spec_to_json(const icl::EvalSpec& spec) {
  json scenarios = json::array();
  for (const auto& s : spec.scenarios) scenarios.push_back(json::array({s.mu, s.sigma}));
  return json{{"scenarios", scenarios},
              {"k_grid", spec.k_grid},
              {"n", spec.n},
              {"seed", spec.seed},
              {"normalized", spec.normalized}};
}

std::string loss_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::string resume_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
};

template <typename T>
void run_train_typed(const RunConfig& cfg, const TrainArgs& args) {
  icl::ThreadPool pool(resolve_threads(args.threads));
  std::ofstream log(fs::path(args.out_dir) / "train_log.csv", std::ios::trunc);
  if (!log) throw icl::IoError("cannot open training log in '" + args.out_dir + "'");
  log << "step,k,loss\n";

  icl::StepCallback<T> cb;
  cb.on_log = [&](std::int64_t step, std::size_t k, double loss) {
    log << step << ',' << k << ',' << loss_g17(loss) << '\n';
    log.flush();
  };
  cb.on_checkpoint = [&](const icl::Checkpoint<T>& ckpt, std::int64_t step) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%08lld.ickpt", static_cast<long long>(step));
    icl::save_checkpoint(ckpt, (fs::path(args.out_dir) / name).string());
  };

  std::optional<icl::Checkpoint<T>> resume;
  if (!args.resume_path.empty()) resume = icl::load_checkpoint<T>(args.resume_path);
  auto final_ckpt = icl::train<T>(cfg.model, cfg.task, cfg.train, pool, cb,
                                  resume ? &*resume : nullptr);
  icl::save_checkpoint(final_ckpt, (fs::path(args.out_dir) / "checkpoint_final.ickpt").string());
}

int run_train(const TrainArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = parse_run_config(load_json_file(args.config_path));
  if (args.seed_set) cfg.train.seed = args.seed;
  cfg.model.validate();
  cfg.task.validate();
  cfg.train.validate();

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw icl::IoError("cannot create output directory '" + args.out_dir + "'");
  json effective{{"model", icl::model_to_json(cfg.model)},
                 {"task", icl::task_to_json(cfg.task)},
                 {"train", icl::train_to_json(cfg.train)}};
  write_text_file((fs::path(args.out_dir) / "effective_config.json").string(), effective.dump(2) + "\n");

  if (cfg.train.precision == "f32") {
    run_train_typed<float>(cfg, args);
  } else {
    run_train_typed<double>(cfg, args);
  }
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> names;
  std::string config_path;
  std::string out_csv;
  bool with_ols = false;
  std::string ridge;  // empty = off, "auto" or a lambda value
  bool with_zero = false;
  std::size_t d = 10;
  bool d_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

template <typename T>
std::vector<icl::EvalRow> eval_models_typed(const EvalArgs& args, const icl::EvalSpec& spec) {
  std::vector<icl::Predictor<T>> predictors;
  for (std::size_t i = 0; i < args.checkpoints.size(); ++i) {
    auto ckpt = icl::load_checkpoint<T>(args.checkpoints[i]);
    if (ckpt.task.d != spec.d) {
      throw icl::ConfigError("checkpoint '" + args.checkpoints[i] + "' has d=" +
                             std::to_string(ckpt.task.d) + " but the evaluation uses d=" +
                             std::to_string(spec.d));
    }
    const std::string name = i < args.names.size() ? args.names[i] : stem_of(args.checkpoints[i]);
    auto params = std::make_shared<icl::Params<T>>(std::move(ckpt.params));
    predictors.push_back(icl::make_model_predictor<T>(name, params, ckpt.model));
  }
  if (args.with_ols) predictors.push_back(icl::make_ols_predictor<T>());
  if (!args.ridge.empty()) {
    std::optional<double> lambda;
    if (args.ridge != "auto") {
      try {
        lambda = std::stod(args.ridge);
      } catch (const std::exception&) {
        throw icl::ConfigError("--with-ridge expects a number or 'auto', got '" + args.ridge + "'");
      }
      if (*lambda < 0) throw icl::ConfigError("--with-ridge lambda must be >= 0");
    }
    predictors.push_back(icl::make_ridge_predictor<T>(lambda));
  }
  if (args.with_zero) predictors.push_back(icl::make_zero_predictor<T>());
  if (predictors.empty()) {
    throw icl::ConfigError("eval: nothing to evaluate; pass --checkpoint or an oracle flag");
  }
  icl::ThreadPool pool(resolve_threads(args.threads));
  return icl::eval_curve<T>(predictors, spec, pool);
}

int run_eval(EvalArgs& args) {
  // The dimension comes from the checkpoints when present.
  std::string dtype = "f64";
  if (!args.checkpoints.empty()) {
    const json header = icl::read_checkpoint_header(args.checkpoints.front());
    dtype = header.at("dtype").get<std::string>();
    const std::size_t ckpt_d = header.at("task").at("d").get<std::size_t>();
    if (args.d_set && args.d != ckpt_d) {
      throw icl::ConfigError("--d " + std::to_string(args.d) + " conflicts with checkpoint d=" +
                             std::to_string(ckpt_d));
    }
    args.d = ckpt_d;
    for (const auto& path : args.checkpoints) {
      if (icl::read_checkpoint_header(path).at("dtype").get<std::string>() != dtype) {
        throw icl::ConfigError("checkpoints mix f32 and f64 payloads");
      }
    }
  }

  icl::EvalSpec spec = icl::EvalSpec::defaults(args.d);
  if (!args.config_path.empty()) {
    const json j = load_json_file(args.config_path);
    icl::json_require_keys(j, {"model", "task", "train", "eval"}, "config");
    if (j.contains("eval")) spec = eval_spec_from_json(j.at("eval"), args.d);
  }
  if (args.seed_set) spec.seed = args.seed;

  std::vector<icl::EvalRow> rows = dtype == "f32" ? eval_models_typed<float>(args, spec)
                                                  : eval_models_typed<double>(args, spec);

  std::ostringstream csv;
  icl::write_report_csv(rows, csv);
  write_text_file(args.out_csv, csv.str());
  json effective{{"eval", eval_spec_to_json(spec)},
                 {"checkpoints", args.checkpoints},
                 {"with_ols", args.with_ols},
                 {"with_ridge", args.ridge.empty() ? "off" : args.ridge},
                 {"with_zero", args.with_zero}};
  write_text_file(args.out_csv + ".config.json", effective.dump(2) + "\n");
  std::cout << icl::summarize_markdown(rows, {}, spec.d);
  return 0;
}

// ---- invariance -----------------------------------------------------------------

struct InvArgs {
  std::string checkpoint;
  std::string out_csv;
  std::vector<std::size_t> ks{5, 20, 50};
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n_prompts = 32;
  std::size_t n_perms = 8;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string name;
};

template <typename T>
int run_invariance_typed(const InvArgs& args) {
  auto ckpt = icl::load_checkpoint<T>(args.checkpoint);
  auto params = std::make_shared<icl::Params<T>>(std::move(ckpt.params));
  const std::string name = args.name.empty() ? stem_of(args.checkpoint) : args.name;
  auto pred = icl::make_model_predictor<T>(name, params, ckpt.model);

  std::vector<icl::InvarianceRow> rows;
  for (std::size_t k : args.ks) {
    if (k < 2) {
      std::cerr << "warning: k=" << k << " has no nontrivial permutations, skipping\n";
      continue;
    }
    if (k > pred.max_demos) {
      std::cerr << "warning: k=" << k << " exceeds the model's positional table, skipping\n";
      continue;
    }
    rows.push_back(icl::invariance_gap<T>(pred, icl::Scenario{args.mu, args.sigma}, k,
                                          ckpt.task.d, args.n_prompts, args.n_perms, args.seed));
  }
  std::ostringstream csv;
  icl::write_invariance_csv(rows, csv);
  write_text_file(args.out_csv, csv.str());
  std::cout << icl::summarize_markdown({}, rows, ckpt.task.d);
  return 0;
}

int run_invariance(const InvArgs& args) {
  const json header = icl::read_checkpoint_header(args.checkpoint);
  if (header.at("dtype").get<std::string>() == "f32") return run_invariance_typed<float>(args);
  return run_invariance_typed<double>(args);
}

// ---- datagen -----------------------------------------------------------------

struct DatagenArgs {
  icl::TaskConfig task;
  std::size_t n = 10;
  std::uint64_t seed = 0;
  std::string out_csv;
  std::string emit_w;
};

int run_datagen(const DatagenArgs& args) {
  args.task.validate();
  icl::Rng root(args.seed);
  std::vector<icl::Prompt<double>> prompts;
  prompts.reserve(args.n);
  for (std::size_t i = 0; i < args.n; ++i) {
    icl::Rng child = root.child(i);
    prompts.push_back(icl::sample_prompt<double>(args.task, child));
  }
  std::ostringstream os;
  icl::write_prompts_csv(os, prompts, args.task.d);
  write_text_file(args.out_csv, os.str());
  if (!args.emit_w.empty()) {
    std::ostringstream ws;
    icl::write_weights_csv(ws, prompts, args.task.d);
    write_text_file(args.emit_w, ws.str());
  }
  return 0;
}

// ---- report -----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> eval_csvs;
  std::vector<std::string> invariance_csvs;
  std::size_t d = 10;
  std::string out;
};

int run_report(const ReportArgs& args) {
  std::vector<icl::EvalRow> rows;
  for (const auto& path : args.eval_csvs) {
    std::ifstream is(path);
    if (!is) throw icl::IoError("cannot open eval csv '" + path + "'");
    for (auto& r : icl::parse_report_csv(is)) rows.push_back(std::move(r));
  }
  std::vector<icl::InvarianceRow> inv;
  for (const auto& path : args.invariance_csvs) {
    std::ifstream is(path);
    if (!is) throw icl::IoError("cannot open invariance csv '" + path + "'");
    for (auto& r : icl::parse_invariance_csv(is)) inv.push_back(std::move(r));
  }
  const std::string md = icl::summarize_markdown(rows, inv, args.d);
  if (args.out.empty()) {
    std::cout << md;
  } else {
    write_text_file(args.out, md);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"in-context linear-regression laboratory"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
  train_cmd->add_option("--config", train_args.config_path, "JSON run configuration");
  train_cmd->add_option("--out-dir", train_args.out_dir, "output directory")->required();
  train_cmd->add_option("--resume", train_args.resume_path, "checkpoint to resume from");
  train_cmd->add_option("--seed", train_args.seed, "override train.seed")
      ->each([&](const std::string&) { train_args.seed_set = true; });
  train_cmd->add_option("--threads", train_args.threads,
                        "worker threads (default: ICL_LAB_THREADS or hardware)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "error-vs-k curves over the shift grid");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoints, "model checkpoint (repeatable)");
  eval_cmd->add_option("--name", eval_args.names, "report name for the matching --checkpoint");
  eval_cmd->add_option("--config", eval_args.config_path, "JSON run configuration (eval section)");
  eval_cmd->add_option("--out", eval_args.out_csv, "output CSV path")->required();
  eval_cmd->add_flag("--with-ols", eval_args.with_ols, "include the OLS baseline");
  eval_cmd->add_option("--with-ridge", eval_args.ridge,
                       "include ridge; pass a lambda or 'auto' (sigma^2, 0.01 fallback)");
  eval_cmd->add_flag("--with-zero", eval_args.with_zero, "include the zero predictor");
  eval_cmd->add_option("--d", eval_args.d, "input dimension for oracle-only runs")
      ->each([&](const std::string&) { eval_args.d_set = true; })
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed, "override eval.seed")
      ->each([&](const std::string&) { eval_args.seed_set = true; });
  eval_cmd->add_option("--threads", eval_args.threads,
                       "worker threads (default: ICL_LAB_THREADS or hardware)");

  InvArgs inv_args;
  auto* inv_cmd = app.add_subcommand("invariance", "permutation-invariance gap of a checkpoint");
  inv_cmd->add_option("--checkpoint", inv_args.checkpoint, "model checkpoint")->required();
  inv_cmd->add_option("--out", inv_args.out_csv, "output CSV path")->required();
  inv_cmd->add_option("--k", inv_args.ks, "context lengths")->capture_default_str();
  inv_cmd->add_option("--mu", inv_args.mu, "input mean scale")->capture_default_str();
  inv_cmd->add_option("--sigma", inv_args.sigma, "label noise scale")->capture_default_str();
  inv_cmd->add_option("--n-prompts", inv_args.n_prompts, "prompts per k")->capture_default_str();
  inv_cmd->add_option("--n-perms", inv_args.n_perms, "permutations per prompt")->capture_default_str();
  inv_cmd->add_option("--seed", inv_args.seed, "stream seed")->capture_default_str();
  inv_cmd->add_option("--name", inv_args.name, "report name (default: checkpoint stem)");
  inv_cmd->add_option("--threads", inv_args.threads, "worker threads");

  DatagenArgs gen_args;
  auto* gen_cmd = app.add_subcommand("datagen", "dump sampled prompts as CSV");
  gen_cmd->add_option("--d", gen_args.task.d, "input dimension")->capture_default_str();
  gen_cmd->add_option("--mu", gen_args.task.mu, "input mean scale")->capture_default_str();
  gen_cmd->add_option("--sigma", gen_args.task.sigma, "label noise scale")->capture_default_str();
  gen_cmd->add_option("--k", gen_args.task.k, "demonstrations per prompt")->capture_default_str();
  gen_cmd->add_option("--n", gen_args.n, "number of prompts")->capture_default_str();
  gen_cmd->add_option("--seed", gen_args.seed, "stream seed")->capture_default_str();
  gen_cmd->add_option("--out", gen_args.out_csv, "output CSV path")->required();
  gen_cmd->add_option("--emit-w", gen_args.emit_w, "also dump hidden weights to this CSV");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "markdown summary from saved CSVs");
  report_cmd->add_option("--eval", report_args.eval_csvs, "eval report CSV (repeatable)");
  report_cmd->add_option("--invariance", report_args.invariance_csvs,
                         "invariance CSV (repeatable)");
  report_cmd->add_option("--d", report_args.d, "input dimension for column selection")
      ->capture_default_str();
  report_cmd->add_option("--out", report_args.out, "write summary here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (inv_cmd->parsed()) return run_invariance(inv_args);
    if (gen_cmd->parsed()) return run_datagen(gen_args);
    if (report_cmd->parsed()) return run_report(report_args);
  } catch (const icl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const icl::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 2;
  } catch (const icl::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const icl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const icl::IoError& e) {
    std::cerr << "i/o failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
