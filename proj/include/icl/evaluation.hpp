#pragma once

// Experimental protocol: error-vs-k curves over the (mu, sigma) shift grid and
// permutation-invariance gap measurement.
//
// Every predictor inside one run sees exactly the same prompts: each
// (scenario, k) cell draws from a child stream keyed by the cell, and the
// prompt bytes are checksummed per predictor pass as a guard. Reported errors
// come in two flavors, against the observed (possibly noisy) target and
// against the noiseless w.x_query.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "icl/errors.hpp"
#include "icl/models.hpp"
#include "icl/oracles.hpp"
#include "icl/rng.hpp"
#include "icl/taskgen.hpp"
#include "icl/threadpool.hpp"

namespace icl {

struct Scenario {
  double mu = 0.0;
  double sigma = 0.0;
};

struct EvalSpec {
  std::vector<Scenario> scenarios;  // defaults to the mu x sigma shift grid
  std::vector<std::size_t> k_grid;  // sorted ascending, deduplicated
  std::size_t n = 1024;             // prompts per (scenario, k)
  std::uint64_t seed = 0;
  std::size_t d = 10;
  bool normalized = true;  // report MSE/d

  static EvalSpec defaults(std::size_t d) {
    EvalSpec s;
    s.d = d;
    s.scenarios = {{0, 0}, {2, 0}, {4, 0}, {0, 1}, {2, 1}, {4, 1}};
    for (std::size_t k = 0; k <= d; ++k) s.k_grid.push_back(k);
    for (std::size_t k = 0; k <= 100; k += 5) s.k_grid.push_back(k);
    std::sort(s.k_grid.begin(), s.k_grid.end());
    s.k_grid.erase(std::unique(s.k_grid.begin(), s.k_grid.end()), s.k_grid.end());
    return s;
  }

  void validate() const {
    if (n < 1) throw ConfigError("eval.n must be >= 1");
    if (d < 1) throw ConfigError("eval.d must be >= 1");
    if (scenarios.empty()) throw ConfigError("eval.scenarios must not be empty");
    if (k_grid.empty()) throw ConfigError("eval.k_grid must not be empty");
    if (!std::is_sorted(k_grid.begin(), k_grid.end())) {
      throw ConfigError("eval.k_grid must be sorted ascending");
    }
    for (const Scenario& s : scenarios) {
      if (s.sigma < 0) throw ConfigError("eval.scenarios: sigma must be >= 0");
    }
  }
};

// A named prediction rule M(p^i). `predict` must be safe to call from
// multiple threads at once.
template <typename T>
struct Predictor {
  std::string name;
  std::string arch = "-";
  std::string pe_mode = "-";
  std::string mask_mode = "-";
  std::size_t max_demos = static_cast<std::size_t>(-1);
  std::function<T(const PromptPrefix<T>&)> predict;
};

template <typename T>
Predictor<T> make_model_predictor(std::string name, std::shared_ptr<const Params<T>> params,
                                  const ModelConfig& cfg) {
  validate_params(*params, cfg);
  Predictor<T> p;
  p.name = std::move(name);
  p.arch = to_string(cfg.arch);
  if (cfg.arch == Arch::Transformer) {
    p.pe_mode = to_string(cfg.pe_mode);
    p.mask_mode = to_string(cfg.mask_mode);
  }
  p.max_demos = cfg.max_demos();
  p.predict = [params, cfg](const PromptPrefix<T>& prefix) {
    return predict(*params, cfg, prefix);
  };
  return p;
}

template <typename T>
Predictor<T> make_ols_predictor() {
  Predictor<T> p;
  p.name = "ols";
  p.predict = [](const PromptPrefix<T>& prefix) { return ols_predict(prefix); };
  return p;
}

// lambda empty = per-scenario default: sigma^2 when the scenario has label
// noise, 0.01 otherwise.
template <typename T>
Predictor<T> make_ridge_predictor(std::optional<double> lambda) {
  Predictor<T> p;
  p.name = "ridge";
  p.predict = [lambda](const PromptPrefix<T>& prefix) {
    const double sigma = prefix.prompt->cfg.sigma;
    const double l = lambda.value_or(sigma > 0 ? sigma * sigma : 0.01);
    return ridge_predict(prefix, RidgeConfig{l});
  };
  return p;
}

template <typename T>
Predictor<T> make_zero_predictor() {
  Predictor<T> p;
  p.name = "zero";
  p.predict = [](const PromptPrefix<T>&) { return T(0); };
  return p;
}

struct EvalRow {
  std::string model;
  std::string arch = "-";
  std::string pe_mode = "-";
  std::string mask_mode = "-";
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t k = 0;
  double mse = 0.0;
  double mse_clean = 0.0;
  double sem = 0.0;
  std::size_t n = 0;
  bool supported = true;
};

struct InvarianceRow {
  std::string model;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t k = 0;
  double mean_gap = 0.0;
  double median_gap = 0.0;
  double max_gap = 0.0;
  double rel_gap = 0.0;  // max of |gap| / (1 + |M(p^k)|)
  std::size_t n_prompts = 0;
  std::size_t n_perms = 0;
};

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t nbytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < nbytes; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t prompt_checksum(const std::vector<Prompt<T>>& prompts) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& p : prompts) {
    h = fnv1a(p.xs.data.data(), p.xs.numel() * sizeof(T), h);
    h = fnv1a(p.ys.data.data(), p.ys.numel() * sizeof(T), h);
    h = fnv1a(p.w.data.data(), p.w.numel() * sizeof(T), h);
  }
  return h;
}

inline void mean_and_sem(const std::vector<double>& xs, double* mean, double* sem) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  *mean = m;
  *sem = xs.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
}

inline bool row_order(const EvalRow& a, const EvalRow& b) {
  return std::tie(a.model, a.mu, a.sigma, a.k) < std::tie(b.model, b.mu, b.sigma, b.k);
}

}  // namespace detail

// Error curves for all predictors over the scenario x k grid, on shared
// prompts. Rows the predictor cannot serve (context longer than its positional
// table) are flagged unsupported rather than failing the run.
template <typename T>
std::vector<EvalRow> eval_curve(const std::vector<Predictor<T>>& predictors, const EvalSpec& spec,
                                ThreadPool& pool) {
  spec.validate();
  struct Cell {
    std::size_t scenario;
    std::size_t k;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < spec.scenarios.size(); ++s)
    for (std::size_t k : spec.k_grid) cells.push_back({s, k});

  std::vector<std::vector<EvalRow>> cell_rows(cells.size());
  Rng root(spec.seed);
  pool.parallel_for(cells.size(), [&](std::size_t ci) {
    const Cell cell = cells[ci];
    const Scenario sc = spec.scenarios[cell.scenario];
    TaskConfig task{spec.d, sc.mu, sc.sigma, cell.k};
    Rng cell_rng = root.child(cell.scenario).child(cell.k);
    std::vector<Prompt<T>> prompts;
    prompts.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) prompts.push_back(sample_prompt<T>(task, cell_rng));

    std::uint64_t checksum = 0;
    bool first = true;
    const double norm = spec.normalized ? static_cast<double>(spec.d) : 1.0;
    for (const Predictor<T>& pred : predictors) {
      EvalRow row;
      row.model = pred.name;
      row.arch = pred.arch;
      row.pe_mode = pred.pe_mode;
      row.mask_mode = pred.mask_mode;
      row.mu = sc.mu;
      row.sigma = sc.sigma;
      row.k = cell.k;
      if (cell.k > pred.max_demos) {
        row.supported = false;
        row.mse = row.mse_clean = row.sem = std::nan("");
        row.n = 0;
        cell_rows[ci].push_back(std::move(row));
        continue;
      }
      const std::uint64_t seen = detail::prompt_checksum(prompts);
      if (first) {
        checksum = seen;
        first = false;
      } else if (seen != checksum) {
        throw NumericError("eval_curve: predictors saw different prompt streams");
      }
      std::vector<double> errs, errs_clean;
      errs.reserve(spec.n);
      errs_clean.reserve(spec.n);
      for (const Prompt<T>& prompt : prompts) {
        auto prefix = make_prefix(prompt, cell.k);
        const double out = static_cast<double>(pred.predict(prefix));
        const double e = out - static_cast<double>(prefix.target_y());
        const double ec = out - static_cast<double>(prefix.clean_target_y());
        errs.push_back(e * e / norm);
        errs_clean.push_back(ec * ec / norm);
      }
      double sem_clean = 0.0;
      detail::mean_and_sem(errs, &row.mse, &row.sem);
      detail::mean_and_sem(errs_clean, &row.mse_clean, &sem_clean);
      row.n = spec.n;
      cell_rows[ci].push_back(std::move(row));
    }
  });

  std::vector<EvalRow> rows;
  for (auto& cr : cell_rows)
    for (auto& r : cr) rows.push_back(std::move(r));
  std::sort(rows.begin(), rows.end(), detail::row_order);
  return rows;
}

// Distribution of |M(p^k) - M(pi(p^k))| over prompts and uniform random
// permutations of the demonstrations.
template <typename T>
InvarianceRow invariance_gap(const Predictor<T>& pred, Scenario sc, std::size_t k, std::size_t d,
                             std::size_t n_prompts, std::size_t n_perms, std::uint64_t seed) {
  if (k < 2) throw ConfigError("invariance_gap: k must be >= 2, permutations are trivial below that");
  if (n_prompts < 1 || n_perms < 1) throw ConfigError("invariance_gap: need n_prompts, n_perms >= 1");
  TaskConfig task{d, sc.mu, sc.sigma, k};
  Rng root = Rng(seed).child(k);
  std::vector<double> gaps;
  gaps.reserve(n_prompts * n_perms);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < n_prompts; ++i) {
    Rng prompt_rng = root.child(2 * i);
    Rng perm_rng = root.child(2 * i + 1);
    const Prompt<T> prompt = sample_prompt<T>(task, prompt_rng);
    auto prefix = make_prefix(prompt, k);
    const double base = static_cast<double>(pred.predict(prefix));
    for (std::size_t t = 0; t < n_perms; ++t) {
      auto perm = random_permutation(k, perm_rng);
      const double other = static_cast<double>(pred.predict(permute_demos(prefix, perm)));
      const double gap = std::abs(base - other);
      gaps.push_back(gap);
      max_rel = std::max(max_rel, gap / (1.0 + std::abs(base)));
    }
  }
  std::sort(gaps.begin(), gaps.end());
  InvarianceRow row;
  row.model = pred.name;
  row.mu = sc.mu;
  row.sigma = sc.sigma;
  row.k = k;
  double sum = 0.0;
  for (double g : gaps) sum += g;
  row.mean_gap = sum / static_cast<double>(gaps.size());
  row.median_gap = gaps[gaps.size() / 2];
  row.max_gap = gaps.back();
  row.rel_gap = max_rel;
  row.n_prompts = n_prompts;
  row.n_perms = n_perms;
  return row;
}

// ---- reports ------------------------------------------------------------------

inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_report_csv(const std::vector<EvalRow>& rows, std::ostream& os) {
  os << "model,arch,pe_mode,mask_mode,mu,sigma,k,mse,mse_clean,sem,n\n";
  std::vector<EvalRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), detail::row_order);
  for (const EvalRow& r : sorted) {
    os << r.model << ',' << r.arch << ',' << r.pe_mode << ',' << r.mask_mode << ','
       << format_g9(r.mu) << ',' << format_g9(r.sigma) << ',' << r.k << ',' << format_g9(r.mse)
       << ',' << format_g9(r.mse_clean) << ',' << format_g9(r.sem) << ',' << r.n << '\n';
  }
}

inline void write_invariance_csv(const std::vector<InvarianceRow>& rows, std::ostream& os) {
  os << "model,mu,sigma,k,mean_gap,median_gap,max_gap,rel_gap,n_prompts,n_perms\n";
  for (const InvarianceRow& r : rows) {
    os << r.model << ',' << format_g9(r.mu) << ',' << format_g9(r.sigma) << ',' << r.k << ','
       << format_g9(r.mean_gap) << ',' << format_g9(r.median_gap) << ',' << format_g9(r.max_gap)
       << ',' << format_g9(r.rel_gap) << ',' << r.n_prompts << ',' << r.n_perms << '\n';
  }
}

inline std::vector<EvalRow> parse_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "model,arch,pe_mode,mask_mode,mu,sigma,k,mse,mse_clean,sem,n") {
    throw IoError("report csv: missing or unexpected header");
  }
  std::vector<EvalRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw IoError("report csv: malformed row '" + line + "'");
    EvalRow r;
    r.model = cells[0];
    r.arch = cells[1];
    r.pe_mode = cells[2];
    r.mask_mode = cells[3];
    r.mu = std::stod(cells[4]);
    r.sigma = std::stod(cells[5]);
    r.k = std::stoul(cells[6]);
    r.mse = std::stod(cells[7]);
    r.mse_clean = std::stod(cells[8]);
    r.sem = std::stod(cells[9]);
    r.n = std::stoul(cells[10]);
    r.supported = r.n > 0;
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<InvarianceRow> parse_invariance_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) ||
      line != "model,mu,sigma,k,mean_gap,median_gap,max_gap,rel_gap,n_prompts,n_perms") {
    throw IoError("invariance csv: missing or unexpected header");
  }
  std::vector<InvarianceRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw IoError("invariance csv: malformed row '" + line + "'");
    InvarianceRow r;
    r.model = cells[0];
    r.mu = std::stod(cells[1]);
    r.sigma = std::stod(cells[2]);
    r.k = std::stoul(cells[3]);
    r.mean_gap = std::stod(cells[4]);
    r.median_gap = std::stod(cells[5]);
    r.max_gap = std::stod(cells[6]);
    r.rel_gap = std::stod(cells[7]);
    r.n_prompts = std::stoul(cells[8]);
    r.n_perms = std::stoul(cells[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace detail {

inline std::string scenario_key(double mu, double sigma) {
  return "mu=" + format_g9(mu) + ", sigma=" + format_g9(sigma);
}

// First model name matching an (arch, pe_mode) pattern, empty if none.
inline std::string find_model(const std::vector<EvalRow>& rows, const std::string& arch,
                              const std::string& pe) {
  for (const EvalRow& r : rows) {
    if (r.arch == arch && (pe.empty() || r.pe_mode == pe)) return r.model;
  }
  return "";
}

// True if a's clean-target mse <= b's at every k >= d where both have data.
inline bool dominates(const std::vector<EvalRow>& rows, const std::string& a, const std::string& b,
                      double mu, double sigma, std::size_t d, bool strict, bool* any) {
  *any = false;
  bool ok = true;
  for (const EvalRow& ra : rows) {
    if (ra.model != a || ra.mu != mu || ra.sigma != sigma || ra.k < d || !ra.supported) continue;
    for (const EvalRow& rb : rows) {
      if (rb.model != b || rb.mu != mu || rb.sigma != sigma || rb.k != ra.k || !rb.supported) continue;
      *any = true;
      ok = ok && (strict ? ra.mse_clean < rb.mse_clean : ra.mse_clean <= rb.mse_clean);
    }
  }
  return ok;
}

}  // namespace detail

// Human-readable summary: one table per scenario (clean-target MSE at a few
// representative context lengths) plus pairwise ordering lines and, when
// given, the invariance-gap table.
inline std::string summarize_markdown(const std::vector<EvalRow>& rows,
                                      const std::vector<InvarianceRow>& inv_rows, std::size_t d) {
  std::ostringstream os;
  std::vector<std::pair<double, double>> scenarios;
  std::vector<std::string> models;
  std::vector<std::size_t> ks;
  for (const EvalRow& r : rows) {
    if (!std::count(scenarios.begin(), scenarios.end(), std::make_pair(r.mu, r.sigma))) {
      scenarios.emplace_back(r.mu, r.sigma);
    }
    if (!std::count(models.begin(), models.end(), r.model)) models.push_back(r.model);
    if (!std::count(ks.begin(), ks.end(), r.k)) ks.push_back(r.k);
  }
  std::sort(scenarios.begin(), scenarios.end());
  std::sort(models.begin(), models.end());
  std::sort(ks.begin(), ks.end());

  // representative context lengths: d/2, d, 2d, 5d, 10d (those present)
  std::vector<std::size_t> selected;
  for (std::size_t want : {d / 2, d, 2 * d, 5 * d, 10 * d}) {
    if (std::count(ks.begin(), ks.end(), want) && !std::count(selected.begin(), selected.end(), want)) {
      selected.push_back(want);
    }
  }
  if (selected.empty()) selected = ks;

  auto cell = [&](const std::string& model, double mu, double sigma, std::size_t k) -> std::string {
    for (const EvalRow& r : rows) {
      if (r.model == model && r.mu == mu && r.sigma == sigma && r.k == k) {
        if (!r.supported) return "unsupported";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", r.mse_clean);
        return buf;
      }
    }
    return "-";
  };

  os << "# Evaluation summary\n\n";
  os << "Clean-target MSE" << " per scenario; columns are context lengths.\n";
  for (auto [mu, sigma] : scenarios) {
    os << "\n## " << detail::scenario_key(mu, sigma) << "\n\n";
    os << "| model |";
    for (std::size_t k : selected) os << " k=" << k << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < selected.size(); ++i) os << "---|";
    os << "\n";
    for (const std::string& m : models) {
      os << "| " << m << " |";
      for (std::size_t k : selected) os << " " << cell(m, mu, sigma, k) << " |";
      os << "\n";
    }

    const std::string deepset = detail::find_model(rows, "deepset", "");
    const std::string learned = detail::find_model(rows, "transformer", "learned");
    const std::string identical = detail::find_model(rows, "transformer", "identical");
    bool any = false;
    os << "\n";
    if (std::count(models.begin(), models.end(), std::string("ols")) &&
        std::count(models.begin(), models.end(), std::string("ridge"))) {
      const bool ok = detail::dominates(rows, "ols", "ridge", mu, sigma, d, false, &any);
      if (any) os << "- ols <= ridge for k >= d: " << (ok ? "true" : "false") << "\n";
    }
    if (!deepset.empty() && !learned.empty()) {
      const bool ok = detail::dominates(rows, deepset, learned, mu, sigma, d, true, &any);
      if (any) os << "- " << deepset << " < " << learned << " for k >= d: " << (ok ? "true" : "false") << "\n";
    }
    if (!identical.empty() && !learned.empty()) {
      const bool ok = detail::dominates(rows, identical, learned, mu, sigma, d, false, &any);
      if (any) os << "- " << identical << " <= " << learned << " for k >= d: " << (ok ? "true" : "false") << "\n";
    }
  }

  if (!inv_rows.empty()) {
    os << "\n## Invariance gaps\n\n";
    os << "| model | mu | sigma | k | mean_gap | max_gap | rel_gap |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const InvarianceRow& r : inv_rows) {
      os << "| " << r.model << " | " << format_g9(r.mu) << " | " << format_g9(r.sigma) << " | "
         << r.k << " | " << format_g9(r.mean_gap) << " | " << format_g9(r.max_gap) << " | "
         << format_g9(r.rel_gap) << " |\n";
    }
  }
  return os.str();
}

}  // namespace icl
