// Evaluation protocol: paired prompts, oracle rows, report formats, the
// invariance-gap estimator, and the scenario moment re-checks.

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

#include "icl/evaluation.hpp"
#include "icl/models.hpp"
#include "icl/threadpool.hpp"

using icl::EvalRow;
using icl::EvalSpec;
using icl::make_ols_predictor;
using icl::make_ridge_predictor;
using icl::make_zero_predictor;
using icl::Predictor;
using icl::Scenario;
using icl::ThreadPool;

namespace {

const EvalRow* find_row(const std::vector<EvalRow>& rows, const std::string& model, double mu,
                        double sigma, std::size_t k) {
  for (const auto& r : rows) {
    if (r.model == model && r.mu == mu && r.sigma == sigma && r.k == k) return &r;
  }
  return nullptr;
}

}  // namespace

TEST(EvalCurve, OlsIsExactAtNoiselessFullRank) {
  EvalSpec spec;
  spec.scenarios = {{0, 0}};
  spec.k_grid = {10, 15, 20};
  spec.d = 10;
  spec.n = 100;
  spec.seed = 1;
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>({make_ols_predictor<double>()}, spec, pool);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_LE(r.mse, 1e-8) << "k=" << r.k;
    EXPECT_LE(r.mse_clean, 1e-8) << "k=" << r.k;
  }
}

TEST(EvalCurve, ZeroPredictorCalibratesToOne) {
  EvalSpec spec;
  spec.scenarios = {{0, 0}};
  spec.k_grid = {5};
  spec.d = 10;
  spec.n = 2048;
  spec.seed = 2;
  spec.normalized = true;
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>({make_zero_predictor<double>()}, spec, pool);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].mse, 1.0, 0.05);
}

TEST(EvalCurve, RidgeBeatsOlsOnCleanTargetUnderNoise) {
  EvalSpec spec;
  spec.scenarios = {{0, 1}};
  spec.k_grid = {4};
  spec.d = 5;
  spec.n = 4000;
  spec.seed = 3;
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>(
      {make_ols_predictor<double>(), make_ridge_predictor<double>(1.0)}, spec, pool);
  const EvalRow* ols = find_row(rows, "ols", 0, 1, 4);
  const EvalRow* ridge = find_row(rows, "ridge", 0, 1, 4);
  ASSERT_NE(ols, nullptr);
  ASSERT_NE(ridge, nullptr);
  EXPECT_LE(ridge->mse_clean, ols->mse_clean);
}

TEST(EvalCurve, PairedPromptsAcrossPredictorsAndThreads) {
  EvalSpec spec;
  spec.scenarios = {{2, 1}, {0, 0}};
  spec.k_grid = {2, 6};
  spec.d = 4;
  spec.n = 64;
  spec.seed = 4;
  ThreadPool pool1(1), pool4(4);
  auto a = icl::eval_curve<double>(
      {make_ols_predictor<double>(), make_ridge_predictor<double>(std::nullopt)}, spec, pool1);
  auto b = icl::eval_curve<double>(
      {make_ols_predictor<double>(), make_ridge_predictor<double>(std::nullopt)}, spec, pool4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].model, b[i].model);
    EXPECT_EQ(a[i].mse, b[i].mse);
    EXPECT_EQ(a[i].mse_clean, b[i].mse_clean);
  }
}

TEST(EvalCurve, ScenarioMomentsMatchRequestedShift) {
  // Probe predictor re-checks the sampling moments from inside the harness.
  EvalSpec spec;
  spec.scenarios = {{2, 1}};
  spec.k_grid = {9};
  spec.d = 5;
  spec.n = 2000;
  spec.seed = 5;
  struct Stats {
    double sum_x = 0, n_x = 0, sum_eta2 = 0, n_eta = 0;
  };
  auto stats = std::make_shared<Stats>();
  auto mutex = std::make_shared<std::mutex>();
  Predictor<double> probe;
  probe.name = "probe";
  probe.predict = [stats, mutex](const icl::PromptPrefix<double>& prefix) {
    std::lock_guard lk(*mutex);
    const auto& p = *prefix.prompt;
    for (std::size_t r = 0; r <= p.k(); ++r) {
      for (std::size_t c = 0; c < p.d(); ++c) {
        stats->sum_x += p.x_row(r)[c];
        stats->n_x += 1;
      }
      const double eta = p.ys.data[r] - p.clean_y(r);
      stats->sum_eta2 += eta * eta;
      stats->n_eta += 1;
    }
    return 0.0;
  };
  ThreadPool pool(1);
  icl::eval_curve<double>({probe}, spec, pool);
  EXPECT_NEAR(stats->sum_x / stats->n_x, 2.0, 0.02);
  EXPECT_NEAR(stats->sum_eta2 / stats->n_eta, 1.0, 0.05);
}

TEST(EvalCurve, UnsupportedContextLengthsAreFlagged) {
  EvalSpec spec;
  spec.scenarios = {{0, 0}};
  spec.k_grid = {2, 40};
  spec.d = 3;
  spec.n = 4;
  spec.seed = 6;
  icl::ModelConfig cfg;
  cfg.arch = icl::Arch::Transformer;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.hidden_dim = 8;
  cfg.max_positions = 11;  // supports k <= 5
  cfg.d = 3;
  icl::Rng rng(7);
  auto params = std::make_shared<icl::Params<double>>(icl::init_params<double>(cfg, rng, false));
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>({icl::make_model_predictor<double>("tiny", params, cfg)},
                                      spec, pool);
  const EvalRow* ok = find_row(rows, "tiny", 0, 0, 2);
  const EvalRow* flagged = find_row(rows, "tiny", 0, 0, 40);
  ASSERT_NE(ok, nullptr);
  ASSERT_NE(flagged, nullptr);
  EXPECT_TRUE(ok->supported);
  EXPECT_FALSE(flagged->supported);
  EXPECT_EQ(flagged->n, 0u);
  EXPECT_TRUE(std::isnan(flagged->mse));
}

// ---- invariance ---------------------------------------------------------------

TEST(InvarianceGap, OraclesAreExactlyInvariant) {
  for (auto pred : {make_ols_predictor<double>(), make_ridge_predictor<double>(1.0)}) {
    auto row = icl::invariance_gap<double>(pred, Scenario{2, 1}, 8, 5, 16, 4, 11);
    EXPECT_LE(row.rel_gap, 1e-12) << pred.name;
    EXPECT_GE(row.mean_gap, 0.0);
  }
}

TEST(InvarianceGap, DeepSetWithinRounding) {
  icl::ModelConfig cfg;
  cfg.arch = icl::Arch::DeepSet;
  cfg.d = 4;
  cfg.deepset_width = 16;
  cfg.deepset_depth = 2;
  icl::Rng rng(12);
  auto params = std::make_shared<icl::Params<double>>(icl::init_params<double>(cfg, rng, false));
  auto row = icl::invariance_gap<double>(icl::make_model_predictor<double>("ds", params, cfg),
                                         Scenario{0, 0}, 10, 4, 16, 4, 13);
  EXPECT_LE(row.rel_gap, 1e-9);
}

TEST(InvarianceGap, IdentityPermutationGivesExactZero) {
  icl::Rng rng(14);
  icl::TaskConfig task{.d = 4, .mu = 0, .sigma = 0, .k = 6};
  auto prompt = icl::sample_prompt<double>(task, rng);
  auto prefix = icl::make_prefix(prompt, 6);
  std::vector<std::uint32_t> identity{0, 1, 2, 3, 4, 5};
  auto pred = make_ols_predictor<double>();
  EXPECT_EQ(pred.predict(prefix), pred.predict(icl::permute_demos(prefix, identity)));
}

TEST(InvarianceGap, RejectsTrivialK) {
  EXPECT_THROW(
      icl::invariance_gap<double>(make_ols_predictor<double>(), Scenario{0, 0}, 1, 4, 4, 2, 1),
      icl::ConfigError);
}

// ---- reports -----------------------------------------------------------------

TEST(ReportCsv, EmptyReportIsHeaderOnly) {
  std::ostringstream os;
  icl::write_report_csv({}, os);
  EXPECT_EQ(os.str(), "model,arch,pe_mode,mask_mode,mu,sigma,k,mse,mse_clean,sem,n\n");
}

TEST(ReportCsv, RoundTripAndDeterministicBytes) {
  EvalSpec spec;
  spec.scenarios = {{0, 0}, {2, 0}};
  spec.k_grid = {1, 3};
  spec.d = 3;
  spec.n = 16;
  spec.seed = 8;
  ThreadPool pool(1);
  auto render = [&] {
    auto rows = icl::eval_curve<double>(
        {make_ols_predictor<double>(), make_zero_predictor<double>()}, spec, pool);
    std::ostringstream os;
    icl::write_report_csv(rows, os);
    return os.str();
  };
  const std::string csv = render();
  EXPECT_EQ(csv, render());

  std::istringstream is(csv);
  auto parsed = icl::parse_report_csv(is);
  EXPECT_EQ(parsed.size(), 2u * 2u * 2u);
  std::ostringstream os2;
  icl::write_report_csv(parsed, os2);
  EXPECT_EQ(os2.str(), csv);
}

TEST(ReportCsv, RowsSortedByModelThenScenarioThenK) {
  EvalSpec spec;
  spec.scenarios = {{2, 0}, {0, 0}};
  spec.k_grid = {3, 1};  // also exercises the sorted-grid validation
  spec.d = 3;
  spec.n = 2;
  spec.seed = 9;
  EXPECT_THROW(spec.validate(), icl::ConfigError);
  spec.k_grid = {1, 3};
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>(
      {make_zero_predictor<double>(), make_ols_predictor<double>()}, spec, pool);
  std::ostringstream os;
  icl::write_report_csv(rows, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  std::vector<std::string> model_col;
  while (std::getline(is, line)) model_col.push_back(line.substr(0, line.find(',')));
  EXPECT_TRUE(std::is_sorted(model_col.begin(), model_col.end()));
  EXPECT_EQ(model_col.front(), "ols");
  EXPECT_EQ(model_col.back(), "zero");
}

TEST(Markdown, SingleRowReportAndOrderingLine) {
  EvalSpec spec;
  spec.scenarios = {{0, 0}};
  spec.k_grid = {2, 4, 8, 20, 40};
  spec.d = 4;
  spec.n = 64;
  spec.seed = 10;
  ThreadPool pool(1);
  auto rows = icl::eval_curve<double>(
      {make_ols_predictor<double>(), make_ridge_predictor<double>(1.0)}, spec, pool);
  const std::string md = icl::summarize_markdown(rows, {}, spec.d);
  EXPECT_NE(md.find("mu=0, sigma=0"), std::string::npos);
  EXPECT_NE(md.find("| ols |"), std::string::npos);
  // lambda=1 biases the noiseless fit, so OLS dominates at k >= d
  EXPECT_NE(md.find("ols <= ridge for k >= d: true"), std::string::npos);
  EXPECT_EQ(md, icl::summarize_markdown(rows, {}, spec.d));
}

TEST(Markdown, IncludesInvarianceTable) {
  auto row = icl::invariance_gap<double>(make_ols_predictor<double>(), Scenario{0, 0}, 4, 3, 4, 2, 15);
  const std::string md = icl::summarize_markdown({}, {row}, 3);
  EXPECT_NE(md.find("Invariance gaps"), std::string::npos);
  EXPECT_NE(md.find("| ols |"), std::string::npos);
}
