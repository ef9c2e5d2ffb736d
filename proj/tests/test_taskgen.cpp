// Prompt sampling: distribution moments, determinism, prefix views and
// demonstration permutations, and the datagen CSV dump.

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "icl/rng.hpp"
#include "icl/taskgen.hpp"

using icl::make_prefix;
using icl::permute_demos;
using icl::Prompt;
using icl::PromptPrefix;
using icl::Rng;
using icl::sample_prompt;
using icl::TaskConfig;

TEST(Rng, SameSeedSameStream) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, ChildStreamsReproducibleAndDistinct) {
  Rng root(9);
  Rng c1 = root.child(1);
  Rng c1b = Rng(9).child(1);
  Rng c2 = root.child(2);
  EXPECT_EQ(c1.next_u64(), c1b.next_u64());
  EXPECT_NE(Rng(9).child(1).next_u64(), c2.next_u64());
}

TEST(Rng, ChildDerivationIgnoresParentConsumption) {
  Rng root(77);
  const std::uint64_t before = root.child(5).next_u64();
  root.next_u64();
  root.gaussian();
  EXPECT_EQ(root.child(5).next_u64(), before);
}

TEST(Rng, Uniform01InRange) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform01();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, CrossStreamCorrelationSmall) {
  const int n = 10000;
  Rng root(2024);
  Rng s1 = root.child(1), s2 = root.child(2);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = s1.gaussian(), y = s2.gaussian();
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double corr = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  EXPECT_LE(std::abs(corr), 0.02);
}

TEST(Taskgen, NoiselessLabelsAreExactDotProducts) {
  TaskConfig cfg{.d = 7, .mu = 0.0, .sigma = 0.0, .k = 12};
  Rng rng(5);
  auto p = sample_prompt<double>(cfg, rng);
  for (std::size_t r = 0; r <= cfg.k; ++r) {
    EXPECT_EQ(p.ys.data[r], icl::dot(p.w.data.data(), p.x_row(r), cfg.d));
  }
}

TEST(Taskgen, SamplingIsDeterministic) {
  TaskConfig cfg{.d = 4, .mu = 2.0, .sigma = 1.0, .k = 6};
  Rng r1(42), r2(42);
  auto p1 = sample_prompt<double>(cfg, r1);
  auto p2 = sample_prompt<double>(cfg, r2);
  EXPECT_EQ(p1.xs.data, p2.xs.data);
  EXPECT_EQ(p1.ys.data, p2.ys.data);
  EXPECT_EQ(p1.w.data, p2.w.data);
}

namespace {

// Per-coordinate sample mean/variance over many drawn inputs.
void input_moments(double mu, std::size_t n_inputs, std::vector<double>* means,
                   std::vector<double>* vars) {
  TaskConfig cfg{.d = 10, .mu = mu, .sigma = 0.0, .k = 9};
  Rng rng(777);
  const std::size_t rows = cfg.k + 1;
  const std::size_t n_prompts = n_inputs / rows;
  std::vector<double> sum(cfg.d, 0.0), sumsq(cfg.d, 0.0);
  for (std::size_t i = 0; i < n_prompts; ++i) {
    Rng child = rng.child(i);
    auto p = sample_prompt<double>(cfg, child);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cfg.d; ++j) {
        const double x = p.x_row(r)[j];
        sum[j] += x;
        sumsq[j] += x * x;
      }
    }
  }
  const double n = static_cast<double>(n_prompts * rows);
  means->resize(cfg.d);
  vars->resize(cfg.d);
  for (std::size_t j = 0; j < cfg.d; ++j) {
    (*means)[j] = sum[j] / n;
    (*vars)[j] = sumsq[j] / n - (*means)[j] * (*means)[j];
  }
}

}  // namespace

TEST(Taskgen, InputMomentsAtMuZero) {
  std::vector<double> means, vars;
  input_moments(0.0, 100000, &means, &vars);
  for (std::size_t j = 0; j < means.size(); ++j) {
    EXPECT_GE(means[j], -0.02) << "coord " << j;
    EXPECT_LE(means[j], 0.02) << "coord " << j;
    EXPECT_GE(vars[j], 0.97) << "coord " << j;
    EXPECT_LE(vars[j], 1.03) << "coord " << j;
  }
}

TEST(Taskgen, InputMomentsAtMuFour) {
  std::vector<double> means, vars;
  input_moments(4.0, 100000, &means, &vars);
  for (std::size_t j = 0; j < means.size(); ++j) {
    EXPECT_GE(means[j], 3.98) << "coord " << j;
    EXPECT_LE(means[j], 4.02) << "coord " << j;
  }
}

TEST(Taskgen, LabelNoiseVarianceMatchesSigmaSquared) {
  TaskConfig cfg{.d = 5, .mu = 0.0, .sigma = 1.0, .k = 4};
  Rng rng(31337);
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    Rng child = rng.child(i);
    auto p = sample_prompt<double>(cfg, child);
    for (std::size_t r = 0; r <= cfg.k; ++r) {
      const double eta = p.ys.data[r] - p.clean_y(r);
      sum += eta;
      sumsq += eta * eta;
      ++n;
    }
  }
  const double var = sumsq / n - (sum / n) * (sum / n);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Prefix, BoundariesAndNesting) {
  TaskConfig cfg{.d = 3, .mu = 0.0, .sigma = 0.0, .k = 5};
  Rng rng(8);
  auto p = sample_prompt<double>(cfg, rng);

  auto p0 = make_prefix(p, 0);
  EXPECT_EQ(p0.i, 0u);
  EXPECT_EQ(p0.query_x(), p.x_row(0));

  auto pk = make_prefix(p, cfg.k);
  EXPECT_EQ(pk.i, cfg.k);
  EXPECT_EQ(pk.query_x(), p.x_row(cfg.k));

  EXPECT_THROW(make_prefix(p, cfg.k + 1), icl::ShapeError);

  for (std::size_t i = 0; i + 1 <= cfg.k; ++i) {
    auto a = make_prefix(p, i);
    auto b = make_prefix(p, i + 1);
    for (std::size_t j = 0; j < i; ++j) {
      EXPECT_EQ(a.demo_x(j), b.demo_x(j));
      EXPECT_EQ(a.demo_y(j), b.demo_y(j));
    }
  }
}

TEST(Permute, IdentityAndInverseRoundTrip) {
  TaskConfig cfg{.d = 2, .mu = 0.0, .sigma = 0.0, .k = 6};
  Rng rng(9);
  auto p = sample_prompt<double>(cfg, rng);
  auto prefix = make_prefix(p, 5);

  std::vector<std::uint32_t> identity{0, 1, 2, 3, 4};
  auto same = permute_demos(prefix, identity);
  EXPECT_EQ(same.order, prefix.order);

  std::vector<std::uint32_t> perm{3, 0, 4, 1, 2};
  std::vector<std::uint32_t> inv(perm.size());
  for (std::uint32_t j = 0; j < perm.size(); ++j) inv[perm[j]] = j;
  auto there = permute_demos(prefix, perm);
  auto back = permute_demos(there, inv);
  EXPECT_EQ(back.order, prefix.order);

  // query/target pinned
  EXPECT_EQ(there.query_x(), prefix.query_x());
  EXPECT_EQ(there.target_y(), prefix.target_y());
}

TEST(Permute, MultisetOfPairsPreserved) {
  TaskConfig cfg{.d = 2, .mu = 0.0, .sigma = 0.0, .k = 8};
  Rng rng(10);
  auto p = sample_prompt<double>(cfg, rng);
  auto prefix = make_prefix(p, 8);
  auto perm = icl::random_permutation(8, rng);
  auto shuffled = permute_demos(prefix, perm);
  auto sorted_pairs = [](const PromptPrefix<double>& pr) {
    std::vector<std::pair<double, double>> v;
    for (std::size_t j = 0; j < pr.i; ++j) v.emplace_back(pr.demo_x(j)[0], pr.demo_y(j));
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(sorted_pairs(prefix), sorted_pairs(shuffled));
}

TEST(Permute, RejectsNonBijections) {
  TaskConfig cfg{.d = 2, .mu = 0.0, .sigma = 0.0, .k = 4};
  Rng rng(11);
  auto p = sample_prompt<double>(cfg, rng);
  auto prefix = make_prefix(p, 3);
  EXPECT_THROW(permute_demos(prefix, {0, 0, 1}), icl::ShapeError);
  EXPECT_THROW(permute_demos(prefix, {0, 1}), icl::ShapeError);
  EXPECT_THROW(permute_demos(prefix, {0, 1, 5}), icl::ShapeError);
}

TEST(Permute, RandomPermutationIsBijection) {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    auto perm = icl::random_permutation(20, rng);
    std::vector<bool> seen(20, false);
    for (auto v : perm) {
      ASSERT_LT(v, 20u);
      ASSERT_FALSE(seen[v]);
      seen[v] = true;
    }
  }
}

TEST(DatagenCsv, HeaderOnlyForNoPrompts) {
  std::ostringstream os;
  icl::write_prompts_csv<double>(os, {}, 3);
  EXPECT_EQ(os.str(), "prompt_id,row,role,x_0,x_1,x_2,y\n");
}

TEST(DatagenCsv, RoundTripReproducesLabelsExactly) {
  TaskConfig cfg{.d = 3, .mu = 0.0, .sigma = 0.0, .k = 2};
  Rng rng(13);
  std::vector<Prompt<double>> prompts;
  for (int i = 0; i < 4; ++i) {
    Rng child = rng.child(i);
    prompts.push_back(sample_prompt<double>(cfg, child));
  }
  std::ostringstream os, ws;
  icl::write_prompts_csv(os, prompts, cfg.d);
  icl::write_weights_csv(ws, prompts, cfg.d);

  // Parse back and recompute w.x per row; noiseless labels must match exactly.
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);  // header
  std::size_t rows_checked = 0;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 3 + cfg.d + 1);
    const std::size_t id = std::stoul(cells[0]);
    double x[3];
    for (std::size_t j = 0; j < cfg.d; ++j) x[j] = std::stod(cells[3 + j]);
    const double y = std::stod(cells[3 + cfg.d]);
    EXPECT_EQ(y, icl::dot(prompts[id].w.data.data(), x, cfg.d));
    ++rows_checked;
  }
  EXPECT_EQ(rows_checked, 4 * (cfg.k + 1));
  EXPECT_NE(ws.str().find("w_0"), std::string::npos);
}

TEST(DatagenCsv, DeterministicBytes) {
  TaskConfig cfg{.d = 2, .mu = 1.0, .sigma = 0.5, .k = 3};
  auto render = [&] {
    Rng rng(14);
    std::vector<Prompt<double>> prompts;
    for (int i = 0; i < 3; ++i) {
      Rng child = rng.child(i);
      prompts.push_back(sample_prompt<double>(cfg, child));
    }
    std::ostringstream os;
    icl::write_prompts_csv(os, prompts, cfg.d);
    return os.str();
  };
  EXPECT_EQ(render(), render());
}

TEST(TaskConfig, Validation) {
  TaskConfig bad_d{.d = 0};
  EXPECT_THROW(bad_d.validate(), icl::ConfigError);
  TaskConfig bad_sigma{.d = 1, .sigma = -0.5};
  EXPECT_THROW(bad_sigma.validate(), icl::ConfigError);
}
