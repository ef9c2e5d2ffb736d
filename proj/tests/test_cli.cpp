// End-to-end checks of the icl_lab binary: exit codes, determinism of the
// produced files, and the documented file formats.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "icl/evaluation.hpp"
#include "icl/taskgen.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("icl_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter_++));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path file(const std::string& name) const { return dir_ / name; }

  RunResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(ICL_CLI_PATH) + " " + args + " > " + out.string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string write_config(const std::string& name, const std::string& body) const {
    const fs::path p = file(name);
    std::ofstream os(p);
    os << body;
    return p.string();
  }

  std::string tiny_train_config(int steps, const std::string& arch = "transformer") const {
    std::ostringstream os;
    os << R"({"task": {"d": 2, "mu": 0.0, "sigma": 0.0, "k": 8},)";
    if (arch == "transformer") {
      os << R"("model": {"arch": "transformer", "pe_mode": "learned", "n_layers": 2,)"
         << R"("n_heads": 2, "hidden_dim": 16, "max_positions": 17},)";
    } else {
      os << R"("model": {"arch": "deepset", "deepset_width": 16, "deepset_depth": 2},)";
    }
    os << R"("train": {"steps": )" << steps
       << R"(, "batch_size": 8, "lr": 0.001, "seed": 11, "k_max": 8,)"
       << R"("curriculum": {"k_start": 8, "k_increment": 0, "steps_per_stage": 100000},)"
       << R"("eval_every": 10, "checkpoint_every": 100}})";
    return os.str();
  }

  fs::path dir_;
  static int counter_;
};

int CliTest::counter_ = 0;

}  // namespace

TEST_F(CliTest, HelpForEverySubcommandExitsZero) {
  for (const char* sub : {"", "train", "eval", "invariance", "datagen", "report"}) {
    const std::string args = std::string(sub) + (sub[0] ? " " : "") + "--help";
    RunResult r = run(args);
    EXPECT_EQ(r.exit_code, 0) << args;
    EXPECT_NE(r.out.find("--help"), std::string::npos) << args;
  }
  // flags and defaults listed
  RunResult r = run("datagen --help");
  EXPECT_NE(r.out.find("--seed"), std::string::npos);
  EXPECT_NE(r.out.find("--out"), std::string::npos);
}

TEST_F(CliTest, MissingConfigFileExitsTwoAndNamesPath) {
  RunResult r = run("train --config /definitely/not/here.json --out-dir " + file("run").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("/definitely/not/here.json"), std::string::npos);
}

TEST_F(CliTest, UnknownConfigKeyExitsTwo) {
  const std::string cfg = write_config("bad.json", R"({"task": {"d": 2, "mux": 1.0}})");
  RunResult r = run("train --config " + cfg + " --out-dir " + file("run").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("mux"), std::string::npos);
}

TEST_F(CliTest, TinyTrainRunProducesCheckpointAndDeterministicLog) {
  const std::string cfg = write_config("train.json", tiny_train_config(200));
  RunResult r1 = run("train --config " + cfg + " --out-dir " + file("run1").string());
  ASSERT_EQ(r1.exit_code, 0) << r1.err;
  EXPECT_TRUE(fs::exists(file("run1") / "checkpoint_final.ickpt"));
  EXPECT_TRUE(fs::exists(file("run1") / "effective_config.json"));

  RunResult r2 = run("train --config " + cfg + " --out-dir " + file("run2").string());
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(slurp(file("run1") / "train_log.csv"), slurp(file("run2") / "train_log.csv"));
  EXPECT_EQ(slurp(file("run1") / "checkpoint_final.ickpt"),
            slurp(file("run2") / "checkpoint_final.ickpt"));
}

TEST_F(CliTest, ResumeViaCliMatchesUninterruptedRun) {
  const std::string cfg = write_config("train.json", tiny_train_config(200));
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + file("full").string()).exit_code, 0);
  ASSERT_TRUE(fs::exists(file("full") / "checkpoint_00000100.ickpt"));
  RunResult r = run("train --config " + cfg + " --out-dir " + file("resumed").string() +
                    " --resume " + (file("full") / "checkpoint_00000100.ickpt").string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(slurp(file("full") / "checkpoint_final.ickpt"),
            slurp(file("resumed") / "checkpoint_final.ickpt"));
}

TEST_F(CliTest, DivergentTrainingExitsThree) {
  std::string cfg_body = tiny_train_config(20);
  const auto pos = cfg_body.find("\"lr\": 0.001");
  ASSERT_NE(pos, std::string::npos);
  cfg_body.replace(pos, 11, "\"lr\": 1e200");
  const std::string cfg = write_config("diverge.json", cfg_body);
  RunResult r = run("train --config " + cfg + " --out-dir " + file("run").string());
  EXPECT_EQ(r.exit_code, 3);
}

TEST_F(CliTest, OracleOnlyEvalWritesValidCsv) {
  const std::string eval_cfg = write_config(
      "eval.json", R"({"eval": {"scenarios": [[0,0],[0,1]], "k_grid": [1,2,4], "n": 32, "seed": 4}})");
  RunResult r = run("eval --with-ols --with-ridge auto --with-zero --d 3 --config " + eval_cfg +
                    " --out " + file("report.csv").string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const std::string csv = slurp(file("report.csv"));
  EXPECT_NE(csv.find("model,arch,pe_mode,mask_mode,mu,sigma,k,mse,mse_clean,sem,n"), std::string::npos);
  EXPECT_NE(csv.find("\nols,"), std::string::npos);
  EXPECT_NE(csv.find("\nridge,"), std::string::npos);
  EXPECT_NE(csv.find("\nzero,"), std::string::npos);
  EXPECT_NE(r.out.find("Evaluation summary"), std::string::npos);
  EXPECT_TRUE(fs::exists(file("report.csv.config.json")));

  // identical bytes on rerun with the same seed
  RunResult r2 = run("eval --with-ols --with-ridge auto --with-zero --d 3 --config " + eval_cfg +
                     " --out " + file("report2.csv").string());
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(csv, slurp(file("report2.csv")));
}

TEST_F(CliTest, CheckpointEvalFlagsUnsupportedRowsAndPairsPrompts) {
  const std::string cfg = write_config("train.json", tiny_train_config(20));
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + file("run").string()).exit_code, 0);
  const std::string ckpt = (file("run") / "checkpoint_final.ickpt").string();
  const std::string eval_cfg = write_config(
      "eval.json", R"({"eval": {"scenarios": [[0,0]], "k_grid": [2,8,30], "n": 16, "seed": 5}})");
  RunResult r = run("eval --checkpoint " + ckpt + " --name a --checkpoint " + ckpt +
                    " --name b --with-ols --config " + eval_cfg + " --out " +
                    file("report.csv").string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::ifstream is(file("report.csv"));
  auto rows = icl::parse_report_csv(is);
  int unsupported = 0, supported = 0;
  for (const auto& row : rows) {
    if (row.model == "a" || row.model == "b") {
      // max_positions 17 supports k <= 8
      if (row.k == 30) {
        EXPECT_FALSE(row.supported);
        ++unsupported;
      } else {
        EXPECT_TRUE(row.supported);
        ++supported;
      }
    }
  }
  EXPECT_EQ(unsupported, 2);
  EXPECT_EQ(supported, 4);
}

TEST_F(CliTest, MismatchedDimensionExitsTwo) {
  const std::string cfg = write_config("train.json", tiny_train_config(20));
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + file("run").string()).exit_code, 0);
  RunResult r = run("eval --checkpoint " + (file("run") / "checkpoint_final.ickpt").string() +
                    " --d 7 --out " + file("r.csv").string());
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, InvarianceOnDeepSetCheckpoint) {
  const std::string cfg = write_config("train.json", tiny_train_config(20, "deepset"));
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + file("run").string()).exit_code, 0);
  const std::string ckpt = (file("run") / "checkpoint_final.ickpt").string();
  RunResult r = run("invariance --checkpoint " + ckpt + " --k 1 --k 5 --k 8 --n-prompts 8" +
                    " --n-perms 4 --seed 2 --out " + file("inv.csv").string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.err.find("k=1"), std::string::npos);  // warned and skipped
  std::ifstream is(file("inv.csv"));
  auto rows = icl::parse_invariance_csv(is);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    EXPECT_LE(row.rel_gap, 1e-9);
  }
  // deterministic bytes
  RunResult r2 = run("invariance --checkpoint " + ckpt + " --k 1 --k 5 --k 8 --n-prompts 8" +
                     " --n-perms 4 --seed 2 --out " + file("inv2.csv").string());
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(slurp(file("inv.csv")), slurp(file("inv2.csv")));
}

TEST_F(CliTest, DatagenFormatsAndDeterminism) {
  RunResult r0 = run("datagen --d 3 --n 0 --out " + file("empty.csv").string());
  ASSERT_EQ(r0.exit_code, 0);
  EXPECT_EQ(slurp(file("empty.csv")), "prompt_id,row,role,x_0,x_1,x_2,y\n");

  RunResult r1 = run("datagen --d 3 --k 4 --n 5 --seed 21 --out " + file("a.csv").string() +
                     " --emit-w " + file("w.csv").string());
  ASSERT_EQ(r1.exit_code, 0);
  RunResult r2 = run("datagen --d 3 --k 4 --n 5 --seed 21 --out " + file("b.csv").string());
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(slurp(file("a.csv")), slurp(file("b.csv")));

  // noiseless labels reproduce exactly from the emitted weights
  std::ifstream pcsv(file("a.csv")), wcsv(file("w.csv"));
  std::string line;
  std::getline(wcsv, line);
  std::vector<std::array<double, 3>> ws;
  while (std::getline(wcsv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::array<double, 3> w{};
    for (int c = 0; c < 3; ++c) {
      std::getline(ss, cell, ',');
      w[c] = std::stod(cell);
    }
    ws.push_back(w);
  }
  ASSERT_EQ(ws.size(), 5u);
  std::getline(pcsv, line);
  int checked = 0;
  while (std::getline(pcsv, line)) {
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 7u);
    const std::size_t id = std::stoul(cells[0]);
    double x[3];
    for (int c = 0; c < 3; ++c) x[c] = std::stod(cells[3 + c]);
    EXPECT_EQ(std::stod(cells[6]), icl::dot(ws[id].data(), x, 3));
    ++checked;
  }
  EXPECT_EQ(checked, 25);
}

TEST_F(CliTest, ReportSubcommandSummarizesSavedCsvs) {
  const std::string eval_cfg = write_config(
      "eval.json", R"({"eval": {"scenarios": [[0,0]], "k_grid": [2,3,6], "n": 16, "seed": 6}})");
  ASSERT_EQ(run("eval --with-ols --with-ridge 1.0 --d 3 --config " + eval_cfg + " --out " +
                file("report.csv").string())
                .exit_code,
            0);
  RunResult r = run("report --eval " + file("report.csv").string() + " --d 3");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("ols <= ridge"), std::string::npos);
  RunResult r2 = run("report --eval " + file("report.csv").string() + " --d 3 --out " +
                     file("summary.md").string());
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(r.out, slurp(file("summary.md")));
}
