#include "qrcal/experiment.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "qrcal/error.hpp"
#include "qrcal/recalib.hpp"

namespace fs = std::filesystem;
using namespace qrcal;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("qrcal_exp_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.synthetic_rows = 150;
  c.train.epochs = 3;
  c.train.hidden = 8;
  c.train.batch_size = 64;
  c.splits.n_splits = 2;
  c.mc_passes = 3;
  c.seed = 11;
  c.output = out.string();
  return c;
}

}  // namespace

TEST(Config, EmptyObjectGivesPaperDefaults) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.dataset, "synth_hetero");
  EXPECT_EQ(c.model, ModelKind::kMcDropout);
  EXPECT_EQ(c.train.hidden, 128u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-2);
  EXPECT_EQ(c.train.batch_size, 512u);
  EXPECT_EQ(c.train.epochs, 100u);
  EXPECT_DOUBLE_EQ(c.train.dropout_rate, 0.25);
  EXPECT_EQ(c.mc_passes, 10u);
  EXPECT_EQ(c.ensemble.size, 5u);
  EXPECT_DOUBLE_EQ(c.lambda, 20.0);
  EXPECT_EQ(c.metrics.bins, 20u);
  EXPECT_EQ(c.splits.n_splits, 5u);
}

TEST(Config, OverridesNestedKeys) {
  const auto c = parse_config(R"({"dataset": "boston", "model": "ensemble",
    "train": {"epochs": 7, "hidden": 16}, "splits": {"count": 3}, "calib_split": "holdout",
    "sweep_lambdas": [0, 2.5]})");
  EXPECT_EQ(c.dataset, "boston");
  EXPECT_EQ(c.model, ModelKind::kEnsemble);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.hidden, 16u);
  EXPECT_EQ(c.splits.n_splits, 3u);
  EXPECT_EQ(c.calib_split, CalibSplit::kHoldout);
  EXPECT_EQ(c.sweep_lambdas, (std::vector<double>{0.0, 2.5}));
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
  try {
    parse_config("{\n  \"lambda\": 3,\n  \"seed\": ]\n}", "run.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.json:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"lamda": 3})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"epoch": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"lambda": "big"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"lambda": -1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sweep_lambdas": []})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sweep_lambdas": [0, -2]})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": "gp"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"epochs": -3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"dropout_rate": 1.0}})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
  try {
    parse_config(R"({"lamda": 3})");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lamda"), std::string::npos);
  }
}

TEST(Config, JsonRoundTrip) {
  auto c = parse_config(R"({"model": "ensemble", "lambda": 5, "desk_scale": true})");
  const auto again = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
}

TEST(Config, DeskScaleCapsEpochsAndRows) {
  ExperimentConfig c;
  c.desk_scale = true;
  const auto e = effective_config(c);
  EXPECT_EQ(e.train.epochs, 30u);
  EXPECT_EQ(e.synthetic_rows, 2000u);
  c.desk_scale = false;
  EXPECT_EQ(effective_config(c).train.epochs, 100u);
}

TEST(Dataset, MissingFileNamesThePath) {
  ExperimentConfig c;
  c.dataset = "/nonexistent/where/data.csv";
  try {
    resolve_dataset(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/where/data.csv"), std::string::npos);
  }
  c.dataset = "no_such_benchmark";
  EXPECT_THROW(resolve_dataset(c), ConfigError);
}

TEST(Aggregate, MeanStdMatchesHandComputation) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  const auto [m, s] = mean_std(v);
  EXPECT_DOUBLE_EQ(m, 3.0);
  EXPECT_NEAR(s, std::sqrt(2.5), 1e-12);
  const std::vector<double> one{4.2};
  EXPECT_EQ(mean_std(one).second, 0.0);
}

TEST(Aggregate, FiveSplitSummary) {
  std::vector<MetricsRow> rows;
  const double ce[5] = {0.31, 0.12, 0.57, 0.2, 0.44};
  for (std::size_t k = 0; k < 5; ++k) rows.push_back({"d", "m", 0.0, k, 10, ce[k], 1.0 + k, -0.5});
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  double mean = 0.0;
  for (double x : ce) mean += x;
  mean /= 5.0;
  double ss = 0.0;
  for (double x : ce) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(s[0].calib_error_mean, mean, 1e-12);
  EXPECT_NEAR(s[0].calib_error_std, std::sqrt(ss / 4.0), 1e-12);
  EXPECT_NEAR(s[0].rmse_mean, 3.0, 1e-12);
  EXPECT_NEAR(s[0].nll_std, 0.0, 1e-12);
  EXPECT_EQ(s[0].n_splits, 5u);
}

TEST(Report, LowerValueIsBolded) {
  TableCell a{1.0, 0.1}, b{2.0, 0.1};
  std::vector<TableCell*> cells{&a, &b};
  bold_lowest(cells);
  EXPECT_TRUE(a.bold);
  EXPECT_FALSE(b.bold);
  EXPECT_EQ(format_cell(a), "**1.00 ± 0.10**");
  EXPECT_EQ(format_cell(b), "2.00 ± 0.10");
}

TEST(Report, TieWithinToleranceBoldsBoth) {
  TableCell a{1.0, 0.0}, b{1.0 + 5e-10, 0.0}, c{1.0 + 1e-6, 0.0};
  std::vector<TableCell*> cells{&a, &b, &c};
  bold_lowest(cells);
  EXPECT_TRUE(a.bold);
  EXPECT_TRUE(b.bold);
  EXPECT_FALSE(c.bold);
}

TEST(Report, FlaggedCellGetsStar) {
  TableCell a{0.5, 0.1, false, true};
  EXPECT_EQ(format_cell(a), "0.50 ± 0.10*");
}

TEST(Report, MetricsTableBoldsBetterColumn) {
  std::vector<MetricsRow> rows{{"d", "mc_dropout", 0.0, 0, 10, 0.4, 1.0, 2.0},
                               {"d", "mc_dropout", 20.0, 0, 10, 0.2, 1.5, 2.0}};
  const auto t = render_metrics_table(rows);
  EXPECT_NE(t.find("| Calib Error | 0.40 ± 0.00 | **0.20 ± 0.00** |"), std::string::npos) << t;
  EXPECT_NE(t.find("| RMSE | **1.00 ± 0.00** | 1.50 ± 0.00 |"), std::string::npos) << t;
  EXPECT_NE(t.find("| NLL | **2.00 ± 0.00** | **2.00 ± 0.00** |"), std::string::npos) << t;
}

TEST(Report, RecalibrationTableFlagsWorsening) {
  std::vector<RecalibrationRow> rows{{"d", "ensemble", 0.0, 0, "train", 5, 0.3, 0.6},
                                     {"d", "ensemble", 20.0, 0, "train", 5, 0.3, 0.2}};
  const auto t = render_recalibration_table(rows);
  EXPECT_NE(t.find("0.60 ± 0.00*"), std::string::npos) << t;
  EXPECT_NE(t.find("**0.20 ± 0.00**"), std::string::npos) << t;
}

TEST(Report, EmptyDirectoryIsAnError) {
  TempDir dir;
  EXPECT_THROW(cmd_report(dir.path), ConfigError);
  std::ofstream(dir.path / "metrics.csv") << "dataset,model,lambda,split,n_test,calib_error,rmse,nll\n";
  EXPECT_THROW(cmd_report(dir.path), ConfigError);
}

TEST(Report, CsvRoundTrip) {
  TempDir dir;
  std::vector<MetricsRow> rows{{"d", "m", 0.5, 1, 40, 0.1234567890123, 2.0 / 3.0, -1e-3}};
  write_metrics_csv(dir.path / "metrics.csv", rows);
  const auto back = read_metrics_csv(dir.path / "metrics.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].lambda, 0.5);
  EXPECT_EQ(back[0].split, 1u);
  EXPECT_EQ(back[0].calib_error, rows[0].calib_error);
  EXPECT_EQ(back[0].rmse, rows[0].rmse);
  const auto text = cmd_report(dir.path);
  EXPECT_TRUE(fs::exists(dir.path / "report.md"));
  EXPECT_TRUE(fs::exists(dir.path / "report.csv"));
  EXPECT_NE(text.find("QR (λ=0.5)"), std::string::npos);
}

TEST(Pipeline, TrainWritesArtifactsAndIsDeterministic) {
  TempDir a, b;
  const auto ra = cmd_train(tiny(a.path));
  cmd_train(tiny(b.path));
  ASSERT_EQ(ra.metrics.size(), 4u);
  EXPECT_EQ(ra.metrics[0].lambda, 0.0);
  EXPECT_EQ(ra.metrics[2].lambda, 20.0);
  EXPECT_EQ(ra.metrics[1].split, 1u);
  EXPECT_EQ(ra.summary.size(), 2u);
  for (const char* f : {"metrics.csv", "summary.csv", "reliability.csv"}) {
    EXPECT_EQ(slurp(a.path / f), slurp(b.path / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a.path / "run.json"));
  EXPECT_TRUE(fs::exists(a.path / "models" / "mc_dropout_lambda20_split1.qrcm"));
  EXPECT_EQ(ra.reliability.size(), 4u * 20u);
}

TEST(Pipeline, ThreadCountDoesNotChangeResults) {
  TempDir a, b;
  auto ca = tiny(a.path), cb = tiny(b.path);
  ca.threads = 1;
  cb.threads = 3;
  cmd_train(ca);
  cmd_train(cb);
  EXPECT_EQ(slurp(a.path / "metrics.csv"), slurp(b.path / "metrics.csv"));
}

TEST(Pipeline, SingleLambdaSweepEqualsTrain) {
  TempDir a, b;
  auto ct = tiny(a.path);
  ct.include_base = false;
  ct.lambda = 5.0;
  auto cs = tiny(b.path);
  cs.sweep_lambdas = {5.0};
  cmd_train(ct);
  cmd_sweep(cs);
  EXPECT_EQ(slurp(a.path / "metrics.csv"), slurp(b.path / "metrics.csv"));
  EXPECT_TRUE(fs::exists(b.path / "curve.csv"));
}

TEST(Pipeline, RecalibrateUsesSavedModels) {
  TempDir a;
  auto c = tiny(a.path);
  EXPECT_THROW(cmd_recalibrate(c), ConfigError);  // nothing trained yet
  const auto trained = cmd_train(c);
  const auto rows = cmd_recalibrate(c);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // pre-hoc error equals the calibration error reported by train
    EXPECT_NEAR(rows[i].pre, trained.metrics[i].calib_error, 1e-12);
    EXPECT_EQ(rows[i].n_calib, 120u);
    EXPECT_EQ(rows[i].calib_split, "train");
  }
  const auto text = slurp(a.path / "recalibration.csv");
  EXPECT_EQ(text.rfind("dataset,model,lambda,split,calib_split,n_calib,pre,post,flag\n", 0), 0u);

  c.calib_split = CalibSplit::kHoldout;
  const auto held = cmd_recalibrate(c);
  EXPECT_EQ(held[0].n_calib, 24u);
  EXPECT_EQ(held[0].calib_split, "holdout");
}

TEST(Pipeline, IdentityMapLeavesMetricsUnchanged) {
  const auto syn = synth_hetero(300, 4);
  const auto pits = pit(syn.truth, syn.data.targets);
  const CalibrationMap identity;
  std::vector<double> mapped;
  for (double p : pits) mapped.push_back(apply_map(identity, p));
  EXPECT_EQ(calibration_error(mapped), calibration_error(pits));
}

TEST(Pipeline, EnsembleArtifactsPerMember) {
  TempDir a;
  auto c = tiny(a.path);
  c.model = ModelKind::kEnsemble;
  c.ensemble.size = 2;
  c.include_base = false;
  const auto r = cmd_train(c);
  EXPECT_EQ(r.metrics[0].model, "ensemble");
  EXPECT_TRUE(fs::exists(a.path / "models" / "ensemble_lambda20_split0_member1.qrcm"));
  EXPECT_EQ(cmd_recalibrate(c).size(), 2u);
}

#ifdef QRCAL_CLI
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string(QRCAL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
  TempDir a;
  EXPECT_EQ(run_cli("train --dataset /nonexistent/x.csv --out " + a.path.string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train --lambda -1"), 2);
  EXPECT_EQ(run_cli("report " + a.path.string()), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  const fs::path small = a.path / "small.json";
  std::ofstream(small) << "{\"train\": {\"epochs\": 2, \"hidden\": 4}, \"synthetic_rows\": 20,\n"
                        " \"splits\": {\"count\": 1}, \"seed\": 1}";
  EXPECT_EQ(run_cli("train --config " + small.string() + " --out " + (a.path / "o").string()), 0);
  EXPECT_EQ(run_cli("report " + (a.path / "o").string()), 0);
  std::ofstream(a.path / "o" / "models" / "mc_dropout_lambda0_split0.qrcm") << "junk";
  EXPECT_EQ(run_cli("recalibrate --config " + small.string() + " --out " + (a.path / "o").string()),
            2);
  EXPECT_EQ(run_cli("train --config " + small.string() + " --out /proc/qrcal_out"), 1);
}
#endif
