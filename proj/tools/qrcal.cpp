// qrcal: train, recalibrate, sweep and report over regression datasets.
// Exit status: 0 success, 2 usage or config error, 1 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "qrcal/error.hpp"
#include "qrcal/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::string> dataset;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<std::string> calib_split;
  bool desk_scale = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--dataset", o.dataset, "synth_hetero, descriptor name, .json or CSV path");
  cmd->add_option("--lambda", o.lambda, "regularization weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", o.seed, "base seed for splits, init and dropout");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--model", o.model, "mc_dropout or ensemble")
      ->check(CLI::IsMember({"mc_dropout", "ensemble"}));
  cmd->add_flag("--desk-scale", o.desk_scale, "cap epochs and rows for quick runs");
}

qrcal::ExperimentConfig build_config(const Options& o) {
  qrcal::ExperimentConfig c = o.config.empty() ? qrcal::ExperimentConfig{}
                                               : qrcal::load_config(o.config);
  if (o.dataset) c.dataset = *o.dataset;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output = *o.out;
  if (o.model) {
    c.model = *o.model == "ensemble" ? qrcal::ModelKind::kEnsemble : qrcal::ModelKind::kMcDropout;
  }
  if (o.calib_split) {
    c.calib_split = *o.calib_split == "holdout" ? qrcal::CalibSplit::kHoldout
                                                : qrcal::CalibSplit::kTrain;
  }
  if (o.desk_scale) c.desk_scale = true;
  return c;
}

void print_summary(const qrcal::RunResult& r) {
  std::printf("%-12s %-8s %6s %14s %14s %14s\n", "model", "lambda", "splits", "calib_error",
              "rmse", "nll");
  for (const auto& s : r.summary) {
    std::printf("%-12s %-8s %6zu %6.3f+-%-6.3f %6.3f+-%-6.3f %6.3f+-%-6.3f\n", s.model.c_str(),
                qrcal::format_double(s.lambda).c_str(), s.n_splits, s.calib_error_mean,
                s.calib_error_std, s.rmse_mean, s.rmse_std, s.nll_mean, s.nll_std);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantile-regularized calibration experiments"};
  app.require_subcommand(1);
  Options o;
  auto* train = app.add_subcommand("train", "train base and regularized models per split");
  auto* recal = app.add_subcommand("recalibrate", "isotonic recalibration of trained models");
  auto* sweep = app.add_subcommand("sweep", "train every lambda in the config's list");
  auto* report = app.add_subcommand("report", "render mean +- std tables from a results folder");
  for (auto* cmd : {train, recal, sweep}) add_common(cmd, o);
  recal->add_option("--calib-split", o.calib_split, "where the isotonic map is fit")
      ->check(CLI::IsMember({"train", "holdout"}));
  std::string report_dir;
  report->add_option("dir", report_dir, "results folder");
  report->add_option("--out", o.out, "results folder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      std::string dir = !report_dir.empty() ? report_dir : o.out.value_or("results");
      std::cout << qrcal::cmd_report(dir);
      return 0;
    }
    const auto cfg = build_config(o);
    if (train->parsed()) {
      print_summary(qrcal::cmd_train(cfg));
    } else if (sweep->parsed()) {
      print_summary(qrcal::cmd_sweep(cfg));
    } else {
      const auto rows = qrcal::cmd_recalibrate(cfg);
      std::printf("%-12s %-8s %5s %10s %10s\n", "model", "lambda", "split", "pre", "post");
      for (const auto& r : rows) {
        std::printf("%-12s %-8s %5zu %10.4f %10.4f%s\n", r.model.c_str(),
                    qrcal::format_double(r.lambda).c_str(), r.split, r.pre, r.post,
                    r.post > r.pre ? " *" : "");
      }
    }
    return 0;
  } catch (const qrcal::ConfigError& e) {
    std::cerr << "qrcal: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "qrcal: " << e.what() << '\n';
    return 1;
  }
}
