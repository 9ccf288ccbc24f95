#pragma once

// Experiment harness behind the qrcal command line: config parsing, per-split
// training and evaluation, recalibration, lambda sweeps and report tables.

#include <cstdint>
#include <filesystem>
#include <string>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "qrcal/datasets.hpp"
#include "qrcal/metrics.hpp"
#include "qrcal/models.hpp"

namespace qrcal {

enum class ModelKind { kMcDropout, kEnsemble };
enum class CalibSplit { kTrain, kHoldout };

std::string to_string(ModelKind kind);
std::string to_string(CalibSplit split);

struct ExperimentConfig {
  /// "synth_hetero", a descriptor name, a descriptor .json path or a CSV path.
  std::string dataset = "synth_hetero";
  std::size_t synthetic_rows = 2000;
  /// Where descriptor names are looked up; empty means the built-in folder.
  std::string descriptor_dir;

  ModelKind model = ModelKind::kMcDropout;
  double lambda = 20.0;
  /// Also train a lambda = 0 baseline next to `lambda`.
  bool include_base = true;
  std::vector<double> sweep_lambdas{0.0, 1.0, 5.0, 10.0, 20.0};

  TrainConfig train;  // lambda and seed are set per run
  EnsembleConfig ensemble;
  std::size_t mc_passes = 10;
  MetricConfig metrics;
  SplitSpec splits;
  std::uint64_t seed = 0;

  bool desk_scale = false;
  std::size_t desk_epochs = 30;
  std::size_t desk_rows = 2000;

  CalibSplit calib_split = CalibSplit::kTrain;
  double holdout_fraction = 0.2;

  std::size_t threads = 0;  // 0 = hardware concurrency
  std::string output = "results";
  bool save_models = true;
};

/// Parses a JSON config; every key is optional. Errors are ConfigError with
/// "source:line:column" context for syntax errors and the key for bad values.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
/// The config as JSON, with every field spelled out.
std::string config_to_json(const ExperimentConfig& cfg);

/// Applies the desk-scale caps when enabled.
ExperimentConfig effective_config(const ExperimentConfig& cfg);

/// Loads or generates the configured dataset (before desk-scale row caps).
Dataset resolve_dataset(const ExperimentConfig& cfg);

struct MetricsRow {
  std::string dataset;
  std::string model;
  double lambda = 0.0;
  std::size_t split = 0;
  std::size_t n_test = 0;
  double calib_error = 0.0;
  double rmse = 0.0;
  double nll = 0.0;
};

struct ReliabilityRow {
  std::string model;
  double lambda = 0.0;
  std::size_t split = 0;
  ReliabilityPoint point;
};

struct RecalibrationRow {
  std::string dataset;
  std::string model;
  double lambda = 0.0;
  std::size_t split = 0;
  std::string calib_split;
  std::size_t n_calib = 0;
  double pre = 0.0;
  double post = 0.0;
};

struct SummaryRow {
  std::string dataset;
  std::string model;
  double lambda = 0.0;
  std::size_t n_splits = 0;
  double calib_error_mean = 0.0, calib_error_std = 0.0;
  double rmse_mean = 0.0, rmse_std = 0.0;
  double nll_mean = 0.0, nll_std = 0.0;
};

struct RunResult {
  std::vector<MetricsRow> metrics;  // sorted by (lambda order, split)
  std::vector<ReliabilityRow> reliability;
  std::vector<SummaryRow> summary;
};

/// Sample mean and (n - 1) standard deviation; std is 0 for one value.
std::pair<double, double> mean_std(std::span<const double> v);
std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows);

/// Trains and evaluates every split for the given lambdas. Writes model
/// binaries under <output>/models when save_models is set.
RunResult run_experiment(const ExperimentConfig& cfg, std::span<const double> lambdas);

/// train verb: lambdas {0, lambda} (or just lambda). Writes metrics.csv,
/// summary.csv, reliability.csv and run.json.
RunResult cmd_train(const ExperimentConfig& cfg);
/// sweep verb: every lambda in sweep_lambdas; also writes curve.csv.
RunResult cmd_sweep(const ExperimentConfig& cfg);
/// recalibrate verb: loads the models written by train, fits the isotonic
/// map on the calibration split and writes recalibration.csv.
std::vector<RecalibrationRow> cmd_recalibrate(const ExperimentConfig& cfg);
/// report verb: renders report.md and report.csv from a results folder and
/// returns the text tables.
std::string cmd_report(const std::filesystem::path& dir);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
void write_recalibration_csv(const std::filesystem::path& path,
                             std::span<const RecalibrationRow> rows);
std::vector<RecalibrationRow> read_recalibration_csv(const std::filesystem::path& path);

struct TableCell {
  double mean = 0.0;
  double std = 0.0;
  bool bold = false;
  bool flagged = false;  // rendered with a trailing '*'
};

/// Marks the lowest mean(s) in `cells` bold; means within 1e-9 of the
/// lowest are all bold.
void bold_lowest(std::span<TableCell*> cells);
std::string format_cell(const TableCell& cell);

/// Mean +- std tables: per dataset and
/// model, base and regularized columns for each metric.
std::string render_metrics_table(std::span<const MetricsRow> rows);
/// Calibration error before and after isotonic recalibration, with '*' where
/// recalibration made it worse on average.
std::string render_recalibration_table(std::span<const RecalibrationRow> rows);

}  // namespace qrcal
