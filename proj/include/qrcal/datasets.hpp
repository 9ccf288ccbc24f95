#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrcal/gaussian.hpp"
#include "qrcal/ndgrad.hpp"

namespace qrcal {

/// Regression data: an N x D feature matrix and N targets.
struct Dataset {
  std::string name;
  ad::Tensor features{ad::Shape{0, 0}};
  std::vector<double> targets;
  std::vector<std::string> feature_names;

  std::size_t size() const { return targets.size(); }
  std::size_t dims() const { return features.rank() == 2 ? features.cols() : 0; }

  Dataset subset(std::span<const std::size_t> rows) const;
};

struct CsvOptions {
  /// Single-character delimiter, or "whitespace" for runs of blanks/tabs.
  std::string delimiter = ",";
  bool header = true;
  /// Column name (needs a header) or zero-based index; negative indices
  /// count from the end. Empty means the last column.
  std::string target_column;
};

/// Parses a numeric delimited file. Throws ConfigError naming the row and
/// column of the first non-numeric cell, or when the target is missing.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});

/// Small manifest describing where a benchmark dataset lives and its
/// expected shape.
struct DatasetDescriptor {
  std::string name;
  std::string path;  // relative to the descriptor file unless absolute
  std::string url;
  CsvOptions csv;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::filesystem::path base_dir;

  std::filesystem::path resolved_path() const;
};

DatasetDescriptor load_descriptor(const std::filesystem::path& path);
/// Loads the referenced file and checks its (N, D) against the manifest.
Dataset load_dataset(const DatasetDescriptor& descriptor);

/// Per-feature and target z-scoring fitted on training rows only. Constant
/// features are dropped.
struct Standardizer {
  std::vector<std::size_t> kept_columns;
  std::vector<std::string> dropped_columns;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;

  static Standardizer fit(const Dataset& train);

  Dataset transform(const Dataset& data) const;
  Dataset inverse_transform(const Dataset& standardized) const;
  double target_to_original(double y) const { return y * target_std + target_mean; }
  GaussianPrediction prediction_to_original(const GaussianPrediction& p) const {
    return {target_to_original(p.mu), p.sigma * target_std};
  }
};

struct SplitSpec {
  std::size_t n_splits = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Independent seeded random train/test partitions.
std::vector<Split> make_splits(std::size_t n, const SplitSpec& spec);

/// Heteroscedastic 1-D toy problem with a known conditional law:
/// x ~ U[-2, 2], y = sin(2x) + (0.1 + 0.4|x|) eps, eps ~ N(0, 1).
struct SyntheticData {
  Dataset data;
  std::vector<GaussianPrediction> truth;
};

double synth_hetero_mean(double x);
double synth_hetero_sigma(double x);
SyntheticData synth_hetero(std::size_t n, std::uint64_t seed);

}  // namespace qrcal
