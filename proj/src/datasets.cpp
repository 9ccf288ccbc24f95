#include "qrcal/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "qrcal/error.hpp"

namespace qrcal {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_line(const std::string& line, const std::string& delimiter) {
  std::vector<std::string> cells;
  if (delimiter == "whitespace") {
    std::istringstream is(line);
    std::string cell;
    while (is >> cell) cells.push_back(cell);
    return cells;
  }
  if (delimiter.size() != 1) throw ConfigError("csv: delimiter must be one character or 'whitespace'");
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter[0], start);
    cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::optional<long> parse_index(const std::string& s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.name = name;
  out.feature_names = feature_names;
  const std::size_t d = dims();
  out.features = ad::Tensor({rows.size(), d});
  out.targets.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw DomainError("subset: row index out of range");
    for (std::size_t j = 0; j < d; ++j) out.features.at(i, j) = features.at(rows[i], j);
    out.targets[i] = targets[rows[i]];
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file: " + path.string());

  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, options.delimiter);
    if (options.header && header.empty()) {
      header = std::move(cells);
      width = header.size();
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw ConfigError(path.string() + ": row " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " columns, expected " +
                        std::to_string(width));
    }
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (!parse_double(cells[c], row[c])) {
        throw ConfigError(path.string() + ": non-numeric cell '" + cells[c] + "' at row " +
                          std::to_string(line_no) + ", column " + std::to_string(c + 1));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path.string() + ": no data rows");
  if (width < 2) throw ConfigError(path.string() + ": need at least one feature and a target");

  std::size_t target = width - 1;
  if (!options.target_column.empty()) {
    if (auto idx = parse_index(options.target_column)) {
      const long w = static_cast<long>(width);
      const long resolved = *idx < 0 ? w + *idx : *idx;
      if (resolved < 0 || resolved >= w) {
        throw ConfigError(path.string() + ": target column index " + options.target_column +
                          " out of range");
      }
      target = static_cast<std::size_t>(resolved);
    } else {
      auto it = std::find(header.begin(), header.end(), options.target_column);
      if (it == header.end()) {
        throw ConfigError(path.string() + ": target column '" + options.target_column +
                          "' not found");
      }
      target = static_cast<std::size_t>(it - header.begin());
    }
  }

  Dataset data;
  data.name = path.stem().string();
  data.features = ad::Tensor({rows.size(), width - 1});
  data.targets.resize(rows.size());
  for (std::size_t c = 0; c < width; ++c) {
    if (c == target) continue;
    data.feature_names.push_back(header.empty() ? "x" + std::to_string(c) : header[c]);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t j = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == target) {
        data.targets[r] = rows[r][c];
      } else {
        data.features.at(r, j++) = rows[r][c];
      }
    }
  }
  return data;
}

std::filesystem::path DatasetDescriptor::resolved_path() const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetDescriptor load_descriptor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset descriptor: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    DatasetDescriptor d;
    d.name = j.at("name").get<std::string>();
    d.path = j.at("path").get<std::string>();
    d.url = j.value("url", "");
    d.csv.delimiter = j.value("delimiter", ",");
    d.csv.header = j.value("header", false);
    if (j.contains("target_column")) {
      const auto& t = j["target_column"];
      d.csv.target_column = t.is_number() ? std::to_string(t.get<long>()) : t.get<std::string>();
    }
    d.rows = j.at("rows").get<std::size_t>();
    d.cols = j.at("cols").get<std::size_t>();
    d.base_dir = path.parent_path();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Dataset load_dataset(const DatasetDescriptor& descriptor) {
  Dataset data = load_csv(descriptor.resolved_path(), descriptor.csv);
  data.name = descriptor.name;
  if (data.size() != descriptor.rows || data.dims() != descriptor.cols) {
    throw ConfigError(descriptor.name + ": expected (" + std::to_string(descriptor.rows) + ", " +
                      std::to_string(descriptor.cols) + ") but loaded (" +
                      std::to_string(data.size()) + ", " + std::to_string(data.dims()) + ")");
  }
  return data;
}

Standardizer Standardizer::fit(const Dataset& train) {
  if (train.size() == 0) throw DomainError("standardize: empty training set");
  Standardizer s;
  const double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < train.dims(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) mean += train.features.at(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const double d = train.features.at(i, j) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / n);
    if (!(sd > 0.0)) {
      s.dropped_columns.push_back(j < train.feature_names.size() ? train.feature_names[j]
                                                                 : "x" + std::to_string(j));
      continue;
    }
    s.kept_columns.push_back(j);
    s.feature_mean.push_back(mean);
    s.feature_std.push_back(sd);
  }
  double mean = std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / n;
  double var = 0.0;
  for (double y : train.targets) var += (y - mean) * (y - mean);
  s.target_mean = mean;
  s.target_std = std::sqrt(var / n);
  if (!(s.target_std > 0.0)) throw DomainError("standardize: constant target");
  return s;
}

Dataset Standardizer::transform(const Dataset& data) const {
  Dataset out;
  out.name = data.name;
  out.features = ad::Tensor({data.size(), kept_columns.size()});
  out.targets.resize(data.size());
  for (std::size_t k = 0; k < kept_columns.size(); ++k) {
    const std::size_t j = kept_columns[k];
    if (j >= data.dims()) throw ShapeError("standardize: data has too few feature columns");
    if (j < data.feature_names.size()) out.feature_names.push_back(data.feature_names[j]);
    for (std::size_t i = 0; i < data.size(); ++i) {
      out.features.at(i, k) = (data.features.at(i, j) - feature_mean[k]) / feature_std[k];
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.targets[i] = (data.targets[i] - target_mean) / target_std;
  }
  return out;
}

Dataset Standardizer::inverse_transform(const Dataset& standardized) const {
  Dataset out;
  out.name = standardized.name;
  out.feature_names = standardized.feature_names;
  out.features = ad::Tensor({standardized.size(), kept_columns.size()});
  out.targets.resize(standardized.size());
  for (std::size_t k = 0; k < kept_columns.size(); ++k) {
    for (std::size_t i = 0; i < standardized.size(); ++i) {
      out.features.at(i, k) = standardized.features.at(i, k) * feature_std[k] + feature_mean[k];
    }
  }
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    out.targets[i] = target_to_original(standardized.targets[i]);
  }
  return out;
}

std::vector<Split> make_splits(std::size_t n, const SplitSpec& spec) {
  if (n < 5) throw DomainError("make_splits: need at least 5 rows, got " + std::to_string(n));
  if (spec.n_splits == 0) throw DomainError("make_splits: n_splits must be positive");
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw DomainError("make_splits: test fraction must lie in (0, 1)");
  }
  const auto n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n))), 1,
      n - 1);
  std::vector<Split> splits;
  for (std::size_t k = 0; k < spec.n_splits; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(k), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Split s;
    s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

double synth_hetero_mean(double x) { return std::sin(2.0 * x); }
double synth_hetero_sigma(double x) { return 0.1 + 0.4 * std::fabs(x); }

SyntheticData synth_hetero(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::normal_distribution<double> eps(0.0, 1.0);
  SyntheticData out;
  out.data.name = "synth_hetero";
  out.data.feature_names = {"x"};
  out.data.features = ad::Tensor({n, 1});
  out.data.targets.resize(n);
  out.truth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ux(rng);
    out.truth[i] = {synth_hetero_mean(x), synth_hetero_sigma(x)};
    out.data.features.at(i, 0) = x;
    out.data.targets[i] = out.truth[i].mu + out.truth[i].sigma * eps(rng);
  }
  return out;
}

}  // namespace qrcal
