#include "qrcal/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "qrcal/error.hpp"
#include "qrcal/recalib.hpp"

#ifndef QRCAL_DESCRIPTOR_DIR
#define QRCAL_DESCRIPTOR_DIR "data/descriptors"
#endif

namespace qrcal {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kMcDropout ? "mc_dropout" : "ensemble";
}

std::string to_string(CalibSplit split) {
  return split == CalibSplit::kTrain ? "train" : "holdout";
}

// --- config -------------------------------------------------------------------

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) ==
        keys.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + key + "': " + obj.at(key).dump());
  }
}

std::size_t read_count(const json& obj, const char* key, std::size_t fallback,
                       const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + ": '" + key + "' must be a nonnegative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

void validate(const ExperimentConfig& c, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ": " + msg); };
  if (!(c.lambda >= 0.0)) fail("lambda must be nonnegative");
  if (c.sweep_lambdas.empty()) fail("sweep_lambdas must not be empty");
  for (double l : c.sweep_lambdas) {
    if (!(l >= 0.0)) fail("sweep_lambdas entries must be nonnegative");
  }
  if (!(c.train.learning_rate > 0.0)) fail("train.learning_rate must be positive");
  if (c.train.batch_size < 2) fail("train.batch_size must be at least 2");
  if (!(c.train.dropout_rate >= 0.0 && c.train.dropout_rate < 1.0)) {
    fail("train.dropout_rate must lie in [0, 1)");
  }
  if (!(c.train.tau > 0.0)) fail("train.tau must be positive");
  if (c.train.hidden == 0) fail("train.hidden must be positive");
  if (c.ensemble.size == 0) fail("ensemble.size must be at least 1");
  if (!(c.ensemble.adv_eps_scale >= 0.0)) fail("ensemble.adv_eps_scale must be nonnegative");
  if (c.mc_passes == 0) fail("mc_passes must be at least 1");
  if (c.metrics.bins == 0) fail("metrics.bins must be at least 1");
  if (c.splits.n_splits == 0) fail("splits.count must be at least 1");
  if (!(c.splits.test_fraction > 0.0 && c.splits.test_fraction < 1.0)) {
    fail("splits.test_fraction must lie in (0, 1)");
  }
  if (!(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0)) {
    fail("holdout_fraction must lie in (0, 1)");
  }
  if (c.synthetic_rows < 5) fail("synthetic_rows must be at least 5");
  if (c.desk_epochs == 0 || c.desk_rows < 5) fail("desk-scale caps are too small");
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                      (pos == std::string::npos ? msg : msg.substr(pos)));
  }

  ExperimentConfig c;
  const std::string& w = source;
  check_keys(j, w,
             {"dataset", "synthetic_rows", "descriptor_dir", "model", "lambda", "include_base",
              "sweep_lambdas", "train", "ensemble", "mc_passes", "metrics", "splits", "seed",
              "desk_scale", "desk_epochs", "desk_rows", "calib_split", "holdout_fraction",
              "threads", "output", "save_models"});
  read(j, "dataset", c.dataset, w);
  c.synthetic_rows = read_count(j, "synthetic_rows", c.synthetic_rows, w);
  read(j, "descriptor_dir", c.descriptor_dir, w);
  if (j.contains("model")) {
    std::string m;
    read(j, "model", m, w);
    if (m == "mc_dropout") {
      c.model = ModelKind::kMcDropout;
    } else if (m == "ensemble") {
      c.model = ModelKind::kEnsemble;
    } else {
      throw ConfigError(w + ": model must be 'mc_dropout' or 'ensemble', got '" + m + "'");
    }
  }
  read(j, "lambda", c.lambda, w);
  read(j, "include_base", c.include_base, w);
  read(j, "sweep_lambdas", c.sweep_lambdas, w);
  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string tw = w + ": train";
    check_keys(t, tw, {"learning_rate", "batch_size", "epochs", "dropout_rate", "tau", "hidden"});
    read(t, "learning_rate", c.train.learning_rate, tw);
    c.train.batch_size = read_count(t, "batch_size", c.train.batch_size, tw);
    c.train.epochs = read_count(t, "epochs", c.train.epochs, tw);
    read(t, "dropout_rate", c.train.dropout_rate, tw);
    read(t, "tau", c.train.tau, tw);
    c.train.hidden = read_count(t, "hidden", c.train.hidden, tw);
  }
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    const std::string ew = w + ": ensemble";
    check_keys(e, ew, {"size", "adv_eps_scale"});
    c.ensemble.size = read_count(e, "size", c.ensemble.size, ew);
    read(e, "adv_eps_scale", c.ensemble.adv_eps_scale, ew);
  }
  c.mc_passes = read_count(j, "mc_passes", c.mc_passes, w);
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    const std::string mw = w + ": metrics";
    check_keys(m, mw, {"bins", "percent"});
    c.metrics.bins = read_count(m, "bins", c.metrics.bins, mw);
    read(m, "percent", c.metrics.percent, mw);
  }
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    const std::string sw = w + ": splits";
    check_keys(s, sw, {"count", "test_fraction"});
    c.splits.n_splits = read_count(s, "count", c.splits.n_splits, sw);
    read(s, "test_fraction", c.splits.test_fraction, sw);
  }
  read(j, "seed", c.seed, w);
  read(j, "desk_scale", c.desk_scale, w);
  c.desk_epochs = read_count(j, "desk_epochs", c.desk_epochs, w);
  c.desk_rows = read_count(j, "desk_rows", c.desk_rows, w);
  if (j.contains("calib_split")) {
    std::string s;
    read(j, "calib_split", s, w);
    if (s == "train") {
      c.calib_split = CalibSplit::kTrain;
    } else if (s == "holdout") {
      c.calib_split = CalibSplit::kHoldout;
    } else {
      throw ConfigError(w + ": calib_split must be 'train' or 'holdout', got '" + s + "'");
    }
  }
  read(j, "holdout_fraction", c.holdout_fraction, w);
  c.threads = read_count(j, "threads", c.threads, w);
  read(j, "output", c.output, w);
  read(j, "save_models", c.save_models, w);
  validate(c, w);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["synthetic_rows"] = c.synthetic_rows;
  j["descriptor_dir"] = c.descriptor_dir;
  j["model"] = to_string(c.model);
  j["lambda"] = c.lambda;
  j["include_base"] = c.include_base;
  j["sweep_lambdas"] = c.sweep_lambdas;
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},               {"dropout_rate", c.train.dropout_rate},
                {"tau", c.train.tau},                     {"hidden", c.train.hidden}};
  j["ensemble"] = {{"size", c.ensemble.size}, {"adv_eps_scale", c.ensemble.adv_eps_scale}};
  j["mc_passes"] = c.mc_passes;
  j["metrics"] = {{"bins", c.metrics.bins}, {"percent", c.metrics.percent}};
  j["splits"] = {{"count", c.splits.n_splits}, {"test_fraction", c.splits.test_fraction}};
  j["seed"] = c.seed;
  j["desk_scale"] = c.desk_scale;
  j["desk_epochs"] = c.desk_epochs;
  j["desk_rows"] = c.desk_rows;
  j["calib_split"] = to_string(c.calib_split);
  j["holdout_fraction"] = c.holdout_fraction;
  j["threads"] = c.threads;
  j["output"] = c.output;
  j["save_models"] = c.save_models;
  return j.dump(2) + "\n";
}

ExperimentConfig effective_config(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  if (c.desk_scale) {
    c.train.epochs = std::min(c.train.epochs, c.desk_epochs);
    c.synthetic_rows = std::min(c.synthetic_rows, c.desk_rows);
  }
  c.splits.seed = c.seed;
  return c;
}

// --- data ---------------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t tag, std::uint64_t k = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

fs::path descriptor_dir(const ExperimentConfig& cfg) {
  if (!cfg.descriptor_dir.empty()) return cfg.descriptor_dir;
  if (const char* env = std::getenv("QRCAL_DESCRIPTOR_DIR")) return env;
  return QRCAL_DESCRIPTOR_DIR;
}

Dataset require_loaded(const DatasetDescriptor& d) {
  if (!fs::exists(d.resolved_path())) {
    throw ConfigError("dataset file not found: " + d.resolved_path().string() +
                      (d.url.empty() ? "" : " (download from " + d.url + ")"));
  }
  return load_dataset(d);
}

}  // namespace

Dataset resolve_dataset(const ExperimentConfig& cfg) {
  const auto c = effective_config(cfg);
  if (c.dataset == "synth_hetero") {
    return synth_hetero(c.synthetic_rows, derive_seed(c.seed, 6)).data;
  }
  const fs::path p(c.dataset);
  if (p.extension() == ".json") return require_loaded(load_descriptor(p));
  if (p.has_parent_path() || p.has_extension()) {
    if (!fs::exists(p)) throw ConfigError("dataset file not found: " + p.string());
    return load_csv(p);
  }
  const fs::path desc = descriptor_dir(c) / (c.dataset + ".json");
  if (!fs::exists(desc)) {
    throw ConfigError("unknown dataset '" + c.dataset + "': no descriptor at " + desc.string());
  }
  return require_loaded(load_descriptor(desc));
}

// --- running ------------------------------------------------------------------

namespace {

struct PreparedSplit {
  Standardizer scaler;
  Dataset fit;    // standardized
  Dataset calib;  // standardized; same rows as fit unless holding out
  Dataset test;   // standardized
  std::vector<double> calib_y;  // original units
  std::vector<double> test_y;
};

Dataset capped(const Dataset& data, const ExperimentConfig& c) {
  if (!c.desk_scale || data.size() <= c.desk_rows) return data;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(c.seed, 5));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(c.desk_rows);
  std::sort(idx.begin(), idx.end());
  return data.subset(idx);
}

PreparedSplit prepare(const Dataset& data, const Split& split, std::size_t k,
                      const ExperimentConfig& c) {
  std::vector<std::size_t> fit_idx = split.train;
  std::vector<std::size_t> calib_idx;
  if (c.calib_split == CalibSplit::kHoldout) {
    std::mt19937_64 rng(derive_seed(c.seed, 4, k));
    std::shuffle(fit_idx.begin(), fit_idx.end(), rng);
    const auto n_cal = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(c.holdout_fraction * fit_idx.size())), 2,
        fit_idx.size() - 2);
    calib_idx.assign(fit_idx.end() - static_cast<std::ptrdiff_t>(n_cal), fit_idx.end());
    fit_idx.resize(fit_idx.size() - n_cal);
    std::sort(fit_idx.begin(), fit_idx.end());
    std::sort(calib_idx.begin(), calib_idx.end());
  } else {
    calib_idx = fit_idx;
  }
  PreparedSplit p;
  const Dataset fit_raw = data.subset(fit_idx);
  const Dataset calib_raw = data.subset(calib_idx);
  const Dataset test_raw = data.subset(split.test);
  p.scaler = Standardizer::fit(fit_raw);
  p.fit = p.scaler.transform(fit_raw);
  p.calib = p.scaler.transform(calib_raw);
  p.test = p.scaler.transform(test_raw);
  p.calib_y = calib_raw.targets;
  p.test_y = test_raw.targets;
  return p;
}

std::vector<PreparedSplit> prepare_all(const ExperimentConfig& c, std::string* name) {
  const Dataset data = capped(resolve_dataset(c), c);
  if (name) *name = data.name.empty() ? c.dataset : data.name;
  const auto splits = make_splits(data.size(), c.splits);
  std::vector<PreparedSplit> out;
  for (std::size_t k = 0; k < splits.size(); ++k) out.push_back(prepare(data, splits[k], k, c));
  return out;
}

fs::path model_path(const ExperimentConfig& c, double lambda, std::size_t split,
                    std::optional<std::size_t> member) {
  std::string name = to_string(c.model) + "_lambda" + format_double(lambda) + "_split" +
                     std::to_string(split);
  if (member) name += "_member" + std::to_string(*member);
  return fs::path(c.output) / "models" / (name + ".qrcm");
}

struct Model {
  ModelKind kind = ModelKind::kMcDropout;
  MlpParams mc;
  Ensemble ensemble;
};

std::vector<GaussianPrediction> predict_original(const Model& m, const ad::Tensor& x,
                                                 const Standardizer& s, const ExperimentConfig& c,
                                                 std::uint64_t seed) {
  auto preds = m.kind == ModelKind::kMcDropout
                   ? mc_dropout_predict(m.mc, x, c.mc_passes, c.train.dropout_rate, seed)
                   : predict_ensemble(m.ensemble, x);
  for (auto& p : preds) p = s.prediction_to_original(p);
  return preds;
}

void save_model(const Model& m, const ExperimentConfig& c, double lambda, std::size_t split) {
  auto write = [](const fs::path& path, const MlpParams& p) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model file: " + path.string());
    save_params(out, p);
  };
  if (m.kind == ModelKind::kMcDropout) {
    write(model_path(c, lambda, split, std::nullopt), m.mc);
  } else {
    for (std::size_t i = 0; i < m.ensemble.members.size(); ++i) {
      write(model_path(c, lambda, split, i), m.ensemble.members[i]);
    }
  }
}

Model load_model(const ExperimentConfig& c, double lambda, std::size_t split,
                 std::size_t input_dim) {
  auto read = [&](const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("model artifact not found: " + path.string() + " (run train first)");
    MlpParams p = load_params(in);
    if (p.input_dim() != input_dim) {
      throw ConfigError("model artifact " + path.string() + " expects " +
                        std::to_string(p.input_dim()) + " features but the data has " +
                        std::to_string(input_dim));
    }
    return p;
  };
  Model m;
  m.kind = c.model;
  if (c.model == ModelKind::kMcDropout) {
    m.mc = read(model_path(c, lambda, split, std::nullopt));
  } else {
    for (std::size_t i = 0; i < c.ensemble.size; ++i) {
      m.ensemble.members.push_back(read(model_path(c, lambda, split, i)));
    }
  }
  return m;
}

std::size_t thread_count(const ExperimentConfig& c, std::size_t tasks) {
  std::size_t t = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(t, tasks));
}

// Runs task(i) for i in [0, n) on a small pool; rethrows the first failure
// in index order.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F task) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string csv_double(double v) { return format_double(v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_num(const std::string& s, const fs::path& path) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(path.string() + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != width) {
      throw ConfigError(path.string() + ": expected " + std::to_string(width) + " columns in '" +
                        line + "'");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows) {
  // Groups keep first-appearance order.
  std::vector<SummaryRow> out;
  std::vector<std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
      return s.dataset == r.dataset && s.model == r.model && s.lambda == r.lambda;
    });
    if (it == out.end()) {
      out.push_back({r.dataset, r.model, r.lambda});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::vector<double> ce, rm, nl;
    for (const auto* r : groups[g]) {
      ce.push_back(r->calib_error);
      rm.push_back(r->rmse);
      nl.push_back(r->nll);
    }
    out[g].n_splits = groups[g].size();
    std::tie(out[g].calib_error_mean, out[g].calib_error_std) = mean_std(ce);
    std::tie(out[g].rmse_mean, out[g].rmse_std) = mean_std(rm);
    std::tie(out[g].nll_mean, out[g].nll_std) = mean_std(nl);
  }
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, std::span<const double> lambdas) {
  if (lambdas.empty()) throw ConfigError("no lambda values to run");
  const ExperimentConfig c = effective_config(cfg);
  std::string name;
  const auto splits = prepare_all(c, &name);

  const std::size_t n_tasks = splits.size() * lambdas.size();
  const std::size_t threads = thread_count(c, n_tasks);
  std::vector<MetricsRow> rows(n_tasks);
  std::vector<std::vector<ReliabilityPoint>> curves(n_tasks);

  parallel_for(n_tasks, threads, [&](std::size_t t) {
    const std::size_t li = t / splits.size();
    const std::size_t k = t % splits.size();
    const double lambda = lambdas[li];
    const PreparedSplit& s = splits[k];
    TrainConfig tc = c.train;
    tc.lambda = lambda;
    tc.seed = derive_seed(c.seed, 1, k);
    Model m;
    m.kind = c.model;
    try {
      if (c.model == ModelKind::kMcDropout) {
        m.mc = train(s.fit, tc).params;
      } else {
        EnsembleConfig ec = c.ensemble;
        ec.threads = threads > 1 ? 1 : 0;
        m.ensemble = train_ensemble(s.fit, tc, ec);
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError("split " + std::to_string(k) + ", lambda " + format_double(lambda) +
                            ": " + e.what());
    }
    if (c.save_models) save_model(m, c, lambda, k);
    const auto preds = predict_original(m, s.test.features, s.scaler, c, derive_seed(c.seed, 2, k));
    const auto report = evaluate(preds, s.test_y, c.metrics);
    rows[t] = {name, to_string(c.model), lambda, k, report.n, report.calib_error, report.rmse,
               report.nll};
    curves[t] = report.reliability;
  });

  RunResult r;
  r.metrics = rows;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    for (const auto& pt : curves[t]) {
      r.reliability.push_back({rows[t].model, rows[t].lambda, rows[t].split, pt});
    }
  }
  r.summary = summarize(r.metrics);
  return r;
}

namespace {

void write_summary_csv(const fs::path& path, std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << "dataset,model,lambda,n_splits,calib_error_mean,calib_error_std,rmse_mean,rmse_std,"
        "nll_mean,nll_std\n";
  for (const auto& s : rows) {
    os << s.dataset << ',' << s.model << ',' << csv_double(s.lambda) << ',' << s.n_splits << ','
       << csv_double(s.calib_error_mean) << ',' << csv_double(s.calib_error_std) << ','
       << csv_double(s.rmse_mean) << ',' << csv_double(s.rmse_std) << ','
       << csv_double(s.nll_mean) << ',' << csv_double(s.nll_std) << '\n';
  }
  write_text(path, os.str());
}

void write_reliability_csv(const fs::path& path, std::span<const ReliabilityRow> rows) {
  std::ostringstream os;
  os << "model,lambda,split,p,observed\n";
  for (const auto& r : rows) {
    os << r.model << ',' << csv_double(r.lambda) << ',' << r.split << ','
       << csv_double(r.point.expected) << ',' << csv_double(r.point.observed) << '\n';
  }
  write_text(path, os.str());
}

void write_run_json(const ExperimentConfig& c, const std::string& verb,
                    std::span<const double> lambdas) {
  json j;
  j["verb"] = verb;
  j["lambdas"] = std::vector<double>(lambdas.begin(), lambdas.end());
  j["config"] = json::parse(config_to_json(effective_config(c)));
  write_text(fs::path(c.output) / "run.json", j.dump(2) + "\n");
}

void write_run_outputs(const ExperimentConfig& c, const RunResult& r) {
  const fs::path out(c.output);
  write_metrics_csv(out / "metrics.csv", r.metrics);
  write_summary_csv(out / "summary.csv", r.summary);
  write_reliability_csv(out / "reliability.csv", r.reliability);
}

}  // namespace

RunResult cmd_train(const ExperimentConfig& cfg) {
  std::vector<double> lambdas;
  if (cfg.include_base && cfg.lambda != 0.0) lambdas.push_back(0.0);
  lambdas.push_back(cfg.lambda);
  auto r = run_experiment(cfg, lambdas);
  write_run_outputs(cfg, r);
  write_run_json(cfg, "train", lambdas);
  return r;
}

RunResult cmd_sweep(const ExperimentConfig& cfg) {
  auto r = run_experiment(cfg, cfg.sweep_lambdas);
  write_run_outputs(cfg, r);
  write_run_json(cfg, "sweep", cfg.sweep_lambdas);
  std::ostringstream os;
  os << "lambda,calib_error_mean,calib_error_std,rmse_mean,rmse_std,nll_mean,nll_std\n";
  for (const auto& s : r.summary) {
    os << csv_double(s.lambda) << ',' << csv_double(s.calib_error_mean) << ','
       << csv_double(s.calib_error_std) << ',' << csv_double(s.rmse_mean) << ','
       << csv_double(s.rmse_std) << ',' << csv_double(s.nll_mean) << ','
       << csv_double(s.nll_std) << '\n';
  }
  write_text(fs::path(cfg.output) / "curve.csv", os.str());
  return r;
}

std::vector<RecalibrationRow> cmd_recalibrate(const ExperimentConfig& cfg) {
  const ExperimentConfig c = effective_config(cfg);
  std::vector<double> lambdas;
  if (c.include_base && c.lambda != 0.0) lambdas.push_back(0.0);
  lambdas.push_back(c.lambda);
  std::string name;
  const auto splits = prepare_all(c, &name);

  const std::size_t n_tasks = splits.size() * lambdas.size();
  std::vector<RecalibrationRow> rows(n_tasks);
  parallel_for(n_tasks, thread_count(c, n_tasks), [&](std::size_t t) {
    const std::size_t li = t / splits.size();
    const std::size_t k = t % splits.size();
    const PreparedSplit& s = splits[k];
    const Model m = load_model(c, lambdas[li], k, s.fit.dims());
    const auto test = predict_original(m, s.test.features, s.scaler, c, derive_seed(c.seed, 2, k));
    const auto cal = predict_original(m, s.calib.features, s.scaler, c, derive_seed(c.seed, 3, k));
    const CalibrationMap map = fit_calibration_map(cal, s.calib_y);
    std::vector<double> pre = pit(test, s.test_y);
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) post[i] = apply_map(map, pre[i]);
    rows[t] = {name,
               to_string(c.model),
               lambdas[li],
               k,
               to_string(c.calib_split),
               s.calib_y.size(),
               calibration_error(pre, c.metrics),
               calibration_error(post, c.metrics)};
  });
  write_recalibration_csv(fs::path(c.output) / "recalibration.csv", rows);
  return rows;
}

// --- CSV ----------------------------------------------------------------------

void write_metrics_csv(const fs::path& path, std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os << "dataset,model,lambda,split,n_test,calib_error,rmse,nll\n";
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.model << ',' << csv_double(r.lambda) << ',' << r.split << ','
       << r.n_test << ',' << csv_double(r.calib_error) << ',' << csv_double(r.rmse) << ','
       << csv_double(r.nll) << '\n';
  }
  write_text(path, os.str());
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::vector<MetricsRow> rows;
  for (const auto& c : read_csv_rows(path, 8)) {
    rows.push_back({c[0], c[1], parse_num(c[2], path),
                    static_cast<std::size_t>(parse_num(c[3], path)),
                    static_cast<std::size_t>(parse_num(c[4], path)), parse_num(c[5], path),
                    parse_num(c[6], path), parse_num(c[7], path)});
  }
  return rows;
}

void write_recalibration_csv(const fs::path& path, std::span<const RecalibrationRow> rows) {
  std::ostringstream os;
  os << "dataset,model,lambda,split,calib_split,n_calib,pre,post,flag\n";
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.model << ',' << csv_double(r.lambda) << ',' << r.split << ','
       << r.calib_split << ',' << r.n_calib << ',' << csv_double(r.pre) << ','
       << csv_double(r.post) << ',' << (r.post > r.pre ? "*" : "") << '\n';
  }
  write_text(path, os.str());
}

std::vector<RecalibrationRow> read_recalibration_csv(const fs::path& path) {
  std::vector<RecalibrationRow> rows;
  for (const auto& c : read_csv_rows(path, 9)) {
    rows.push_back({c[0], c[1], parse_num(c[2], path),
                    static_cast<std::size_t>(parse_num(c[3], path)), c[4],
                    static_cast<std::size_t>(parse_num(c[5], path)), parse_num(c[6], path),
                    parse_num(c[7], path)});
  }
  return rows;
}

// --- report -------------------------------------------------------------------

void bold_lowest(std::span<TableCell*> cells) {
  if (cells.empty()) return;
  double best = INFINITY;
  for (const auto* c : cells) best = std::min(best, c->mean);
  for (auto* c : cells) c->bold = c->mean - best <= 1e-9;
}

std::string format_cell(const TableCell& cell) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", cell.mean, cell.std);
  std::string s = buf;
  if (cell.flagged) s += "*";
  return cell.bold ? "**" + s + "**" : s;
}

namespace {

std::string lambda_label(double lambda) {
  return lambda == 0.0 ? "base" : "QR (λ=" + format_double(lambda) + ")";
}

// (dataset, model) groups in first-appearance order with their lambdas sorted.
template <typename Row>
std::vector<std::pair<std::pair<std::string, std::string>, std::vector<double>>> groups_of(
    std::span<const Row> rows) {
  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<double>>> g;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.dataset, r.model);
    auto it = std::find_if(g.begin(), g.end(), [&](const auto& e) { return e.first == key; });
    if (it == g.end()) {
      g.push_back({key, {}});
      it = g.end() - 1;
    }
    if (std::find(it->second.begin(), it->second.end(), r.lambda) == it->second.end()) {
      it->second.push_back(r.lambda);
    }
  }
  for (auto& e : g) std::sort(e.second.begin(), e.second.end());
  return g;
}

}  // namespace

std::string render_metrics_table(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw DomainError("report: no metrics rows");
  std::ostringstream os;
  const char* metric_names[3] = {"Calib Error", "RMSE", "NLL"};
  for (const auto& [key, lambdas] : groups_of(rows)) {
    os << "### " << key.first << " / " << key.second << "\n\n| Metric |";
    for (double l : lambdas) os << ' ' << lambda_label(l) << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < lambdas.size(); ++i) os << "---|";
    os << '\n';
    for (int m = 0; m < 3; ++m) {
      std::vector<TableCell> cells;
      for (double l : lambdas) {
        std::vector<double> v;
        for (const auto& r : rows) {
          if (r.dataset != key.first || r.model != key.second || r.lambda != l) continue;
          v.push_back(m == 0 ? r.calib_error : (m == 1 ? r.rmse : r.nll));
        }
        const auto [mean, sd] = mean_std(v);
        cells.push_back({mean, sd});
      }
      std::vector<TableCell*> ptrs;
      for (auto& c : cells) ptrs.push_back(&c);
      bold_lowest(ptrs);
      os << "| " << metric_names[m] << " |";
      for (const auto& c : cells) os << ' ' << format_cell(c) << " |";
      os << '\n';
    }
    os << '\n';
  }
  return os.str();
}

std::string render_recalibration_table(std::span<const RecalibrationRow> rows) {
  if (rows.empty()) throw DomainError("report: no recalibration rows");
  std::ostringstream os;
  for (const auto& [key, lambdas] : groups_of(rows)) {
    os << "### " << key.first << " / " << key.second << " (recalibration)\n\n|";
    for (double l : lambdas) os << ' ' << lambda_label(l) << " | " << lambda_label(l) << "+iso |";
    os << "\n|";
    for (std::size_t i = 0; i < lambdas.size(); ++i) os << "---|---|";
    os << '\n';
    std::vector<TableCell> pre, post;
    for (double l : lambdas) {
      std::vector<double> a, b;
      for (const auto& r : rows) {
        if (r.dataset != key.first || r.model != key.second || r.lambda != l) continue;
        a.push_back(r.pre);
        b.push_back(r.post);
      }
      const auto [am, as] = mean_std(a);
      const auto [bm, bs] = mean_std(b);
      pre.push_back({am, as});
      post.push_back({bm, bs, false, bm > am});
    }
    std::vector<TableCell*> pp, qq;
    for (auto& c : pre) pp.push_back(&c);
    for (auto& c : post) qq.push_back(&c);
    bold_lowest(pp);
    bold_lowest(qq);
    os << '|';
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      os << ' ' << format_cell(pre[i]) << " | " << format_cell(post[i]) << " |";
    }
    os << "\n\n";
  }
  return os.str();
}

std::string cmd_report(const fs::path& dir) {
  const fs::path metrics = dir / "metrics.csv";
  const fs::path recal = dir / "recalibration.csv";
  if (!fs::exists(metrics) && !fs::exists(recal)) {
    throw ConfigError("no metrics.csv or recalibration.csv in " + dir.string());
  }
  std::string text;
  std::ostringstream csv;
  csv << "dataset,model,table,column,lambda,mean,std,bold,flag\n";
  auto emit = [&](const std::string& ds, const std::string& model, const char* table,
                  const char* column, double lambda, const TableCell& c) {
    csv << ds << ',' << model << ',' << table << ',' << column << ',' << csv_double(lambda) << ','
        << csv_double(c.mean) << ',' << csv_double(c.std) << ',' << (c.bold ? 1 : 0) << ','
        << (c.flagged ? "*" : "") << '\n';
  };
  if (fs::exists(metrics)) {
    const auto rows = read_metrics_csv(metrics);
    if (rows.empty()) throw ConfigError(metrics.string() + " has no rows");
    text += render_metrics_table(rows);
    const char* names[3] = {"calib_error", "rmse", "nll"};
    for (const auto& [key, lambdas] : groups_of(std::span<const MetricsRow>(rows))) {
      for (int m = 0; m < 3; ++m) {
        std::vector<TableCell> cells;
        for (double l : lambdas) {
          std::vector<double> v;
          for (const auto& r : rows) {
            if (r.dataset == key.first && r.model == key.second && r.lambda == l) {
              v.push_back(m == 0 ? r.calib_error : (m == 1 ? r.rmse : r.nll));
            }
          }
          const auto [mean, sd] = mean_std(v);
          cells.push_back({mean, sd});
        }
        std::vector<TableCell*> ptrs;
        for (auto& c : cells) ptrs.push_back(&c);
        bold_lowest(ptrs);
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
          emit(key.first, key.second, "metrics", names[m], lambdas[i], cells[i]);
        }
      }
    }
  }
  if (fs::exists(recal)) {
    const auto rows = read_recalibration_csv(recal);
    if (rows.empty()) throw ConfigError(recal.string() + " has no rows");
    text += render_recalibration_table(rows);
    for (const auto& [key, lambdas] : groups_of(std::span<const RecalibrationRow>(rows))) {
      std::vector<TableCell> pre, post;
      for (double l : lambdas) {
        std::vector<double> a, b;
        for (const auto& r : rows) {
          if (r.dataset == key.first && r.model == key.second && r.lambda == l) {
            a.push_back(r.pre);
            b.push_back(r.post);
          }
        }
        const auto [am, as] = mean_std(a);
        const auto [bm, bs] = mean_std(b);
        pre.push_back({am, as});
        post.push_back({bm, bs, false, bm > am});
      }
      std::vector<TableCell*> pp, qq;
      for (auto& c : pre) pp.push_back(&c);
      for (auto& c : post) qq.push_back(&c);
      bold_lowest(pp);
      bold_lowest(qq);
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        emit(key.first, key.second, "recalibration", "pre", lambdas[i], pre[i]);
        emit(key.first, key.second, "recalibration", "post", lambdas[i], post[i]);
      }
    }
  }
  write_text(dir / "report.md", text);
  write_text(dir / "report.csv", csv.str());
  return text;
}

}  // namespace qrcal
