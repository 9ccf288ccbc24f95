// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only N,...] [--expect-fail N,...]
//
// Exit status is 0 when every criterion outside --expect-fail passes.
// Criteria listed in --expect-fail still print their honest verdict.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qrcal/ckl.hpp"
#include "qrcal/datasets.hpp"
#include "qrcal/experiment.hpp"
#include "qrcal/gaussian.hpp"
#include "qrcal/metrics.hpp"
#include "qrcal/models.hpp"
#include "qrcal/recalib.hpp"
#include "qrcal/softsort.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace qrcal;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("qrcal_accept_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------

Verdict estimator_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0, lowest = INFINITY;
  for (std::size_t n : {10u, 100u, 1000u}) {
    for (int t = 0; t < 50; ++t) {
      const auto s = testing::uniform_vector(rng, n);
      const double est = ckl_uniform(s).value;
      worst = std::max(worst, std::abs(est - testing::ckl_by_integration(s)));
      lowest = std::min(lowest, est);
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && lowest >= -1e-9 && secs < 5.0,
          fmt("max |estimate - integral| = %.2e (tol 1e-9), min value = %.3e (>= -1e-9), "
              "%.2f s (< 5 s)",
              worst, lowest, secs)};
}

Verdict consistency() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::vector<double> medians;
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    std::vector<double> vals;
    for (int t = 0; t < 50; ++t) vals.push_back(ckl_uniform(testing::uniform_vector(rng, n)).value);
    medians.push_back(median(vals));
  }
  const bool decreasing = std::is_sorted(medians.rbegin(), medians.rend()) &&
                          std::adjacent_find(medians.begin(), medians.end()) == medians.end();
  const double secs = seconds_since(t0);
  return {medians.back() < 1e-2 && decreasing && secs < 30.0,
          fmt("medians n=10,100,1000,10000: %.3e %.3e %.3e %.3e (last < 1e-2, strictly "
              "decreasing), %.2f s (< 30 s)",
              medians[0], medians[1], medians[2], medians[3], secs)};
}

Verdict gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  const std::size_t n = 16, d = 4, hidden = 8;
  const double h = 1e-5, tol = 1e-3;
  double worst_reg = 0, worst_total = 0, worst_sort = 0, worst_mlp = 0;
  for (int t = 0; t < 5; ++t) {
    const auto y = testing::uniform_vector(rng, n, -2.0, 2.0);
    auto packed = testing::uniform_vector(rng, n, -1.0, 1.0);
    const auto sig = testing::uniform_vector(rng, n, 0.5, 2.0);
    packed.insert(packed.end(), sig.begin(), sig.end());
    const ad::Tensor yt = ad::Tensor::vector(y);
    const ad::Tensor pt = ad::Tensor::vector(packed);
    worst_reg = std::max(worst_reg, ad::finite_diff_check(
                                        [&](ad::Var p) {
                                          return quantile_reg_loss(yt, ad::slice(p, 0, n),
                                                                   ad::slice(p, n, 2 * n), {0.1});
                                        },
                                        pt, h));
    worst_total = std::max(worst_total, ad::finite_diff_check(
                                            [&](ad::Var p) {
                                              return total_loss(yt, ad::slice(p, 0, n),
                                                                ad::slice(p, n, 2 * n), 20.0,
                                                                {0.1});
                                            },
                                            pt, h));

    const auto s = testing::uniform_vector(rng, n, -1.0, 1.0);
    const auto w = testing::uniform_vector(rng, n, -1.0, 1.0);
    for (SortOrder order : {SortOrder::kAscending, SortOrder::kDescending}) {
      worst_sort = std::max(
          worst_sort, ad::finite_diff_check(
                          [&](ad::Var p) {
                            const ad::Var sorted = soft_sorted(p, {0.1, order});
                            return ad::sum(sorted * p.tape().constant(ad::Tensor::vector(w)));
                          },
                          ad::Tensor::vector(s), h));
    }

    // Full MLP loss with respect to every parameter, packed into one vector.
    const MlpParams params = init_mlp(d, hidden, 400 + t);
    std::vector<double> flat;
    std::vector<ad::Shape> shapes;
    for (const auto* b : params.blocks()) {
      flat.insert(flat.end(), b->data().begin(), b->data().end());
      shapes.push_back(b->shape());
    }
    const auto xv = testing::uniform_vector(rng, n * d, -1.0, 1.0);
    const ad::Tensor x = ad::Tensor::matrix(n, d, xv);
    worst_mlp = std::max(worst_mlp, ad::finite_diff_check(
                                        [&](ad::Var p) {
                                          std::vector<ad::Var> blocks;
                                          std::size_t off = 0;
                                          for (const auto& sh : shapes) {
                                            std::size_t len = 1;
                                            for (auto e : sh) len *= e;
                                            blocks.push_back(
                                                ad::reshape(ad::slice(p, off, off + len), sh));
                                            off += len;
                                          }
                                          const auto out =
                                              mlp_forward(blocks, p.tape().constant(x));
                                          return total_loss(yt, out.mu, out.sigma, 20.0, {0.1});
                                        },
                                        ad::Tensor::vector(flat), h));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_reg, worst_total, worst_sort, worst_mlp});
  return {worst < tol && secs < 10.0,
          fmt("max rel. error: quantile_reg_loss %.1e, total_loss %.1e, soft_sorted %.1e, "
              "MLP loss %.1e (tol 1e-3, h 1e-5), %.2f s (< 10 s)",
              worst_reg, worst_total, worst_sort, worst_mlp, secs)};
}


Verdict soft_sort_fidelity() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> size(2, 32);
  double worst_dev = 0.0, worst_row = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto s = testing::distinct_vector(rng, size(rng), 0.05);
    auto hard = s;
    std::sort(hard.begin(), hard.end());
    const auto soft = soft_sort_values(s, {1e-3});
    for (std::size_t i = 0; i < s.size(); ++i) {
      worst_dev = std::max(worst_dev, std::abs(soft[i] - hard[i]));
    }
    ad::Tape tape;
    const ad::Tensor p = soft_permutation(tape.constant(ad::Tensor::vector(s)), {1e-3}).value();
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) row += p.at(i, j);
      worst_row = std::max(worst_row, std::abs(row - 1.0));
    }
  }
  return {worst_dev < 1e-4 && worst_row <= 1e-12,
          fmt("max |soft - hard| = %.2e (< 1e-4), max |row sum - 1| = %.2e (<= 1e-12)", worst_dev,
              worst_row)};
}

Verdict pav_correctness() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> size(1, 8);
  double worst = 0.0, worst_idem = 0.0, worst_mean = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = size(rng);
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = static_cast<double>(i);
    const auto ys = testing::uniform_vector(rng, n, -1.0, 1.0);
    const auto fit = pav(xs, ys);
    const auto oracle = testing::monotone_projection_bruteforce(ys);
    double sy = 0.0, sf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(fit[i] - oracle[i]));
      sy += ys[i];
      sf += fit[i];
    }
    const auto again = pav(xs, fit);
    for (std::size_t i = 0; i < n; ++i) worst_idem = std::max(worst_idem, std::abs(again[i] - fit[i]));
    worst_mean = std::max(worst_mean, std::abs(sy - sf) / static_cast<double>(n));
  }
  return {worst <= 1e-8 && worst_idem <= 1e-12 && worst_mean <= 1e-12,
          fmt("max |pav - brute force| = %.2e (tol 1e-8), idempotence %.2e, mean shift %.2e "
              "(tol 1e-12)",
              worst, worst_idem, worst_mean)};
}

Verdict same_data_recalibration() {
  const std::size_t n = 2000;
  const auto syn = synth_hetero(n, 606);
  MetricConfig raw;
  raw.percent = false;
  const double bound = 1.0 / 20.0 + 1.0 / static_cast<double>(n);
  // The true conditional law and a deliberately overconfident, shifted one.
  std::vector<GaussianPrediction> skewed = syn.truth;
  for (auto& p : skewed) {
    p.mu += 0.2;
    p.sigma *= 0.5;
  }
  bool pass = true;
  std::string detail;
  using Preds = std::vector<GaussianPrediction>;
  for (const Preds* preds : {&syn.truth, static_cast<const Preds*>(&skewed)}) {
    const auto map = fit_calibration_map(*preds, syn.data.targets);
    std::vector<double> post;
    for (std::size_t i = 0; i < n; ++i) {
      post.push_back(recalibrated_pit(map, (*preds)[i], syn.data.targets[i]));
    }
    const double before = calibration_error(pit(*preds, syn.data.targets), raw);
    const double after = calibration_error(post, raw);
    pass = pass && after < bound && after <= before;
    detail += fmt("%s %.2e -> %.2e; ", preds == &syn.truth ? "true law" : "skewed", before, after);
  }
  return {pass, detail + fmt("bound 1/M + 1/n = %.4f", bound)};
}

// Criteria 7 and 10 share these runs.
struct DirectionalRun {
  std::string dataset;
  std::size_t wins = 0;
  std::size_t splits = 0;
  double rmse_ratio = 0.0;
  double nll_diff = 0.0;
  std::string metrics_csv;
};

ExperimentConfig directional_config(const std::string& dataset, const fs::path& out) {
  ExperimentConfig c;  // model and training defaults are the paper settings
  c.dataset = dataset;
  c.synthetic_rows = 2000;
  c.desk_scale = true;
  c.lambda = 20.0;
  c.include_base = true;
  c.save_models = false;
  c.seed = 0;
  c.output = out.string();
  return c;
}

DirectionalRun directional_run(const std::string& dataset, const std::string& tag) {
  const fs::path out = scratch_dir(tag);
  const auto r = cmd_train(directional_config(dataset, out));
  DirectionalRun d;
  d.dataset = dataset;
  std::vector<double> ce0, ce1;
  for (const auto& m : r.metrics) (m.lambda == 0.0 ? ce0 : ce1).push_back(m.calib_error);
  d.splits = ce0.size();
  for (std::size_t k = 0; k < d.splits; ++k) d.wins += ce1[k] < ce0[k];
  const auto& base = r.summary[0];
  const auto& qr = r.summary[1];
  d.rmse_ratio = qr.rmse_mean / base.rmse_mean;
  d.nll_diff = qr.nll_mean - base.nll_mean;
  d.metrics_csv = slurp(out / "metrics.csv");
  fs::remove_all(out);
  return d;
}

std::vector<std::string> directional_datasets(std::string& skipped) {
  std::vector<std::string> names{"synth_hetero"};
  const fs::path dir = fs::path(QRCAL_SOURCE_DIR) / "data" / "descriptors";
  for (const char* name : {"boston", "airfoil", "yacht"}) {
    const auto desc = load_descriptor(dir / (std::string(name) + ".json"));
    if (fs::exists(desc.resolved_path())) {
      names.push_back((dir / (std::string(name) + ".json")).string());
    } else {
      skipped += std::string(skipped.empty() ? "" : ", ") + name;
    }
  }
  return names;
}

std::vector<DirectionalRun> first_runs;

Verdict directional() {
  const auto t0 = Clock::now();
  std::string skipped;
  bool pass = true;
  std::string detail;
  first_runs.clear();
  for (const auto& name : directional_datasets(skipped)) {
    auto d = directional_run(name, "c7_" + std::to_string(first_runs.size()));
    const bool ok = d.wins >= 4 && d.rmse_ratio <= 1.10 && d.nll_diff <= 0.15;
    pass = pass && ok;
    detail += fmt("%s: QR lower calib error in %zu/%zu splits (>= 4), RMSE ratio %.3f (<= 1.10), "
                  "NLL diff %+.3f nats (<= 0.15); ",
                  fs::path(name).stem().c_str(), d.wins, d.splits, d.rmse_ratio, d.nll_diff);
    first_runs.push_back(std::move(d));
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 600.0;
  if (!skipped.empty()) detail += "skipped (files absent): " + skipped + "; ";
  return {pass, detail + fmt("%.1f s (< 600 s)", secs)};
}

Verdict sweep_direction() {
  const fs::path out = scratch_dir("c8");
  ExperimentConfig c = directional_config("synth_hetero", out);
  c.sweep_lambdas = {0.0, 1.0, 5.0, 10.0, 20.0};
  const auto r = cmd_sweep(c);
  fs::remove_all(out);
  std::vector<double> lambdas, ce;
  std::string detail = "mean calib error by lambda:";
  for (const auto& s : r.summary) {
    lambdas.push_back(s.lambda);
    ce.push_back(s.calib_error_mean);
    detail += fmt(" %g:%.3f", s.lambda, s.calib_error_mean);
  }
  const double rho = spearman(lambdas, ce);
  return {rho < 0.0, detail + fmt("; Spearman rho = %.3f (< 0) over %zu splits", rho,
                                  r.summary.front().n_splits)};
}

Verdict recalibration_pathology() {
  const fs::path out = scratch_dir("c9");
  ExperimentConfig c = directional_config("synth_hetero", out);
  c.synthetic_rows = 400;
  c.desk_scale = false;
  c.model = ModelKind::kEnsemble;
  c.save_models = true;
  c.calib_split = CalibSplit::kTrain;
  cmd_train(c);
  const auto rows = cmd_recalibrate(c);
  fs::remove_all(out);
  std::size_t worse = 0, n0 = 0;
  double deg0 = 0.0, deg1 = 0.0;
  std::size_t n1 = 0;
  for (const auto& r : rows) {
    if (r.lambda == 0.0) {
      worse += r.post > r.pre;
      deg0 += r.post - r.pre;
      ++n0;
    } else {
      deg1 += r.post - r.pre;
      ++n1;
    }
  }
  deg0 /= static_cast<double>(n0);
  deg1 /= static_cast<double>(n1);
  return {worse >= 3 && deg1 < deg0,
          fmt("base+iso worse than base in %zu/%zu splits (>= 3); mean post - pre: base %+.3f, "
              "QR %+.3f (QR < base)",
              worse, n0, deg0, deg1)};
}

Verdict determinism() {
  if (first_runs.empty()) directional();
  bool same = true;
  std::string detail;
  for (std::size_t i = 0; i < first_runs.size(); ++i) {
    const auto again = directional_run(first_runs[i].dataset, "c10_" + std::to_string(i));
    const bool eq = again.metrics_csv == first_runs[i].metrics_csv;
    same = same && eq;
    detail += fmt("%s metrics.csv %s (%zu bytes); ", fs::path(first_runs[i].dataset).stem().c_str(),
                  eq ? "byte-identical" : "differs", again.metrics_csv.size());
  }
  return {same, detail};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, expect_fail;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = parse_list(argv[++i]);
    } else if (a == "--expect-fail" && i + 1 < argc) {
      expect_fail = parse_list(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--only N,...] [--expect-fail N,...]\n");
      return 2;
    }
  }
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "estimator matches exact integration", estimator_oracle},
      {2, "estimator consistency", consistency},
      {3, "gradient correctness", gradients},
      {4, "soft sort fidelity", soft_sort_fidelity},
      {5, "PAV correctness", pav_correctness},
      {6, "isotonic map on its own data", same_data_recalibration},
      {7, "QR lowers calibration error (desk scale)", directional},
      {8, "lambda sweep direction", sweep_direction},
      {9, "small-data recalibration pathology", recalibration_pathology},
      {10, "pipeline determinism", determinism},
  };
  int unexpected = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const bool expected = expect_fail.count(c.id) > 0;
    std::printf("[%s] %2d %s: %s%s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(),
                !v.pass && expected ? " (known failure)" : "");
    std::fflush(stdout);
    if (!v.pass && !expected) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
