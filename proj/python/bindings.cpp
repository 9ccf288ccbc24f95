#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <vector>

#include "qrcal/ckl.hpp"
#include "qrcal/datasets.hpp"
#include "qrcal/error.hpp"
#include "qrcal/experiment.hpp"
#include "qrcal/gaussian.hpp"
#include "qrcal/metrics.hpp"
#include "qrcal/models.hpp"
#include "qrcal/recalib.hpp"
#include "qrcal/softsort.hpp"

namespace py = pybind11;
using namespace qrcal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ad::Tensor to_matrix(const Array& x) {
  if (x.ndim() == 1) {
    return ad::Tensor::matrix(static_cast<std::size_t>(x.shape(0)), 1,
                              std::vector<double>(x.data(), x.data() + x.size()));
  }
  if (x.ndim() != 2) throw ShapeError("expected a 1-D or 2-D array");
  return ad::Tensor::matrix(static_cast<std::size_t>(x.shape(0)),
                            static_cast<std::size_t>(x.shape(1)),
                            std::vector<double>(x.data(), x.data() + x.size()));
}

Array to_array(const ad::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<GaussianPrediction> zip(const std::vector<double>& mu,
                                    const std::vector<double>& sigma) {
  if (mu.size() != sigma.size()) throw ShapeError("mu and sigma lengths differ");
  std::vector<GaussianPrediction> p(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) p[i] = {mu[i], sigma[i]};
  return p;
}

py::tuple unzip(const std::vector<GaussianPrediction>& preds) {
  std::vector<double> mu, sigma;
  for (const auto& p : preds) {
    mu.push_back(p.mu);
    sigma.push_back(p.sigma);
  }
  return py::make_tuple(mu, sigma);
}

Dataset make_dataset(const Array& x, const std::vector<double>& y) {
  Dataset d;
  d.features = to_matrix(x);
  d.targets = y;
  if (d.features.rows() != y.size()) throw ShapeError("x and y row counts differ");
  return d;
}

py::list rows_to_dicts(const std::vector<MetricsRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["dataset"] = r.dataset;
    d["model"] = r.model;
    d["lambda"] = r.lambda;
    d["split"] = r.split;
    d["n_test"] = r.n_test;
    d["calib_error"] = r.calib_error;
    d["rmse"] = r.rmse;
    d["nll"] = r.nll;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Quantile-regularized calibration toolkit";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def("ckl_uniform", [](const std::vector<double>& s) { return ckl_uniform(s).value; },
        py::arg("samples"));
  m.def("cre_empirical", [](std::vector<double> s) {
    std::sort(s.begin(), s.end());
    return cre_empirical(s);
  });
  m.def("gap_weights", &gap_weights, py::arg("n"));

  m.def(
      "soft_sort",
      [](const std::vector<double>& s, double tau, bool descending) {
        return soft_sort_values(
            s, {tau, descending ? SortOrder::kDescending : SortOrder::kAscending});
      },
      py::arg("values"), py::arg("tau") = 0.1, py::arg("descending") = false);

  m.def(
      "quantile_reg_loss",
      [](const std::vector<double>& y, const std::vector<double>& mu,
         const std::vector<double>& sigma, double tau) {
        ad::Tape tape;
        ad::Var m = tape.variable(ad::Tensor::vector(mu));
        ad::Var s = tape.variable(ad::Tensor::vector(sigma));
        ad::Var loss = quantile_reg_loss(ad::Tensor::vector(y), m, s, {tau});
        const auto g = tape.gradients(loss, {m, s});
        return py::make_tuple(loss.value().item(), g[0].values(), g[1].values());
      },
      py::arg("y"), py::arg("mu"), py::arg("sigma"), py::arg("tau") = 0.1,
      "Regularizer value and its gradients with respect to mu and sigma.");

  m.def(
      "pit",
      [](const std::vector<double>& mu, const std::vector<double>& sigma,
         const std::vector<double>& y) { return pit(zip(mu, sigma), y); },
      py::arg("mu"), py::arg("sigma"), py::arg("y"));

  m.def(
      "calibration_error",
      [](const std::vector<double>& pits, std::size_t bins, bool percent) {
        return calibration_error(pits, {bins, percent});
      },
      py::arg("pits"), py::arg("bins") = 20, py::arg("percent") = true);
  m.def(
      "reliability_curve",
      [](const std::vector<double>& pits, std::size_t bins) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p : reliability_curve(pits, {bins, true})) {
          out.emplace_back(p.expected, p.observed);
        }
        return out;
      },
      py::arg("pits"), py::arg("bins") = 20);
  m.def(
      "evaluate",
      [](const std::vector<double>& mu, const std::vector<double>& sigma,
         const std::vector<double>& y, std::size_t bins) {
        const auto r = evaluate(zip(mu, sigma), y, {bins, true});
        py::dict d;
        d["calib_error"] = r.calib_error;
        d["rmse"] = r.rmse;
        d["nll"] = r.nll;
        d["n"] = r.n;
        return d;
      },
      py::arg("mu"), py::arg("sigma"), py::arg("y"), py::arg("bins") = 20);

  m.def(
      "pav",
      [](const std::vector<double>& xs, const std::vector<double>& ys) { return pav(xs, ys); },
      py::arg("xs"), py::arg("ys"));

  py::class_<CalibrationMap>(m, "CalibrationMap")
      .def(py::init<>())
      .def("__call__", &CalibrationMap::operator())
      .def_property_readonly("knots", [](const CalibrationMap& c) {
        std::vector<std::pair<double, double>> out;
        for (const auto& k : c.knots()) out.emplace_back(k.p, k.value);
        return out;
      });
  m.def(
      "fit_calibration_map",
      [](const std::vector<double>& pits) { return fit_calibration_map(pits); },
      py::arg("pits"));

  m.def(
      "synth_hetero",
      [](std::size_t n, std::uint64_t seed) {
        const auto s = synth_hetero(n, seed);
        const py::tuple truth = unzip(s.truth);
        return py::make_tuple(to_array(s.data.features), s.data.targets, truth[0], truth[1]);
      },
      py::arg("n"), py::arg("seed") = 0,
      "Returns (x, y, true_mu, true_sigma).");

  py::class_<MlpParams>(m, "Mlp")
      .def_property_readonly("input_dim", &MlpParams::input_dim)
      .def_property_readonly("hidden_dim", &MlpParams::hidden_dim)
      .def("predict",
           [](const MlpParams& p, const Array& x) { return unzip(predict(p, to_matrix(x))); })
      .def(
          "mc_predict",
          [](const MlpParams& p, const Array& x, std::size_t passes, double rate,
             std::uint64_t seed) {
            return unzip(mc_dropout_predict(p, to_matrix(x), passes, rate, seed));
          },
          py::arg("x"), py::arg("passes") = 10, py::arg("rate") = 0.25, py::arg("seed") = 0);

  m.def(
      "train_mlp",
      [](const Array& x, const std::vector<double>& y, double lam, std::size_t epochs,
         std::size_t hidden, double dropout_rate, std::size_t batch_size, double learning_rate,
         double tau, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.lambda = lam;
        cfg.epochs = epochs;
        cfg.hidden = hidden;
        cfg.dropout_rate = dropout_rate;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.tau = tau;
        cfg.seed = seed;
        const Dataset data = make_dataset(x, y);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(data, cfg);
        }
        return py::make_tuple(std::move(r.params), r.epoch_loss);
      },
      py::arg("x"), py::arg("y"), py::arg("lam") = 0.0, py::arg("epochs") = 100,
      py::arg("hidden") = 128, py::arg("dropout_rate") = 0.25, py::arg("batch_size") = 512,
      py::arg("learning_rate") = 1e-2, py::arg("tau") = 0.1, py::arg("seed") = 0,
      "Trains on already standardized data; returns (model, epoch_losses).");

  m.def(
      "run_train",
      [](const std::string& config_json) {
        const auto cfg = parse_config(config_json, "<python>");
        RunResult r;
        {
          py::gil_scoped_release release;
          r = cmd_train(cfg);
        }
        return rows_to_dicts(r.metrics);
      },
      py::arg("config_json"), "Runs the train verb from a JSON config string.");
  m.def(
      "run_sweep",
      [](const std::string& config_json) {
        const auto cfg = parse_config(config_json, "<python>");
        RunResult r;
        {
          py::gil_scoped_release release;
          r = cmd_sweep(cfg);
        }
        return rows_to_dicts(r.metrics);
      },
      py::arg("config_json"));
  m.def("report", [](const std::string& dir) { return cmd_report(dir); }, py::arg("results_dir"));
  m.def(
      "default_config",
      [] { return config_to_json(ExperimentConfig{}); },
      "The default experiment config as JSON text.");
}
