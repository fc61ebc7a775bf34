#include "gstein/estimators.hpp"
#include "gstein/experiments.hpp"
#include "gstein/ksd.hpp"
#include "gstein/svgd.hpp"
#include "gstein/verify.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace gstein;

namespace {

Dataset to_dataset(const Mat& x, const std::optional<Eigen::VectorXi>& y = std::nullopt) {
  Dataset d;
  d.x = x;
  d.y = y;
  return d;
}

py::object json_to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict fit_info(const FitResult& f) {
  py::dict info;
  info["converged"] = f.converged;
  info["iterations"] = f.iterations;
  info["residual"] = f.final_residual;
  info["flags"] = f.flags;
  return info;
}

// Gamma estimator (method "gamma") or the classical baseline (method "mle")
// for the family of `start`, which also supplies the initial values.
std::pair<ModelSpec, py::dict> fit(const ModelSpec& start, const Mat& x, double gamma, const std::string& method) {
  const Dataset d = to_dataset(x);
  const bool mle = method == "mle";
  if (!mle && method != "gamma") throw ArgumentError("method must be 'gamma' or 'mle'");
  FitResult f;
  switch (start.family()) {
    case Family::gaussian:
      f = gaussian_fixed_point(d, mle ? 0.0 : gamma, std::get<GaussianParams>(start.params));
      break;
    case Family::vmf:
      f = mle ? vmf_mle(d) : vmf_fixed_point(d, gamma, std::get<VmfParams>(start.params));
      break;
    case Family::quartic:
      f = mle ? quartic_mle(d, std::get<QuarticParams>(start.params))
              : quartic_fit(d, gamma, {std::get<QuarticParams>(start.params)});
      break;
    case Family::mixture: {
      const auto& p = std::get<MixtureParams>(start.params);
      f = mle ? nmm_em_mle(d, p) : nmm_fit_from(d, p, HomotopySchedule::linear(gamma, gamma > 0.0 ? 3 : 1));
      break;
    }
    case Family::fisher_bingham:
      if (mle) throw ArgumentError("no MLE baseline for the Fisher-Bingham family");
      f = solve_moment_norm(start, d, gamma);
      break;
    case Family::poisson_regression:
      throw ArgumentError("use the SVGD tools for Poisson regression");
  }
  return {f.params, fit_info(f)};
}

py::dict gof(const Mat& x, const ModelSpec& q, double gamma, std::optional<double> bandwidth, int B, double alpha,
             std::uint64_t seed, const std::string& calibration) {
  const Dataset d = to_dataset(x);
  const KernelSpec K{bandwidth ? *bandwidth : median_bandwidth(d)};
  Calibration cal;
  if (calibration == "null")
    cal = Calibration::null_simulation;
  else if (calibration == "multiplier")
    cal = Calibration::multiplier;
  else
    throw ArgumentError("calibration must be 'null' or 'multiplier'");
  const NullSampler null = [q](std::size_t n, Rng& r) { return sample(q, n, r); };
  Rng rng(seed);
  const GofTestResult t = gof_test(d, q, gamma, K, cal, null, B, alpha, rng);
  py::dict out;
  out["statistic"] = t.statistic;
  out["critical_value"] = t.critical_value;
  out["p_value"] = t.p_value;
  out["reject"] = t.reject;
  out["bandwidth"] = K.bandwidth;
  out["calibration_warning"] = t.calibration_warning;
  return out;
}

py::dict experiment(const std::string& name, bool desk, const std::string& overrides, int threads,
                    std::optional<std::string> output_dir) {
  ScenarioConfig cfg = default_scenario(name, desk);
  if (!overrides.empty()) cfg = scenario_from_json(Json::parse(overrides), cfg);
  if (output_dir) cfg.output_dir = *output_dir;
  ExperimentReport r;
  {
    py::gil_scoped_release release;
    r = run_experiment(cfg, RunOptions{threads, output_dir.has_value()});
  }
  py::list cells;
  for (const auto& c : r.cells) {
    py::dict e;
    e["row"] = c.row;
    e["column"] = c.column;
    e["metric"] = c.metric;
    e["value"] = c.value;
    e["stderr"] = c.stderr_;
    e["failures"] = c.failures;
    e["replications"] = c.replications;
    cells.append(e);
  }
  py::dict out;
  out["name"] = r.name;
  out["cells"] = cells;
  out["table"] = r.text_table;
  out["files"] = r.files;
  out["self_consistent"] = r.self_consistent;
  out["failure_threshold_exceeded"] = r.failure_threshold_exceeded;
  out["verification_failed"] = r.verification_failed;
  return out;
}

}  // namespace

PYBIND11_MODULE(_gstein, m) {
  m.doc() = "gamma-weighted Stein estimators, kernel Stein tests and SVGD";
  m.attr("__version__") = GSTEIN_VERSION;

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_property_readonly("family", [](const ModelSpec& s) { return family_name(s.family()); })
      .def_property_readonly("dim", &ModelSpec::dim)
      .def_readwrite("log_scale", &ModelSpec::log_scale)
      .def_property_readonly("params", [](const ModelSpec& s) { return json_to_py(model_to_json(s)); })
      .def("__repr__", [](const ModelSpec& s) { return "ModelSpec(" + family_name(s.family()) + ", " + model_to_json(s).dump() + ")"; });

  m.def("make_gaussian", &make_gaussian, py::arg("mean"), py::arg("precision"));
  m.def("make_vmf", &make_vmf, py::arg("mu"), py::arg("kappa"));
  m.def("make_fisher_bingham", &make_fisher_bingham, py::arg("xi"), py::arg("B"));
  m.def("make_mixture", &make_mixture, py::arg("weights"), py::arg("means"), py::arg("precisions"));
  m.def("make_quartic", &make_quartic, py::arg("theta1"), py::arg("theta2"), py::arg("theta3"));
  m.def("make_poisson_regression", &make_poisson_regression, py::arg("alpha"), py::arg("prior_variances"));

  m.def(
      "evaluate",
      [](const ModelSpec& s, const Vec& x) {
        const ModelEval e = evaluate(s, x);
        return py::make_tuple(e.log_u, e.score_x);
      },
      py::arg("model"), py::arg("x"), "log u and ambient x-score at x");

  m.def(
      "sample",
      [](const ModelSpec& s, std::size_t n, std::uint64_t seed) -> py::object {
        Rng rng(seed);
        const Dataset d = sample(s, n, rng);
        if (d.y) return py::make_tuple(d.x, *d.y);
        return py::cast(d.x);
      },
      py::arg("model"), py::arg("n"), py::arg("seed"),
      "n draws (rows); Poisson regression returns (X, y)");

  m.def(
      "median_bandwidth", [](const Mat& x) { return median_bandwidth(x); }, py::arg("x"));
  m.def(
      "ksd_ustat",
      [](const Mat& x, const ModelSpec& q, double gamma, std::optional<double> bandwidth) {
        const Dataset d = to_dataset(x);
        return ksd_ustat(d, q, gamma, KernelSpec{bandwidth ? *bandwidth : median_bandwidth(d)}).statistic;
      },
      py::arg("x"), py::arg("model"), py::arg("gamma"), py::arg("bandwidth") = py::none());
  m.def("gof_test", &gof, py::arg("x"), py::arg("model"), py::arg("gamma"), py::arg("bandwidth") = py::none(),
        py::arg("B") = 200, py::arg("alpha") = 0.05, py::arg("seed") = 0, py::arg("calibration") = "null");

  m.def("fit", &fit, py::arg("start"), py::arg("x"), py::arg("gamma"), py::arg("method") = "gamma",
        "fit the family of `start` from its parameters; returns (model, info)");

  m.def(
      "svgd_velocity", [](const Mat& pos, const Mat& scores, double h) { return svgd_velocity(pos, scores, h); },
      py::arg("positions"), py::arg("scores"), py::arg("bandwidth"));
  m.def(
      "gamma_svgd_velocity",
      [](const Mat& pos, const Mat& scores, const Vec& log_u, double gamma, double h, bool softmax) {
        return gamma_svgd_velocity(pos, scores, log_u, gamma, h, softmax);
      },
      py::arg("positions"), py::arg("scores"), py::arg("log_u"), py::arg("gamma"), py::arg("bandwidth"),
      py::arg("softmax") = true);

  m.def("identity_suite", [] {
    py::list out;
    for (const auto& c : run_identity_suite()) {
      py::dict e;
      e["group"] = c.group;
      e["name"] = c.name;
      e["value"] = c.value;
      e["threshold"] = c.threshold;
      e["passed"] = c.passed;
      out.append(e);
    }
    return out;
  });

  m.def("experiment_names", &experiment_names);
  m.def("run_experiment", &experiment, py::arg("name"), py::arg("desk") = true, py::arg("overrides") = "",
        py::arg("threads") = 1, py::arg("output_dir") = py::none(),
        "run a named experiment; overrides is a JSON object of config fields");
}
