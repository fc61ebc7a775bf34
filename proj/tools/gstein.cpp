#include "gstein/experiments.hpp"
#include "gstein/selection.hpp"
#include "gstein/svgd.hpp"
#include "gstein/verify.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace gstein;

namespace {

enum Exit { kOk = 0, kUsage = 1, kThreshold = 2, kVerify = 3 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool desk = false;
  int threads = 1;
  std::optional<double> gamma;
  std::optional<double> gamma0;
  std::string data;
};

ScenarioConfig load_config(const Globals& g, const std::string& experiment) {
  ScenarioConfig cfg = default_scenario(experiment, g.desk);
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw ArgumentError("cannot open config '" + g.config + "'");
    Json doc;
    try {
      doc = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("config is not valid JSON: ") + e.what());
    }
    cfg = scenario_from_json(doc, cfg);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

// CSV with columns x1..xd and an optional integer column y.
Dataset load_data(const std::string& path) {
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> xcols;
  std::optional<std::size_t> ycol;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] == "y")
      ycol = c;
    else
      xcols.push_back(c);
  }
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(xcols.size()));
  if (ycol) d.y = Eigen::VectorXi(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < xcols.size(); ++k)
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = std::stod(t.rows[i][xcols[k]]);
    if (ycol) (*d.y)(static_cast<Eigen::Index>(i)) = std::stoi(t.rows[i][*ycol]);
  }
  return d;
}

// Data from --data, or one replication generated from the scenario.
Dataset input_data(const Globals& g, const ScenarioConfig& cfg) {
  if (!g.data.empty()) return load_data(g.data);
  const double level = cfg.contamination_levels.empty() ? 0.0 : cfg.contamination_levels.back();
  return generate_dataset(cfg, level, 0);
}

int cmd_fit(const Globals& g, const std::string& experiment) {
  const ScenarioConfig cfg = load_config(g, experiment);
  const Dataset data = input_data(g, cfg);
  const double gamma = g.gamma.value_or(cfg.gamma_grid.back());
  const FitResult f = default_fitter(cfg.truth)(data, gamma);
  Json out{{"family", family_name(f.params.family())},
           {"gamma", gamma},
           {"params", model_to_json(f.params)},
           {"converged", f.converged},
           {"iterations", f.iterations},
           {"final_residual", f.final_residual},
           {"flags", f.flags}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_gof(const Globals& g, const std::string& experiment) {
  const ScenarioConfig cfg = load_config(g, experiment);
  Dataset data;
  if (!g.data.empty()) {
    data = load_data(g.data);
  } else {
    Rng rng(split_seed(cfg.seed, 0, 0));
    const ContaminationSpec spec = cfg.contamination.empty() ? ContaminationSpec{} : cfg.contamination.front();
    data = sample_mixture_contaminated(cfg.truth, cfg.n, spec, rng);
  }
  const double gamma = g.gamma.value_or(cfg.gamma_grid.back());
  const KernelSpec K{median_bandwidth(data)};
  const NullSampler null = [&](std::size_t n, Rng& r) { return sample(cfg.truth, n, r); };
  Rng rng(split_seed(cfg.seed, 1, 0));
  const GofTestResult res = gof_test(data, cfg.truth, gamma, K, Calibration::null_simulation, null, cfg.bootstrap,
                                     cfg.alpha, rng);
  Json out{{"gamma", gamma},         {"bandwidth", K.bandwidth}, {"statistic", res.statistic},
           {"critical_value", res.critical_value}, {"p_value", res.p_value}, {"reject", res.reject},
           {"bootstrap", res.bootstrap_replicates}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_svgd(const Globals& g) {
  const ScenarioConfig cfg = load_config(g, "svgd-table6");
  Dataset data;
  if (!g.data.empty()) {
    data = load_data(g.data);
  } else {
    Rng rng(split_seed(cfg.seed, 0, 0));
    data = generate_contaminated(cfg.truth, cfg.n, cfg.contamination, rng);
  }
  if (!data.y) throw ArgumentError("svgd needs a response column 'y'");
  const auto& truth = std::get<PoissonRegParams>(cfg.truth.params);
  SvgdConfig sc;
  sc.particles = cfg.particles;
  sc.iterations = cfg.iterations;
  sc.step = cfg.step;
  sc.gamma_target = g.gamma.value_or(0.0);
  const Vec map = poisson_map(data.x, *data.y, truth.prior_variances);
  const SvgdResult res = run_svgd(sc, poisson_target(truth.prior_variances, data.x, *data.y),
                                  init_ensemble(cfg.particles, map, cfg.init_spread, split_seed(cfg.seed, 2, 0)));
  const Vec mean = res.ensemble.positions.colwise().mean().transpose();
  Json out{{"gamma", sc.gamma_target},
           {"posterior_mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
           {"aborted", res.aborted},
           {"message", res.message}};
  std::cout << out.dump(2) << "\n";
  return res.aborted ? kThreshold : kOk;
}

int cmd_select(const Globals& g, const std::string& experiment) {
  const ScenarioConfig cfg = load_config(g, experiment);
  const Dataset data = input_data(g, cfg);
  Validator v;
  v.kind = ValidatorKind::ksd;
  v.gamma0 = g.gamma0.value_or(0.1);
  Rng rng(split_seed(cfg.seed, 3, 0));
  const auto [table, sel] = cv_select(data, default_fitter(cfg.truth), cfg.gamma_grid, v, cfg.folds, rng);
  std::vector<std::vector<std::string>> rows = {{"gamma", "mean", "stderr", "dropped"}};
  for (std::size_t k = 0; k < table.gamma_grid.size(); ++k)
    rows.push_back({format_double(table.gamma_grid[k]), format_double(table.mean(static_cast<Eigen::Index>(k))),
                    format_double(table.stderr_(static_cast<Eigen::Index>(k))), table.dropped[k] ? "yes" : "no"});
  std::cout << render_table(rows) << "selected gamma (one-SE): " << format_double(sel.gamma_one_se)
            << "\nargmin gamma: " << format_double(sel.gamma_argmin) << "\n";
  return kOk;
}

int cmd_experiment(const Globals& g, const std::string& name) {
  const ScenarioConfig cfg = load_config(g, name);
  const ExperimentReport rep = run_experiment(cfg, RunOptions{g.threads, true});
  std::cout << rep.text_table;
  for (const auto& f : rep.files) std::cout << "wrote " << f << "\n";
  if (!rep.self_consistent) std::cerr << "warning: re-aggregated table differs from the in-memory table\n";
  if (rep.verification_failed) return kVerify;
  if (rep.failure_threshold_exceeded) {
    std::cerr << "more than 10% of replications failed in at least one cell\n";
    return kThreshold;
  }
  return kOk;
}

int cmd_verify() {
  bool ok = true;
  std::vector<std::vector<std::string>> rows = {{"group", "check", "value", "threshold", "pass"}};
  for (const auto& c : run_identity_suite()) {
    rows.push_back({c.group, c.name, format_double(c.value), format_double(c.threshold), c.passed ? "ok" : "FAIL"});
    ok = ok && c.passed;
  }
  std::cout << render_table(rows);
  return ok ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust inference for unnormalized models with gamma-Stein operators"};
  app.require_subcommand(1);
  // Global options may also follow the subcommand; set before subcommands
  // are added so they inherit it.
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON scenario config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--desk", g.desk, "Reduced desk-scale replication counts");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--gamma", g.gamma, "Robustness parameter")->check(CLI::NonNegativeNumber);
  app.add_option("--gamma0", g.gamma0, "Anchor for the KSD validator")->check(CLI::NonNegativeNumber);
  app.add_option("--data", g.data, "CSV data (columns x1..xd, optional y)")->check(CLI::ExistingFile);

  std::string model = "vmf-table1";
  const auto model_names = std::vector<std::string>(experiment_names().begin(), experiment_names().end() - 1);
  auto* fit = app.add_subcommand("fit", "Fit a model by gamma-score matching");
  auto* gof = app.add_subcommand("gof", "Gamma-KSD goodness-of-fit test");
  auto* svgd = app.add_subcommand("svgd", "Gamma-SVGD for Poisson regression");
  auto* select = app.add_subcommand("select-gamma", "Cross-validated choice of gamma");
  for (auto* sub : {fit, gof, select})
    sub->add_option("--scenario", model, "Scenario supplying model and defaults")
        ->check(CLI::IsMember(model_names));
  std::string experiment;
  auto* exp = app.add_subcommand("experiment", "Run one of the simulation studies");
  exp->add_option("name", experiment, "Experiment name")->required()->check(CLI::IsMember(experiment_names()));
  auto* verify = app.add_subcommand("verify", "Run the identity verification suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (gof->parsed() && model == "vmf-table1") model = "power-table5";

  try {
    if (fit->parsed()) return cmd_fit(g, model);
    if (gof->parsed()) return cmd_gof(g, model);
    if (svgd->parsed()) return cmd_svgd(g);
    if (select->parsed()) return cmd_select(g, model == "vmf-table1" ? "cv-table2" : model);
    if (exp->parsed()) return cmd_experiment(g, experiment);
    if (verify->parsed()) return cmd_verify();
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kThreshold;
  }
  return kUsage;
}
