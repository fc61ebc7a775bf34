#include "helpers.hpp"

#include "gstein/experiments.hpp"
#include "gstein/metrics.hpp"
#include "gstein/verify.hpp"

#include <doctest.h>

#include <fstream>

using namespace gstein;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("gstein-test-" + name);
  std::filesystem::remove_all(p);
  return p;
}

ScenarioConfig tiny_vmf() {
  ScenarioConfig c = default_scenario("vmf-table1", true);
  c.n = 100;
  c.replications = 3;
  c.contamination_levels = {0.0, 0.1};
  c.gamma_grid = {0.0, 0.1};
  return c;
}

}  // namespace

TEST_CASE("contamination counts use floor(eps n)") {
  const ModelSpec v = make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0);
  Rng rng(1);
  const Dataset d = generate_contaminated(v, 400, {{ContaminationKind::antipodal_vmf, 0.1, {{"kappa", 50.0}}}}, rng);
  int flagged = 0, antipodal = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.provenance.contaminated[i]) {
      ++flagged;
      antipodal += d.x(static_cast<Eigen::Index>(i), 0) < 0.0 ? 1 : 0;
    }
  }
  CHECK(flagged == 40);
  CHECK(antipodal == 40);

  const ModelSpec m = make_mixture((Vec(2) << 0.5, 0.5).finished(), {Vec::Constant(2, -2.0), Vec::Constant(2, 2.0)},
                                   Vec::Ones(2));
  const Dataset t = generate_contaminated(m, 500, {{ContaminationKind::student_t, 0.05, {{"df", 4.0}}}}, rng);
  CHECK(std::count(t.provenance.contaminated.begin(), t.provenance.contaminated.end(), true) == 25);
  CHECK(generate_contaminated(m, 33, {{ContaminationKind::student_t, 0.1, {}}}, rng).provenance.contaminated.size() == 33);
}

TEST_CASE("regression contamination shares rows across specs") {
  const ModelSpec pr = make_poisson_regression((Vec(3) << 2.0, 0.5, -0.4).finished(), Vec::Ones(3));
  Rng a(4), b(4);
  const Dataset clean = generate_contaminated(pr, 200, {}, a);
  const Dataset both = generate_contaminated(pr, 200,
                                             {{ContaminationKind::covariate, 0.1, {{"factor", 6.0}}},
                                              {ContaminationKind::outcome, 0.1, {{"multiplier", 10.0}}}},
                                             b);
  int changed_x = 0, changed_y = 0;
  for (Eigen::Index i = 0; i < 200; ++i) {
    changed_x += (clean.x.row(i) - both.x.row(i)).norm() > 0 ? 1 : 0;
    changed_y += (*clean.y)(i) != (*both.y)(i) ? 1 : 0;
  }
  CHECK(changed_x <= 20);
  CHECK(changed_y <= 20);
  CHECK(changed_y >= 15);
  CHECK(std::count(both.provenance.contaminated.begin(), both.provenance.contaminated.end(), true) == 20);
}

TEST_CASE("seed splitting") {
  CHECK(split_seed(1, 2, 3) == split_seed(1, 2, 3));
  CHECK(split_seed(1, 2, 3) != split_seed(1, 2, 4));
  CHECK(split_seed(1, 2, 3) != split_seed(1, 3, 3));
  CHECK(split_seed(1, 2, 3) != split_seed(2, 2, 3));
}

TEST_CASE("mixture RMSE with label matching") {
  const MixtureParams truth{(Vec(2) << 0.4, 0.6).finished(), {Vec::Constant(2, -2.0), Vec::Constant(2, 2.0)},
                            (Vec(2) << 2.0, 1.0).finished()};
  MixtureParams fit = truth;
  fit.means[1](0) += 0.1;
  const MixtureError e = mixture_rmse(fit, truth);
  CHECK(e.rmse_mu == doctest::Approx(0.1 / std::sqrt(4.0)).epsilon(1e-12));
  CHECK(e.rmse_pi == 0.0);
  CHECK(e.rmse_sigma == 0.0);
  // Swapped labels are matched back.
  MixtureParams swapped{(Vec(2) << 0.6, 0.4).finished(), {fit.means[1], fit.means[0]}, (Vec(2) << 1.0, 2.0).finished()};
  const MixtureError s = mixture_rmse(swapped, truth);
  CHECK(s.rmse_mu == doctest::Approx(e.rmse_mu).epsilon(1e-12));
  CHECK(s.permutation == std::vector<int>{1, 0});
}

TEST_CASE("direction and scalar metrics") {
  const Vec mu = (Vec(3) << 1.0, 0.0, 0.0).finished();
  CHECK(trace_rmse({mu, -mu}, mu) == 0.0);
  CHECK(trace_rmse({(Vec(3) << 0.0, 1.0, 0.0).finished()}, mu) == doctest::Approx(std::sqrt(2.0)));
  CHECK(scalar_rmse({9.0, 11.0}, 10.0) == doctest::Approx(1.0));
  CHECK(integrated_rmse({mu, mu}, {9.0, 11.0}, mu, 10.0) == doctest::Approx(1.0));
  CHECK(param_rmse({Vec::Constant(2, 1.0)}, Vec::Zero(2)) == doctest::Approx(std::sqrt(2.0)));
  const MetricReport r = summarize(MetricKind::power, {1.0, 2.0, 3.0});
  CHECK(r.mean == 2.0);
  CHECK(r.stderr_ == doctest::Approx(1.0 / std::sqrt(3.0)));
  const Mat particles = (Mat(2, 2) << 0.0, 1.0, 0.0, 1.0).finished();
  const Mat X = (Mat(2, 1) << 0.0, 1.0).finished();
  CHECK(predictive_rmse(particles, X, (Vec(2) << 1.0, std::exp(1.0)).finished()) == doctest::Approx(0.0));
}

TEST_CASE("CSV round trip with quoting") {
  CsvTable t;
  t.header = {"name", "value"};
  t.rows = {{"plain", "1.5"}, {"with,comma", "-2"}, {"with \"quote\"", "nan"}, {"multi\nline", "3"}};
  const CsvTable back = parse_csv(to_csv(t));
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(to_csv(t).find("\"with \"\"quote\"\"\"") != std::string::npos);
  CHECK(std::isnan(back.number(2, "value")));
  CHECK_THROWS_AS(back.column("missing"), ArgumentError);
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("SVG and text rendering") {
  const std::string svg = line_plot_svg("t", "x", "y", {{"a", {0, 1, 2}, {1, 0.5, 0.25}, {}}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  const std::string txt = render_table({{"a", "bb"}, {"1", "2"}});
  CHECK(txt.find("--") != std::string::npos);
}

TEST_CASE("scenario configs round-trip through JSON and reject unknown keys") {
  for (const auto& name : experiment_names()) {
    const ScenarioConfig c = default_scenario(name, true);
    CHECK_NOTHROW(c.validate());
    const ScenarioConfig back = scenario_from_json(scenario_to_json(c), default_scenario(name, false));
    CHECK(scenario_to_json(back) == scenario_to_json(c));
  }
  Json bad = Json::parse(R"({"n": 10, "bogus": 1})");
  CHECK_THROWS_AS(scenario_from_json(bad, default_scenario("vmf-table1", true)), ArgumentError);
  Json bad_params = Json::parse(R"({"family": "quartic", "true_params": {"theta": [0, 2, -0.5], "x": 1}})");
  CHECK_THROWS_AS(scenario_from_json(bad_params, default_scenario("quartic-table4", true)), ArgumentError);
  Json ok = Json::parse(R"({"n": 123, "gamma_grid": [0.0, 0.2], "seed": 5})");
  const ScenarioConfig c = scenario_from_json(ok, default_scenario("vmf-table1", true));
  CHECK(c.n == 123);
  CHECK(c.seed == 5);
  CHECK(c.gamma_grid == std::vector<double>{0.0, 0.2});
  ScenarioConfig invalid = default_scenario("vmf-table1", true);
  invalid.contamination_levels = {1.5};
  CHECK_THROWS_AS(invalid.validate(), ArgumentError);
}

TEST_CASE("identity suite passes") {
  const auto checks = run_identity_suite();
  CHECK(checks.size() == 22);
  for (const auto& c : checks) {
    INFO(c.group << ": " << c.name << " = " << c.value);
    CHECK(c.passed);
  }
}

TEST_CASE("experiment outputs are written, deterministic and self-consistent") {
  ScenarioConfig c = tiny_vmf();
  c.output_dir = scratch_dir("vmf").string();
  const ExperimentReport a = run_experiment(c, RunOptions{1, true});
  CHECK(a.self_consistent);
  CHECK_FALSE(a.failure_threshold_exceeded);
  for (const auto& f : a.files) CHECK(std::filesystem::exists(f));
  const CsvTable reps = read_csv(std::filesystem::path(c.output_dir) / "vmf-table1" / "replications.csv");
  CHECK(reps.rows.size() == 2 * 3 * 3);
  std::ifstream in(std::filesystem::path(c.output_dir) / "vmf-table1" / "manifest.json");
  const Json manifest = Json::parse(in);
  CHECK(manifest.at("seed") == c.seed);
  CHECK(manifest.at("self_consistent") == true);

  const ExperimentReport b = run_experiment(c, RunOptions{2, false});
  REQUIRE(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) CHECK(a.cells[i].value == b.cells[i].value);
  CHECK(a.cell("MLE", "0.10", "integrated_rmse").value > a.cell("gamma=0.10", "0.10", "integrated_rmse").value);
  CHECK_THROWS_AS(a.cell("nope", "0.10", "integrated_rmse"), ArgumentError);
  std::filesystem::remove_all(c.output_dir);
}

TEST_CASE("failed replications are counted per cell") {
  ScenarioConfig c = default_scenario("quartic-table4", true);
  CsvTable t;
  t.header = {"level", "replication", "estimator", "status", "theta1", "theta2", "theta3", "sq_error", "converged"};
  t.rows = {{"0.00", "0", "MLE", "ok", "0", "2", "-0.5", "0", "1"},
            {"0.00", "1", "MLE", "failed", "nan", "nan", "nan", "nan", "0"},
            {"0.00", "2", "MLE", "ok", "0", "2", "-0.5", "0.04", "1"}};
  const auto cells = aggregate_replications(c, t);
  bool seen = false;
  for (const auto& cell : cells) {
    if (cell.metric != "rmse") continue;
    seen = true;
    CHECK(cell.failures == 1);
    CHECK(cell.replications == 3);
    CHECK(cell.value == doctest::Approx(std::sqrt(0.02)));
  }
  CHECK(seen);
}

TEST_CASE("verify-identities experiment") {
  ScenarioConfig c = default_scenario("verify-identities", true);
  const ExperimentReport r = run_experiment(c, RunOptions{1, false});
  CHECK_FALSE(r.verification_failed);
  CHECK(r.cells.size() == 22);
}
