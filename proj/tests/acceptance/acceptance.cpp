// Acceptance checks: one PASS/FAIL line per criterion. Exit code is 0 unless
// --strict is given, in which case any failure exits 1.

#include "gstein/estimators.hpp"
#include "gstein/experiments.hpp"
#include "gstein/ksd.hpp"
#include "gstein/stein.hpp"
#include "gstein/svgd.hpp"
#include "gstein/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace gstein;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [fail: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Vec rand_vec(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

ModelSpec gauss2() {
  Mat prec(2, 2);
  prec << 1.3, 0.2, 0.2, 0.9;
  return make_gaussian((Vec(2) << 0.1, -0.3).finished(), prec);
}

ModelSpec fb3() {
  Mat B(3, 3);
  B << 1.0, 0.2, 0.0, 0.2, -0.4, 0.1, 0.0, 0.1, -0.6;
  return make_fisher_bingham((Vec(3) << 0.5, -1.0, 2.0).finished(), B);
}

ModelSpec nmm_truth() {
  return make_mixture((Vec(2) << 0.5, 0.5).finished(),
                      {(Vec(2) << -2.0, 0.0).finished(), (Vec(2) << 2.0, 0.0).finished()}, Vec::Constant(2, 1.0 / 0.6));
}

Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vec a = x, b = x;
    const double step = h * (1.0 + std::abs(x(k)));
    a(k) += step;
    b(k) -= step;
    g(k) = (f(a) - f(b)) / (2.0 * step);
  }
  return g;
}

// Criterion 1.
Outcome identities() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto checks = run_identity_suite();
  int counts[3] = {0, 0, 0}, passed = 0;
  for (const auto& c : checks) {
    if (c.group == "identity") ++counts[0];
    if (c.group == "inner-product") ++counts[1];
    if (c.group == "first-variation") ++counts[2];
    passed += c.passed ? 1 : 0;
    if (!c.passed) o.require(false, c.group + "/" + c.name);
  }
  const double dt = seconds_since(t0);
  o.require(counts[0] == 12 && counts[1] == 6 && counts[2] == 4, "check counts");
  o.require(dt < 30.0, "runtime");
  o.note << passed << "/" << checks.size() << " checks, " << dt << " s";
  return o;
}

// Criterion 2: gamma = 0 paths against straight-line classical versions.
Outcome reductions() {
  Outcome o;
  Rng rng(2);
  const ModelSpec g = gauss2();
  const auto& gp = std::get<GaussianParams>(g.params);
  const auto score = [&](const Vec& x) -> Vec { return -gp.precision * (x - gp.mean); };
  double worst_op = 0.0, worst_ksd = 0.0, worst_svgd = 0.0;

  TestField f;
  f.value = [](const Vec& x) -> Vec { return (Vec(2) << std::sin(x(0)) * x(1), x(0) * x(0) - x(1)).finished(); };
  f.divergence = [](const Vec& x) { return std::cos(x(0)) * x(1) - 1.0; };
  for (int k = 0; k < 50; ++k) {
    const Vec x = 2.0 * rand_vec(2, rng);
    const double want = score(x).dot(f.value(x)) + f.divergence(x);
    const double got = apply_gamma_stein(g, 0.0, f, x).total;
    worst_op = std::max(worst_op, std::abs(got - want) / (1.0 + std::abs(want)));
  }

  for (int rep = 0; rep < 5; ++rep) {
    Dataset d;
    d.x.resize(40, 2);
    for (Eigen::Index i = 0; i < 40; ++i) d.x.row(i) = 1.5 * rand_vec(2, rng).transpose();
    const double h = 0.4 + 0.3 * rep;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < 40; ++i)
      for (Eigen::Index j = 0; j < 40; ++j) {
        if (i == j) continue;
        const Vec xi = d.x.row(i).transpose(), xj = d.x.row(j).transpose();
        const Vec sx = score(xi), sy = score(xj), diff = xi - xj;
        const double r2 = diff.squaredNorm(), h2 = h * h, kk = std::exp(-r2 / (2 * h2));
        sum += kk * (sx.dot(sy) + sx.dot(diff) / h2 - sy.dot(diff) / h2 + 2.0 / h2 - r2 / (h2 * h2));
      }
    const double want = sum / (40.0 * 39.0);
    const double got = ksd_ustat(d, g, 0.0, KernelSpec{h}).statistic;
    worst_ksd = std::max(worst_ksd, std::abs(got - want) / (1.0 + std::abs(want)));
  }

  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index M = 15, D = 3;
    Mat pos(M, D), sc(M, D);
    Vec lu(M);
    for (Eigen::Index i = 0; i < M; ++i) {
      pos.row(i) = rand_vec(D, rng).transpose();
      sc.row(i) = rand_vec(D, rng).transpose();
      lu(i) = 10.0 * rand_vec(1, rng)(0);
    }
    const double h = 0.7 + 0.1 * rep;
    Mat want = Mat::Zero(M, D);
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = 0; j < M; ++j) {
        const Vec diff = pos.row(j) - pos.row(i);
        const double kk = std::exp(-diff.squaredNorm() / (2 * h * h));
        want.row(i) += (kk * sc.row(j) - kk * diff.transpose() / (h * h)) / static_cast<double>(M);
      }
    const double scale = 1.0 + want.cwiseAbs().maxCoeff();
    worst_svgd = std::max(worst_svgd, (svgd_velocity(pos, sc, h) - want).cwiseAbs().maxCoeff() / scale);
    worst_svgd = std::max(worst_svgd, (gamma_svgd_velocity(pos, sc, lu, 0.0, h) - want).cwiseAbs().maxCoeff() / scale);
  }
  o.require(worst_op <= 1e-12, "operator");
  o.require(worst_ksd <= 1e-12, "ksd");
  o.require(worst_svgd <= 1e-12, "svgd velocity");
  o.note << "max rel diff operator " << worst_op << ", ksd " << worst_ksd << ", velocity " << worst_svgd;
  return o;
}

// Criterion 3: shifts of log u in [-50, 50].
Outcome invariance() {
  Outcome o;
  const std::vector<double> shifts = {-50.0, -20.0, -3.5, 0.0, 7.25, 31.0, 50.0};
  Rng rng(3);
  double worst_est = 0.0, worst_traj = 0.0, worst_p = 0.0, mixture_drift = 0.0;
  int decision_flips = 0;

  struct Case {
    ModelSpec truth, start;
    double gamma;
  };
  Mat prec(2, 2);
  prec << 0.9, 0.1, 0.1, 1.1;
  const std::vector<Case> cases = {
      {gauss2(), make_gaussian((Vec(2) << 0.0, 0.0).finished(), prec), 0.3},
      {make_quartic(0.0, 2.0, -0.5), make_quartic(0.1, 1.8, -0.45), 0.3},
      {make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0),
       make_vmf((Vec(3) << 0.8, 0.6, 0.0).finished(), 6.0), 0.1},
      {nmm_truth(), make_mixture((Vec(2) << 0.4, 0.6).finished(),
                                 {(Vec(2) << -1.5, 0.2).finished(), (Vec(2) << 1.8, -0.1).finished()},
                                 Vec::Constant(2, 1.2)), 0.3},
  };
  for (const auto& c : cases) {
    const Dataset d = sample(c.truth, 300, rng);
    ModelSpec start = c.start;
    const Vec ref_mean = normalized_estimating_mean(start, d, c.gamma);
    const Vec ref_fit = pack_params(solve_moment_norm(start, d, c.gamma).params);
    for (double s : shifts) {
      start.log_scale = s;
      worst_est = std::max(worst_est, (normalized_estimating_mean(start, d, c.gamma) - ref_mean).norm() /
                                          (1.0 + ref_mean.norm()));
      const FitResult f = solve_moment_norm(start, d, c.gamma);
      if (start.family() == Family::mixture) {
        // The mixture equations are rank deficient along the weight logit at
        // the root, so the fit is compared through the equations it solves.
        ModelSpec back = f.params;
        back.log_scale = 0.0;
        mixture_drift = std::max(mixture_drift, (pack_params(f.params) - ref_fit).norm());
        worst_est = std::max(worst_est, normalized_estimating_mean(back, d, c.gamma).norm());
      } else {
        worst_est = std::max(worst_est, (pack_params(f.params) - ref_fit).norm() / (1.0 + ref_fit.norm()));
      }
    }
  }
  {
    ModelSpec fb = fb3();
    const Dataset d = sample(make_vmf((Vec(3) << 0.0, 0.0, 1.0).finished(), 3.0), 200, rng);
    const Vec ref = normalized_estimating_mean(fb, d, 0.2);
    for (double s : shifts) {
      fb.log_scale = s;
      worst_est = std::max(worst_est, (normalized_estimating_mean(fb, d, 0.2) - ref).norm() / (1.0 + ref.norm()));
    }
  }

  {
    ModelSpec q = make_gaussian(Vec::Zero(2), Mat::Identity(2, 2));
    Dataset d = sample(q, 80, rng);
    d.x.col(0).array() += 0.4;
    const KernelSpec K{median_bandwidth(d)};
    const NullSampler null = [&](std::size_t n, Rng& r) { return sample(make_gaussian(Vec::Zero(2), Mat::Identity(2, 2)), n, r); };
    for (auto cal : {Calibration::null_simulation, Calibration::multiplier}) {
      for (double gamma : {0.0, 0.3, 0.5}) {
        q.log_scale = 0.0;
        Rng r0(77);
        const GofTestResult ref = gof_test(d, q, gamma, K, cal, null, 100, 0.05, r0);
        for (double s : shifts) {
          q.log_scale = s;
          Rng r1(77);
          const GofTestResult t = gof_test(d, q, gamma, K, cal, null, 100, 0.05, r1);
          decision_flips += t.reject != ref.reject ? 1 : 0;
          worst_p = std::max(worst_p, std::abs(t.p_value - ref.p_value));
        }
      }
    }
  }

  {
    ModelSpec q = make_gaussian((Vec(2) << 0.5, -0.2).finished(), Mat::Identity(2, 2));
    SvgdConfig cfg;
    cfg.particles = 16;
    cfg.iterations = 80;
    cfg.gamma_target = 0.3;
    const ParticleEnsemble init = init_ensemble(16, Vec::Zero(2), 1.0, 5);
    const Mat ref = run_svgd(cfg, model_target(q), init).ensemble.positions;
    for (double s : shifts) {
      q.log_scale = s;
      const Mat p = run_svgd(cfg, model_target(q), init).ensemble.positions;
      worst_traj = std::max(worst_traj, (p - ref).cwiseAbs().maxCoeff());
    }
  }
  o.require(worst_est <= 1e-12, "estimators");
  o.require(decision_flips == 0 && worst_p == 0.0, "test decisions");
  o.require(worst_traj <= 1e-10, "SVGD trajectories");
  o.note << "estimators " << worst_est << " (mixture parameter drift " << mixture_drift << "), decision flips " << decision_flips << " (max |dp| " << worst_p
         << "), trajectories " << worst_traj;
  return o;
}

void require_time(Outcome& o, double dt, double limit) {
  o.require(dt < limit, "runtime");
  o.note << ", " << dt << " s";
}

ExperimentReport run(const std::string& name, int threads, double* dt) {
  ScenarioConfig c = default_scenario(name, true);
  const auto t0 = Clock::now();
  ExperimentReport r = run_experiment(c, RunOptions{threads, false});
  *dt = seconds_since(t0);
  return r;
}

// Criterion 4.
Outcome vmf_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("vmf-table1", threads, &dt);
  const std::vector<std::string> levels = {"0.00", "0.05", "0.10", "0.20"};
  const std::vector<std::pair<std::string, std::vector<double>>> reference = {
      {"MLE", {0.45, 4.81, 6.53, 8.06}},        {"gamma=0.00", {0.45, 0.88, 1.66, 3.50}},
      {"gamma=0.05", {0.76, 0.56, 0.55, 1.40}}, {"gamma=0.10", {1.29, 1.19, 1.08, 0.73}},
      {"gamma=0.20", {2.65, 2.66, 2.69, 2.59}}, {"gamma=0.30", {4.45, 4.49, 4.56, 4.44}}};
  const auto val = [&](const std::string& row, const std::string& lvl) {
    return r.cell(row, lvl, "integrated_rmse").value;
  };
  // Ordering is judged at the two-decimal precision of the reference values.
  const auto r2 = [](double v) { return std::round(v * 100.0) / 100.0; };
  bool mle_best = true, g10_best = true;
  int outside = 0;
  for (const auto& [row, vals] : reference) {
    if (row != "MLE" && r2(val(row, "0.00")) < r2(val("MLE", "0.00"))) mle_best = false;
    if (row != "gamma=0.10" && r2(val(row, "0.20")) < r2(val("gamma=0.10", "0.20"))) g10_best = false;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const double v = val(row, levels[k]);
      if (std::abs(v - vals[k]) > 0.5 * vals[k]) {
        ++outside;
        o.note << " " << row << "@" << levels[k] << "=" << v << " vs " << vals[k] << ";";
      }
    }
  }
  o.require(mle_best, "MLE best at eps=0");
  o.require(g10_best, "gamma=0.10 best at eps=0.20");
  o.require(outside == 0, std::to_string(outside) + " entries outside +-50%");
  o.note << " MLE@0=" << val("MLE", "0.00") << " gamma0@0=" << val("gamma=0.00", "0.00")
         << " gamma0.10@0.20=" << val("gamma=0.10", "0.20") << " gamma0.05@0.20=" << val("gamma=0.05", "0.20");
  require_time(o, dt, 300.0);
  return o;
}

// Criterion 5.
Outcome cv_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("cv-table2", threads, &dt);
  const std::vector<std::pair<std::string, double>> want = {{"0.05", 0.05}, {"0.10", 0.10}, {"0.20", 0.10}};
  for (const auto& [lvl, g] : want) {
    int hits = 0;
    o.note << " eps=" << lvl << ":";
    for (const std::string anchor : {"0.00", "0.05", "0.10"}) {
      const double pick = r.cell(lvl, anchor, "gamma_hat").value;
      hits += std::abs(pick - g) < 1e-9 ? 1 : 0;
      o.note << " " << pick;
    }
    o.require(hits >= 2, "eps=" + lvl + " selects " + level_label(g) + " for " + std::to_string(hits) + "/3 anchors");
  }
  require_time(o, dt, 600.0);
  return o;
}

// Criterion 6.
Outcome nmm_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("nmm-table3", threads, &dt);
  const double ratio = r.cell("0.10", "MLE (EM)", "rmse_sigma").value / r.cell("0.10", "gamma-Stein", "rmse_sigma").value;
  o.require(ratio >= 3.0, "Sigma ratio");
  for (const std::string m : {"rmse_pi", "rmse_mu", "rmse_sigma"}) {
    const double a = r.cell("0.00", "MLE (EM)", m).value, b = r.cell("0.00", "gamma-Stein", m).value;
    o.require(a < b, "clean " + m);
    o.note << " clean " << m << " " << a << " vs " << b << ";";
  }
  o.note << " Sigma ratio at 10% " << ratio;
  require_time(o, dt, 600.0);
  return o;
}

// Criterion 7.
Outcome quartic_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("quartic-table4", threads, &dt);
  const std::string g = "gamma-Stein (gamma=0.30)";
  const double mle_c = r.cell("0.00", "MLE", "rmse").value, g_c = r.cell("0.00", g, "rmse").value;
  const double mle_o = r.cell("0.10", "MLE", "rmse").value, g_o = r.cell("0.10", g, "rmse").value;
  o.require(g_o < 0.5 * mle_o, "outliers");
  o.require(mle_c < g_c, "clean");
  o.note << " outliers gamma=0.3 " << g_o << " vs MLE " << mle_o << "; clean MLE " << mle_c << " vs " << g_c;
  require_time(o, dt, 600.0);
  return o;
}

// Criterion 8.
Outcome power_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("power-table5", threads, &dt);
  for (const std::string g : {"0.00", "0.30", "0.50"}) {
    const double t1 = r.cell("0.00", g, "power").value;
    o.require(std::abs(t1 - 0.05) <= 0.03, "type I at gamma=" + g);
    o.note << " size(" << g << ")=" << t1;
  }
  const double p = r.cell("0.60", "0.50", "power").value;
  o.require(p >= 0.85, "power at delta=0.6, gamma=0.5");
  o.note << " power(0.6,0.5)=" << p << " gamma=0 power:";
  for (const std::string s : {"0.00", "0.20", "0.40", "0.60", "0.80"}) {
    const double v = r.cell(s, "0.00", "power").value;
    o.note << " " << v;
    o.require(v <= 0.15, "gamma=0 power at delta=" + s);
  }
  require_time(o, dt, 900.0);
  return o;
}

// Criterion 9.
Outcome svgd_table(int threads) {
  Outcome o;
  double dt = 0.0;
  const ExperimentReport r = run("svgd-table6", threads, &dt);
  const auto v = [&](const std::string& g, const std::string& s) { return r.cell(g, s, "rmse").value; };
  bool clean_min = true;
  for (const std::string g : {"0.02", "0.05", "0.08", "0.10"}) clean_min = clean_min && v("0.00", "clean") <= v(g, "clean");
  o.require(clean_min, "clean minimum at gamma=0");
  o.require(v("0.10", "Y") < v("0.00", "Y"), "Y ordering");
  o.require(std::min(v("0.02", "XY"), v("0.05", "XY")) < v("0.00", "XY"), "XY ordering");
  o.note << " clean gamma=0 " << v("0.00", "clean") << "; Y " << v("0.10", "Y") << " vs " << v("0.00", "Y") << "; XY "
         << std::min(v("0.02", "XY"), v("0.05", "XY")) << " vs " << v("0.00", "XY");
  require_time(o, dt, 600.0);
  return o;
}

// Criterion 10.
Outcome properties() {
  Outcome o;
  const auto t0 = Clock::now();

  struct Unbiased {
    ModelSpec m;
    double gamma;
    EstimatorOptions opt;
  };
  EstimatorOptions consistent;
  consistent.vmf_rule = VmfKappaRule::stein_consistent;
  Mat prec(2, 2);
  prec << 1.2, 0.3, 0.3, 0.7;
  const std::vector<Unbiased> ub = {
      {make_gaussian((Vec(2) << 0.5, -0.5).finished(), prec), 0.5, {}},
      {make_quartic(0.0, 2.0, -0.5), 0.3, {}},
      {nmm_truth(), 0.3, {}},
      {make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0), 0.0, {}},
      {make_vmf((Vec(3) << 0.0, 0.6, 0.8).finished(), 5.0), 0.2, consistent},
  };
  int worst_z_fail = 0;
  for (std::size_t c = 0; c < ub.size(); ++c) {
    Rng rng(100 + c);
    const std::size_t n = 50000;
    const Dataset d = sample(ub[c].m, n, rng);
    Mat U;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec u = estimating_function(ub[c].m, d.row(i), ub[c].gamma, ub[c].opt);
      if (U.size() == 0) U.resize(static_cast<Eigen::Index>(n), u.size());
      U.row(static_cast<Eigen::Index>(i)) = u.transpose();
    }
    const Vec mean = U.colwise().mean().transpose();
    for (Eigen::Index k = 0; k < U.cols(); ++k) {
      const double sd = std::sqrt((U.col(k).array() - mean(k)).square().sum() / static_cast<double>(n - 1));
      if (std::abs(mean(k)) > 5.0 * sd / std::sqrt(static_cast<double>(n)) + 1e-12) ++worst_z_fail;
    }
  }
  o.require(worst_z_fail == 0, "unbiasedness");

  const ModelSpec g1 = make_gaussian(Vec::Zero(1), Mat::Identity(1, 1));
  std::vector<double> ratios;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    double avg = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng(200 + s);
      avg += jacobian_symmetry_diagnostic(g1, sample(g1, n, rng), 0.5) / 5.0;
    }
    ratios.push_back(avg);
  }
  o.require(ratios[1] < ratios[0] && ratios[2] < ratios[1], "Jacobian asymmetry");

  int ksd_fail = 0;
  for (double gamma : {0.0, 0.5}) {
    const ModelSpec q = gauss2();
    const int R = 300;
    std::vector<double> stats;
    for (int r = 0; r < R; ++r) {
      Rng rng(300 + static_cast<std::uint64_t>(r));
      stats.push_back(ksd_ustat(sample(q, 60, rng), q, gamma, KernelSpec{1.0}).statistic);
    }
    double m = 0.0, v = 0.0;
    for (double s : stats) m += s / R;
    for (double s : stats) v += (s - m) * (s - m) / (R - 1);
    if (std::abs(m) > 5.0 * std::sqrt(v / R)) ++ksd_fail;
  }
  o.require(ksd_fail == 0, "KSD null mean");

  double worst_fd = 0.0;
  Rng rng(400);
  const auto rel = [](const Vec& a, const Vec& b) { return (a - b).norm() / (1.0 + b.norm()); };
  for (const auto& m : {gauss2(), nmm_truth(), make_quartic(0.3, 2.0, -0.5)}) {
    const Dataset pts = sample(m, 20, rng);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec x = pts.row(i);
      worst_fd = std::max(worst_fd, rel(evaluate(m, x).score_x, central_diff([&](const Vec& z) { return log_density(m, z); }, x)));
    }
  }
  {
    const Vec mu = (Vec(3) << 0.0, 0.6, 0.8).finished();
    const ModelSpec vmf = make_vmf(mu, 4.0), fb = fb3();
    const auto& fbp = std::get<FisherBinghamParams>(fb.params);
    for (int k = 0; k < 20; ++k) {
      const Vec x = sample_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 0.5, rng);
      worst_fd = std::max(worst_fd, rel(evaluate(vmf, x).score_x, central_diff([&](const Vec& z) { return 4.0 * mu.dot(z); }, x)));
      worst_fd = std::max(worst_fd, rel(evaluate(fb, x).score_x,
                                        central_diff([&](const Vec& z) { return fbp.xi.dot(z) + z.dot(fbp.B * z); }, x)));
    }
  }
  {
    const ModelSpec truth = make_poisson_regression((Vec(4) << 1.0, 0.4, -0.3, 0.2).finished(), Vec::Ones(4) * 4.0);
    const Dataset d = sample(truth, 60, rng);
    for (int k = 0; k < 10; ++k) {
      const Vec a = (Vec(4) << 1.0, 0.0, 0.0, 0.0).finished() + 0.3 * rand_vec(4, rng);
      for (double gamma : {0.0, 0.05, 0.3}) {
        const auto f = [&](const Vec& al) {
          return poisson_gamma_log_target(PoissonRegParams{al, Vec::Ones(4) * 4.0}, d.x, *d.y, gamma).log_u;
        };
        worst_fd = std::max(worst_fd, rel(poisson_gamma_log_target(PoissonRegParams{a, Vec::Ones(4) * 4.0}, d.x, *d.y, gamma).grad,
                                          central_diff(f, a)));
      }
    }
  }
  o.require(worst_fd <= 1e-5, "gradient checks");
  const double dt = seconds_since(t0);
  o.note << "unbiasedness violations " << worst_z_fail << ", asymmetry " << ratios[0] << " > " << ratios[1] << " > "
         << ratios[2] << ", KSD null failures " << ksd_fail << ", worst FD " << worst_fd;
  require_time(o, dt, 300.0);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  bool strict = false;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<int> only;
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  app.add_option("--threads", threads, "worker threads for the experiments");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"identity suite", identities},
      {"gamma=0 reductions", reductions},
      {"normalizer invariance", invariance},
      {"vMF table", [&] { return vmf_table(threads); }},
      {"CV selection table", [&] { return cv_table(threads); }},
      {"mixture table", [&] { return nmm_table(threads); }},
      {"quartic table", [&] { return quartic_table(threads); }},
      {"power table", [&] { return power_table(threads); }},
      {"SVGD Poisson table", [&] { return svgd_table(threads); }},
      {"property suite", properties},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note << "error: " << e.what();
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.note.str()
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return strict && failed > 0 ? 1 : 0;
}
