#include "gstein/experiments.hpp"

#include "gstein/estimators.hpp"
#include "gstein/ksd.hpp"
#include "gstein/metrics.hpp"
#include "gstein/selection.hpp"
#include "gstein/svgd.hpp"
#include "gstein/verify.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#ifndef GSTEIN_VERSION
#define GSTEIN_VERSION "0.0.0"
#endif

namespace gstein {

namespace {

// Stream identifiers for counter-based seeds.
enum Stream : std::uint64_t {
  kData = 1,
  kFolds = 2,
  kNull = 3,
  kTest = 5,
  kParticles = 6,
  kPower = 7,
};

std::uint64_t stream_of(Stream s, std::size_t level) { return static_cast<std::uint64_t>(s) * 1000003ULL + level; }

Vec json_vec(const Json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j.at(k).get<double>();
  return v;
}

Mat json_mat(const Json& j) {
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(i)).size()) != c) throw ArgumentError("ragged matrix");
    for (Eigen::Index k = 0; k < c; ++k)
      m(i, k) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

Json vec_json(const Vec& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Json mat_json(const Mat& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec_json(m.row(i).transpose()));
  return out;
}

void reject_unknown(const Json& doc, const std::set<std::string>& known, const std::string& where) {
  if (!doc.is_object()) throw ArgumentError(where + " must be a JSON object");
  for (const auto& [k, v] : doc.items())
    if (!known.count(k)) throw ArgumentError("unknown key '" + k + "' in " + where);
}

std::string fmt(double v, int digits) {
  if (!std::isfinite(v)) return "--";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string gamma_label(double g) { return "gamma=" + level_label(g); }

// Parallel map over task indices; results are stored by index so execution
// order never reaches the output.
using Rows = std::vector<std::vector<std::string>>;

template <class F>
std::vector<Rows> run_tasks(std::size_t count, int threads, F&& fn) {
  std::vector<Rows> out(count);
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          out[i] = fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

CsvTable collect(std::vector<std::string> header, const std::vector<Rows>& parts) {
  CsvTable t;
  t.header = std::move(header);
  for (const auto& p : parts)
    for (const auto& r : p) t.rows.push_back(r);
  return t;
}

std::string num(double v) { return format_double(v); }

bool ok_row(const CsvTable& t, std::size_t i) { return t.rows[i][t.column("status")] == "ok"; }

// Groups row indices by the values of the key columns, in first-seen order.
std::vector<std::pair<std::vector<std::string>, std::vector<std::size_t>>> group_rows(
    const CsvTable& t, const std::vector<std::string>& keys) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::size_t>>> groups;
  std::map<std::vector<std::string>, std::size_t> index;
  std::vector<std::size_t> cols;
  for (const auto& k : keys) cols.push_back(t.column(k));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<std::string> key;
    for (auto c : cols) key.push_back(t.rows[i][c]);
    const auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, groups.size());
      groups.push_back({key, {i}});
    } else {
      groups[it->second].second.push_back(i);
    }
  }
  return groups;
}

ContaminationSpec spec_at(const ScenarioConfig& cfg, std::size_t k, double rate) {
  if (k >= cfg.contamination.size()) throw ArgumentError("scenario has no contamination spec #" + std::to_string(k));
  ContaminationSpec s = cfg.contamination[k];
  s.rate = rate;
  return s;
}

// ---------------------------------------------------------------- vMF table

const std::vector<std::string> kVmfHeader = {"level", "replication", "estimator", "gamma", "status", "mu1", "mu2",
                                             "mu3", "kappa", "sq_trace", "sq_kappa", "converged"};

Rows vmf_task(const ScenarioConfig& cfg, std::size_t level_index, std::size_t rep) {
  const double level = cfg.contamination_levels[level_index];
  const auto& truth = std::get<VmfParams>(cfg.truth.params);
  Rows rows;
  auto push = [&](const std::string& est, double gamma, const FitResult* f) {
    std::vector<std::string> r = {level_label(level), std::to_string(rep), est, num(gamma)};
    if (!f) {
      r.insert(r.end(), {"failed", "nan", "nan", "nan", "nan", "nan", "nan", "0"});
    } else {
      const auto& p = std::get<VmfParams>(f->params.params);
      const double c = p.mu.dot(truth.mu);
      r.push_back("ok");
      for (int k = 0; k < 3; ++k) r.push_back(k < p.mu.size() ? num(p.mu(k)) : "nan");
      r.insert(r.end(), {num(p.kappa), num(2.0 * (1.0 - c * c)), num((p.kappa - truth.kappa) * (p.kappa - truth.kappa)),
                         f->converged ? "1" : "0"});
    }
    rows.push_back(std::move(r));
  };
  const Dataset data = generate_dataset(cfg, level, rep);
  std::optional<FitResult> mle;
  try {
    mle = vmf_mle(data);
  } catch (const Error&) {
  }
  push("MLE", 0.0, mle ? &*mle : nullptr);
  for (double g : cfg.gamma_grid) {
    std::optional<FitResult> f;
    if (mle) {
      try {
        f = vmf_fixed_point(data, g, std::get<VmfParams>(mle->params.params));
      } catch (const Error&) {
      }
    }
    push(gamma_label(g), g, f ? &*f : nullptr);
  }
  return rows;
}

std::vector<TableCell> vmf_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells;
  for (const auto& [key, idx] : group_rows(t, {"estimator", "level"})) {
    double st = 0.0, sk = 0.0;
    int ok = 0, failed = 0;
    for (auto i : idx) {
      if (!ok_row(t, i)) {
        ++failed;
        continue;
      }
      st += t.number(i, "sq_trace");
      sk += t.number(i, "sq_kappa");
      ++ok;
    }
    const int total = static_cast<int>(idx.size());
    const double tr = ok ? std::sqrt(st / ok) : std::nan("");
    const double kr = ok ? std::sqrt(sk / ok) : std::nan("");
    cells.push_back({key[0], key[1], "integrated_rmse", tr + kr, 0.0, failed, total});
    cells.push_back({key[0], key[1], "trace_rmse", tr, 0.0, failed, total});
    cells.push_back({key[0], key[1], "kappa_rmse", kr, 0.0, failed, total});
  }
  return cells;
}

// ---------------------------------------------------------- selection table

const std::vector<std::string> kCvHeader = {"level", "replication", "anchor", "status", "gamma_one_se",
                                            "gamma_argmin", "score", "bandwidth", "dropped"};

Rows cv_task(const ScenarioConfig& cfg, std::size_t level_index, std::size_t rep) {
  const double level = cfg.contamination_levels[level_index];
  const Dataset data = generate_dataset(cfg, level, rep);
  const Fitter fit = default_fitter(cfg.truth);
  Rows rows;
  for (double anchor : cfg.anchors) {
    std::vector<std::string> r = {level_label(level), std::to_string(rep), level_label(anchor)};
    try {
      Rng folds(split_seed(cfg.seed, stream_of(kFolds, level_index), rep));
      Validator v;
      v.kind = ValidatorKind::ksd;
      v.gamma0 = anchor;
      const auto [table, sel] = cv_select(data, fit, cfg.gamma_grid, v, cfg.folds, folds);
      int dropped = 0;
      for (bool b : table.dropped) dropped += b ? 1 : 0;
      r.insert(r.end(), {"ok", num(sel.gamma_one_se), num(sel.gamma_argmin), num(sel.score_at_selected),
                         num(table.bandwidth), std::to_string(dropped)});
    } catch (const Error&) {
      r.insert(r.end(), {"failed", "nan", "nan", "nan", "nan", "0"});
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

double modal_value(const std::vector<double>& v) {
  std::map<double, int> counts;
  for (double x : v) ++counts[x];
  double best = std::nan("");
  int top = 0;
  for (const auto& [x, c] : counts)
    if (c > top) top = c, best = x;
  return best;
}

std::vector<TableCell> cv_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells;
  for (const auto& [key, idx] : group_rows(t, {"level", "anchor"})) {
    std::vector<double> picks, argmins, scores;
    int failed = 0;
    for (auto i : idx) {
      if (!ok_row(t, i)) {
        ++failed;
        continue;
      }
      picks.push_back(t.number(i, "gamma_one_se"));
      argmins.push_back(t.number(i, "gamma_argmin"));
      scores.push_back(t.number(i, "score"));
    }
    const int total = static_cast<int>(idx.size());
    const MetricReport s = summarize(MetricKind::param_rmse, scores);
    const double prop = picks.empty() ? std::nan("") : stability_proportion(picks);
    cells.push_back({key[0], key[1], "gamma_hat", modal_value(picks), 0.0, failed, total});
    cells.push_back({key[0], key[1], "prop", prop, 0.0, failed, total});
    cells.push_back({key[0], key[1], "ksd", s.mean, s.stderr_, failed, total});
    cells.push_back({key[0], key[1], "gamma_argmin", modal_value(argmins), 0.0, failed, total});
  }
  return cells;
}

// ------------------------------------------------------------ mixture table

const std::vector<std::string> kNmmHeader = {"level", "replication", "estimator", "status", "rmse_pi",
                                             "rmse_mu", "rmse_sigma", "converged"};

Rows nmm_task(const ScenarioConfig& cfg, std::size_t level_index, std::size_t rep) {
  const double level = cfg.contamination_levels[level_index];
  const auto& truth = std::get<MixtureParams>(cfg.truth.params);
  const int J = static_cast<int>(truth.weights.size());
  const Dataset data = generate_dataset(cfg, level, rep);
  Rows rows;
  auto push = [&](const std::string& est, const std::optional<FitResult>& f) {
    std::vector<std::string> r = {level_label(level), std::to_string(rep), est};
    bool finite = false;
    MixtureError e;
    if (f) {
      e = mixture_rmse(std::get<MixtureParams>(f->params.params), truth);
      finite = std::isfinite(e.rmse_pi) && std::isfinite(e.rmse_mu) && std::isfinite(e.rmse_sigma);
    }
    if (finite)
      r.insert(r.end(), {"ok", num(e.rmse_pi), num(e.rmse_mu), num(e.rmse_sigma), f->converged ? "1" : "0"});
    else
      r.insert(r.end(), {"failed", "nan", "nan", "nan", "0"});
    rows.push_back(std::move(r));
  };
  const double gamma = cfg.gamma_grid.front();
  std::optional<FitResult> stein, em;
  try {
    stein = nmm_fit(data, J, gamma, HomotopySchedule::linear(gamma, cfg.homotopy_stages));
  } catch (const Error&) {
  }
  try {
    em = nmm_em_mle(data, nmm_initialize(data, J));
  } catch (const Error&) {
  }
  push("gamma-Stein", stein);
  push("MLE (EM)", em);
  return rows;
}

std::vector<TableCell> mean_metric_cells(const CsvTable& t, const std::vector<std::string>& keys,
                                         const std::vector<std::string>& metrics) {
  std::vector<TableCell> cells;
  for (const auto& [key, idx] : group_rows(t, keys)) {
    int failed = 0;
    std::vector<std::vector<double>> vals(metrics.size());
    for (auto i : idx) {
      if (!ok_row(t, i)) {
        ++failed;
        continue;
      }
      for (std::size_t m = 0; m < metrics.size(); ++m) vals[m].push_back(t.number(i, metrics[m]));
    }
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      const MetricReport s = summarize(MetricKind::mixture_rmse, vals[m]);
      cells.push_back({key[0], key[1], metrics[m], s.mean, s.stderr_, failed, static_cast<int>(idx.size())});
    }
  }
  return cells;
}

// ------------------------------------------------------------ quartic table

const std::vector<std::string> kQuarticHeader = {"level", "replication", "estimator", "status", "theta1",
                                                 "theta2", "theta3", "sq_error", "converged"};

Rows quartic_task(const ScenarioConfig& cfg, std::size_t level_index, std::size_t rep) {
  const double level = cfg.contamination_levels[level_index];
  const Vec truth = pack_params(cfg.truth);
  const Dataset data = generate_dataset(cfg, level, rep);
  Rows rows;
  auto push = [&](const std::string& est, const std::optional<FitResult>& f) {
    std::vector<std::string> r = {level_label(level), std::to_string(rep), est};
    const Vec th = f ? pack_params(f->params) : Vec();
    if (f && th.allFinite()) {
      r.insert(r.end(), {"ok", num(th(0)), num(th(1)), num(th(2)), num((th - truth).squaredNorm()),
                         f->converged ? "1" : "0"});
    } else {
      r.insert(r.end(), {"failed", "nan", "nan", "nan", "nan", "0"});
    }
    rows.push_back(std::move(r));
  };
  std::optional<FitResult> mle;
  try {
    mle = quartic_mle(data, QuarticParams{0.0, 1.0, -1.0});
  } catch (const Error&) {
  }
  push("MLE", mle);
  for (double g : cfg.gamma_grid) {
    std::optional<FitResult> f;
    try {
      f = quartic_fit(data, g);
    } catch (const Error&) {
    }
    push("gamma-Stein (" + gamma_label(g) + ")", f);
  }
  return rows;
}

std::vector<TableCell> quartic_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells = mean_metric_cells(t, {"level", "estimator"}, {"theta1", "theta2", "theta3"});
  for (auto& c : cells) c.metric = "mean_" + c.metric;
  for (const auto& [key, idx] : group_rows(t, {"level", "estimator"})) {
    double s = 0.0;
    int ok = 0, failed = 0;
    for (auto i : idx) {
      if (!ok_row(t, i)) {
        ++failed;
        continue;
      }
      s += t.number(i, "sq_error");
      ++ok;
    }
    cells.push_back({key[0], key[1], "rmse", ok ? std::sqrt(s / ok) : std::nan(""), 0.0, failed,
                     static_cast<int>(idx.size())});
  }
  return cells;
}

// -------------------------------------------------------------- power table

const std::vector<std::string> kPowerHeader = {"shift", "replication", "gamma", "status", "bandwidth", "statistic",
                                               "critical_value", "p_value", "reject"};

ModelSpec shifted_gaussian(const ModelSpec& base, double shift) {
  auto p = std::get<GaussianParams>(base.params);
  p.mean = p.mean + Vec::Constant(p.mean.size(), shift);
  return make_gaussian(p.mean, p.precision);
}

// Each Monte Carlo dataset gets its own median bandwidth and its own
// null-simulation critical value computed with that bandwidth.
std::vector<Rows> power_rows(const ScenarioConfig& cfg, int threads) {
  const ContaminationSpec spec = spec_at(cfg, 0, cfg.contamination[0].rate);
  const NullSampler null = [&](std::size_t n, Rng& rng) { return sample_mixture_contaminated(cfg.truth, n, spec, rng); };
  const std::size_t R = static_cast<std::size_t>(cfg.monte_carlo);
  return run_tasks(cfg.shifts.size() * R, threads, [&](std::size_t task) {
    const std::size_t s = task / R, rep = task % R;
    const double shift = cfg.shifts[s];
    Rng rng(split_seed(cfg.seed, stream_of(kPower, s), rep));
    const Dataset data = sample_mixture_contaminated(shifted_gaussian(cfg.truth, shift), cfg.n, spec, rng);
    const KernelSpec K{median_bandwidth(data)};
    Rows rows;
    for (std::size_t g = 0; g < cfg.gamma_grid.size(); ++g) {
      std::vector<std::string> r = {level_label(shift), std::to_string(rep), level_label(cfg.gamma_grid[g])};
      try {
        Rng boot(split_seed(cfg.seed, stream_of(kNull, s * cfg.gamma_grid.size() + g), rep));
        const GofTestResult d = gof_test(data, cfg.truth, cfg.gamma_grid[g], K, Calibration::null_simulation, null,
                                         cfg.bootstrap, cfg.alpha, boot);
        r.insert(r.end(), {"ok", num(K.bandwidth), num(d.statistic), num(d.critical_value), num(d.p_value),
                           d.reject ? "1" : "0"});
      } catch (const Error&) {
        r.insert(r.end(), {"failed", "nan", "nan", "nan", "nan", "0"});
      }
      rows.push_back(std::move(r));
    }
    return rows;
  });
}

std::vector<TableCell> power_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells;
  for (const auto& [key, idx] : group_rows(t, {"shift", "gamma"})) {
    int ok = 0, failed = 0, rej = 0;
    for (auto i : idx) {
      if (!ok_row(t, i)) {
        ++failed;
        continue;
      }
      ++ok;
      rej += t.number(i, "reject") > 0.5 ? 1 : 0;
    }
    const double p = ok ? static_cast<double>(rej) / ok : std::nan("");
    cells.push_back({key[0], key[1], "power", p, ok ? std::sqrt(p * (1.0 - p) / ok) : 0.0, failed,
                     static_cast<int>(idx.size())});
  }
  return cells;
}

// ------------------------------------------------------------ particle table

const std::vector<std::string> kSvgdHeader = {"scenario", "replication", "gamma", "status", "rmse", "halvings"};

std::vector<ContaminationSpec> svgd_specs(const ScenarioConfig& cfg, const std::string& scenario) {
  std::vector<ContaminationSpec> out;
  const bool want_x = scenario == "X" || scenario == "XY";
  const bool want_y = scenario == "Y" || scenario == "XY";
  if (scenario != "clean" && !want_x && !want_y) throw ArgumentError("unknown particle scenario '" + scenario + "'");
  for (const auto& s : cfg.contamination) {
    if ((s.kind == ContaminationKind::covariate && want_x) || (s.kind == ContaminationKind::outcome && want_y))
      out.push_back(s);
  }
  return out;
}

Rows svgd_task(const ScenarioConfig& cfg, std::size_t scenario_index, std::size_t rep) {
  const std::string& scenario = cfg.scenarios[scenario_index];
  const auto& truth = std::get<PoissonRegParams>(cfg.truth.params);
  Rng data_rng(split_seed(cfg.seed, stream_of(kData, 0), rep));
  const Dataset train = generate_contaminated(cfg.truth, cfg.n, svgd_specs(cfg, scenario), data_rng);
  Rng test_rng(split_seed(cfg.seed, stream_of(kTest, 0), rep));
  const Dataset test = sample(cfg.truth, cfg.test_size, test_rng);
  Vec target = test.x * truth.alpha.tail(truth.alpha.size() - 1);
  target = (target.array() + truth.alpha(0)).exp();

  Rows rows;
  const Vec map = poisson_map(train.x, *train.y, truth.prior_variances);
  const ParticleEnsemble init =
      init_ensemble(cfg.particles, map, cfg.init_spread, split_seed(cfg.seed, stream_of(kParticles, 0), rep));
  const TargetSpec tgt = poisson_target(truth.prior_variances, train.x, *train.y);
  for (double g : cfg.gamma_grid) {
    std::vector<std::string> r = {scenario, std::to_string(rep), level_label(g)};
    try {
      SvgdConfig sc;
      sc.particles = cfg.particles;
      sc.iterations = cfg.iterations;
      sc.step = cfg.step;
      sc.gamma_target = g;
      const SvgdResult res = run_svgd(sc, tgt, init);
      int halvings = 0;
      for (const auto& e : res.trace) halvings += e.halvings;
      const double rmse = predictive_rmse(res.ensemble.positions, test.x, target);
      if (res.aborted || !std::isfinite(rmse))
        r.insert(r.end(), {"failed", "nan", std::to_string(halvings)});
      else
        r.insert(r.end(), {"ok", num(rmse), std::to_string(halvings)});
    } catch (const Error&) {
      r.insert(r.end(), {"failed", "nan", "0"});
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<TableCell> svgd_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells = mean_metric_cells(t, {"gamma", "scenario"}, {"rmse"});
  // One-SE selection per scenario, smallest gamma among those within one
  // stderr of the minimum mean.
  std::vector<std::string> scenarios;
  for (const auto& c : cells)
    if (std::find(scenarios.begin(), scenarios.end(), c.column) == scenarios.end()) scenarios.push_back(c.column);
  for (const auto& s : scenarios) {
    CvTable tab;
    std::vector<double> means, ses;
    for (const auto& c : cells)
      if (c.column == s) {
        tab.gamma_grid.push_back(std::stod(c.row));
        means.push_back(c.value);
        ses.push_back(c.stderr_);
      }
    tab.mean = Eigen::Map<const Vec>(means.data(), static_cast<Eigen::Index>(means.size()));
    tab.stderr_ = Eigen::Map<const Vec>(ses.data(), static_cast<Eigen::Index>(ses.size()));
    double pick = std::nan("");
    try {
      pick = one_se_rule(tab).gamma_one_se;
    } catch (const Error&) {
    }
    cells.push_back({"one-se", s, "gamma", pick, 0.0, 0, 0});
  }
  return cells;
}

// ------------------------------------------------------------ identity suite

const std::vector<std::string> kVerifyHeader = {"group", "name", "status", "value", "threshold", "passed"};

std::vector<TableCell> verify_aggregate(const CsvTable& t) {
  std::vector<TableCell> cells;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    cells.push_back({r[t.column("group")], r[t.column("name")], "discrepancy", t.number(i, "value"), 0.0,
                     t.number(i, "passed") > 0.5 ? 0 : 1, 1});
  }
  return cells;
}

// ------------------------------------------------------------- rendering

const TableCell* find_cell(const std::vector<TableCell>& cells, const std::string& row, const std::string& col,
                           const std::string& metric) {
  for (const auto& c : cells)
    if (c.row == row && c.column == col && c.metric == metric) return &c;
  return nullptr;
}

std::string cell_text(const std::vector<TableCell>& cells, const std::string& row, const std::string& col,
                      const std::string& metric, int digits, bool with_se = false) {
  const TableCell* c = find_cell(cells, row, col, metric);
  if (!c) return "--";
  std::string s = fmt(c->value, digits);
  if (with_se && std::isfinite(c->value)) s += " +- " + fmt(c->stderr_, digits);
  if (c->failures > 0) s += " [" + std::to_string(c->failures) + " failed]";
  return s;
}

std::string render(const ScenarioConfig& cfg, const std::vector<TableCell>& cells) {
  std::vector<std::vector<std::string>> t;
  const std::string& e = cfg.experiment;
  if (e == "vmf-table1") {
    std::vector<std::string> head = {"Estimator"};
    for (double l : cfg.contamination_levels) head.push_back("eps=" + level_label(l));
    t.push_back(head);
    std::vector<std::string> rows = {"MLE"};
    for (double g : cfg.gamma_grid) rows.push_back(gamma_label(g));
    for (const auto& r : rows) {
      std::vector<std::string> line = {r};
      for (double l : cfg.contamination_levels) line.push_back(cell_text(cells, r, level_label(l), "integrated_rmse", 2));
      t.push_back(line);
    }
    return "Integrated RMSE (trace RMSE of mu + RMSE of kappa)\n" + render_table(t);
  }
  if (e == "cv-table2") {
    std::vector<std::string> head = {"eps"};
    for (double a : cfg.anchors) {
      head.push_back("g0=" + level_label(a) + " gamma/prop");
      head.push_back("KSD");
    }
    t.push_back(head);
    for (double l : cfg.contamination_levels) {
      std::vector<std::string> line = {level_label(l)};
      for (double a : cfg.anchors) {
        const TableCell* g = find_cell(cells, level_label(l), level_label(a), "gamma_hat");
        const TableCell* p = find_cell(cells, level_label(l), level_label(a), "prop");
        line.push_back((g ? fmt(g->value, 2) : "--") + " / " + (p ? fmt(p->value, 2) : "--"));
        line.push_back(cell_text(cells, level_label(l), level_label(a), "ksd", 4));
      }
      t.push_back(line);
    }
    return "Anchored KSD cross-validation: modal one-SE gamma, its share, mean validator score\n" + render_table(t);
  }
  if (e == "nmm-table3") {
    t.push_back({"eps", "Estimator", "RMSE(pi)", "RMSE(mu)", "RMSE(Sigma)"});
    for (double l : cfg.contamination_levels)
      for (const std::string est : {"gamma-Stein", "MLE (EM)"})
        t.push_back({level_label(l), est, cell_text(cells, level_label(l), est, "rmse_pi", 3),
                     cell_text(cells, level_label(l), est, "rmse_mu", 3),
                     cell_text(cells, level_label(l), est, "rmse_sigma", 3)});
    return "Mean RMSE for mixture parameters\n" + render_table(t);
  }
  if (e == "quartic-table4") {
    t.push_back({"eps", "Estimator", "Mean theta1", "Mean theta2", "Mean theta3", "RMSE"});
    std::vector<std::string> ests = {"MLE"};
    for (double g : cfg.gamma_grid) ests.push_back("gamma-Stein (" + gamma_label(g) + ")");
    for (double l : cfg.contamination_levels)
      for (const auto& est : ests)
        t.push_back({level_label(l), est, cell_text(cells, level_label(l), est, "mean_theta1", 4),
                     cell_text(cells, level_label(l), est, "mean_theta2", 4),
                     cell_text(cells, level_label(l), est, "mean_theta3", 4),
                     cell_text(cells, level_label(l), est, "rmse", 4)});
    return "Quartic potential model\n" + render_table(t);
  }
  if (e == "power-table5") {
    std::vector<std::string> head = {"shift"};
    for (double g : cfg.gamma_grid) head.push_back(gamma_label(g));
    t.push_back(head);
    for (double s : cfg.shifts) {
      std::vector<std::string> line = {level_label(s)};
      for (double g : cfg.gamma_grid) line.push_back(cell_text(cells, level_label(s), level_label(g), "power", 3));
      t.push_back(line);
    }
    return "Rejection rate (shift 0 is the type I error)\n" + render_table(t);
  }
  if (e == "svgd-table6") {
    std::vector<std::string> head = {"gamma"};
    for (const auto& s : cfg.scenarios) head.push_back(s);
    t.push_back(head);
    for (double g : cfg.gamma_grid) {
      std::vector<std::string> line = {level_label(g)};
      for (const auto& s : cfg.scenarios) {
        std::string txt = cell_text(cells, level_label(g), s, "rmse", 3, true);
        const TableCell* pick = find_cell(cells, "one-se", s, "gamma");
        if (pick && pick->value == std::stod(level_label(g))) txt += " *";
        line.push_back(txt);
      }
      t.push_back(line);
    }
    return "Posterior predictive RMSE (mean +- s.e.; * marks the one-SE choice)\n" + render_table(t);
  }
  t.push_back({"group", "check", "discrepancy", "pass"});
  for (const auto& c : cells) t.push_back({c.row, c.column, fmt(c.value, 3) == "0.000" ? num(c.value) : fmt(c.value, 6),
                                          c.failures ? "FAIL" : "ok"});
  return render_table(t);
}

std::vector<PlotSeries> plot_series(const ScenarioConfig& cfg, const std::vector<TableCell>& cells) {
  std::vector<PlotSeries> out;
  if (cfg.experiment == "vmf-table1") {
    for (double l : cfg.contamination_levels) {
      PlotSeries s{"eps=" + level_label(l), {}, {}, {}};
      for (double g : cfg.gamma_grid)
        if (const auto* c = find_cell(cells, gamma_label(g), level_label(l), "integrated_rmse")) {
          s.x.push_back(g);
          s.y.push_back(c->value);
        }
      out.push_back(s);
    }
  } else if (cfg.experiment == "power-table5") {
    for (double g : cfg.gamma_grid) {
      PlotSeries s{gamma_label(g), {}, {}, {}};
      for (double sh : cfg.shifts)
        if (const auto* c = find_cell(cells, level_label(sh), level_label(g), "power")) {
          s.x.push_back(sh);
          s.y.push_back(c->value);
        }
      out.push_back(s);
    }
  } else if (cfg.experiment == "svgd-table6") {
    for (const auto& sc : cfg.scenarios) {
      PlotSeries s{sc, {}, {}, {}};
      for (double g : cfg.gamma_grid)
        if (const auto* c = find_cell(cells, level_label(g), sc, "rmse")) {
          s.x.push_back(g);
          s.y.push_back(c->value);
          s.err.push_back(c->stderr_);
        }
      out.push_back(s);
    }
  }
  return out;
}

bool same_cells(const std::vector<TableCell>& a, const std::vector<TableCell>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.row != y.row || x.column != y.column || x.metric != y.metric || x.failures != y.failures) return false;
    const bool both_nan = std::isnan(x.value) && std::isnan(y.value);
    if (!both_nan && std::abs(x.value - y.value) > 1e-12 * (1.0 + std::abs(x.value))) return false;
  }
  return true;
}

CsvTable cells_table(const std::vector<TableCell>& cells) {
  CsvTable t;
  t.header = {"row", "column", "metric", "value", "stderr", "failures", "replications"};
  for (const auto& c : cells)
    t.rows.push_back({c.row, c.column, c.metric, num(c.value), num(c.stderr_), std::to_string(c.failures),
                      std::to_string(c.replications)});
  return t;
}

}  // namespace

std::string level_label(double v) { return fmt(v, 2); }

Json model_to_json(const ModelSpec& m) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianParams>) {
          return Json{{"mean", vec_json(p.mean)}, {"precision", mat_json(p.precision)}};
        } else if constexpr (std::is_same_v<T, VmfParams>) {
          return Json{{"mu", vec_json(p.mu)}, {"kappa", p.kappa}};
        } else if constexpr (std::is_same_v<T, FisherBinghamParams>) {
          return Json{{"xi", vec_json(p.xi)}, {"B", mat_json(p.B)}};
        } else if constexpr (std::is_same_v<T, MixtureParams>) {
          Json means = Json::array();
          for (const auto& mu : p.means) means.push_back(vec_json(mu));
          return Json{{"weights", vec_json(p.weights)}, {"means", means}, {"variances", vec_json(p.precisions.cwiseInverse())}};
        } else if constexpr (std::is_same_v<T, QuarticParams>) {
          return Json{{"theta", {p.theta1, p.theta2, p.theta3}}};
        } else {
          return Json{{"alpha", vec_json(p.alpha)}, {"prior_variances", vec_json(p.prior_variances)}};
        }
      },
      m.params);
}

ModelSpec model_from_json(Family family, const Json& j) {
  switch (family) {
    case Family::gaussian:
      reject_unknown(j, {"mean", "precision"}, "true_params");
      return make_gaussian(json_vec(j.at("mean")), json_mat(j.at("precision")));
    case Family::vmf: {
      reject_unknown(j, {"mu", "kappa"}, "true_params");
      return make_vmf(json_vec(j.at("mu")), j.at("kappa").get<double>());
    }
    case Family::fisher_bingham:
      reject_unknown(j, {"xi", "B"}, "true_params");
      return make_fisher_bingham(json_vec(j.at("xi")), json_mat(j.at("B")));
    case Family::mixture: {
      reject_unknown(j, {"weights", "means", "variances"}, "true_params");
      std::vector<Vec> means;
      for (const auto& m : j.at("means")) means.push_back(json_vec(m));
      return make_mixture(json_vec(j.at("weights")), means, json_vec(j.at("variances")).cwiseInverse());
    }
    case Family::quartic: {
      reject_unknown(j, {"theta"}, "true_params");
      const Vec t = json_vec(j.at("theta"));
      if (t.size() != 3) throw ArgumentError("quartic theta needs three entries");
      return make_quartic(t(0), t(1), t(2));
    }
    case Family::poisson_regression:
      reject_unknown(j, {"alpha", "prior_variances"}, "true_params");
      return make_poisson_regression(json_vec(j.at("alpha")), json_vec(j.at("prior_variances")));
  }
  throw ArgumentError("unknown family");
}

void ScenarioConfig::validate() const {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), experiment) == names.end())
    throw ArgumentError("unknown experiment '" + experiment + "'");
  if (experiment == "verify-identities") return;
  gstein::validate(truth);
  if (n < 2) throw ArgumentError("n must be at least 2");
  if (replications < 1) throw ArgumentError("replications must be >= 1");
  for (const auto& c : contamination) c.validate();
  for (double l : contamination_levels)
    if (!(l >= 0.0 && l < 1.0)) throw ArgumentError("contamination levels must lie in [0, 1)");
  for (double g : gamma_grid)
    if (!(g >= 0.0)) throw ArgumentError("gamma values must be >= 0");
  if (gamma_grid.empty()) throw ArgumentError("gamma_grid is empty");
  if (experiment == "cv-table2" && (anchors.empty() || folds < 2)) throw ArgumentError("cv needs anchors and folds >= 2");
  if (experiment == "power-table5" && (shifts.empty() || bootstrap < 1 || monte_carlo < 1 || !(alpha > 0 && alpha < 1)))
    throw ArgumentError("power study needs shifts, bootstrap >= 1, monte_carlo >= 1 and alpha in (0, 1)");
  if (experiment == "svgd-table6" && (scenarios.empty() || particles < 1 || iterations < 1 || !(step > 0.0)))
    throw ArgumentError("particle study needs scenarios, particles, iterations and a positive step");
  if (experiment != "power-table5" && experiment != "svgd-table6" && contamination_levels.empty())
    throw ArgumentError("contamination_levels is empty");
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"vmf-table1",   "cv-table2",   "nmm-table3",       "quartic-table4",
                                                 "power-table5", "svgd-table6", "verify-identities"};
  return names;
}

ScenarioConfig default_scenario(const std::string& experiment, bool desk) {
  ScenarioConfig c;
  c.experiment = experiment;
  c.seed = 20240917;
  const int reps = desk ? 20 : 50;
  if (experiment == "vmf-table1" || experiment == "cv-table2") {
    c.truth = make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0);
    c.n = 400;
    c.contamination = {{ContaminationKind::antipodal_vmf, 0.0, {{"kappa", 50.0}}}};
    c.contamination_levels = {0.0, 0.05, 0.10, 0.20};
    c.gamma_grid = {0.0, 0.05, 0.10, 0.20, 0.30};
    c.replications = reps;
    if (experiment == "cv-table2") c.anchors = {0.0, 0.05, 0.10};
  } else if (experiment == "nmm-table3") {
    c.truth = make_mixture((Vec(2) << 0.5, 0.5).finished(), {(Vec(2) << -2.0, 0.0).finished(), (Vec(2) << 2.0, 0.0).finished()},
                           Vec::Constant(2, 1.0 / 0.6));
    c.n = 500;
    c.contamination = {{ContaminationKind::student_t, 0.0, {{"df", 4.0}, {"scale", 7.0}}}};
    c.contamination_levels = {0.0, 0.03, 0.05, 0.10};
    c.gamma_grid = {0.3};
    c.replications = reps;
  } else if (experiment == "quartic-table4") {
    c.truth = make_quartic(0.0, 2.0, -0.5);
    c.n = 200;
    c.contamination = {{ContaminationKind::quartic_outlier, 0.0, {{"location", 0.0}, {"scale", 10.0}}}};
    c.contamination_levels = {0.0, 0.10};
    c.gamma_grid = {0.3, 0.5};
    c.replications = reps;
  } else if (experiment == "power-table5") {
    c.truth = make_gaussian(Vec::Zero(2), Mat::Identity(2, 2));
    c.n = 200;
    c.contamination = {{ContaminationKind::gaussian_shift, 0.10, {{"center", 5.0}}}};
    c.gamma_grid = {0.0, 0.3, 0.5};
    c.shifts = {0.0, 0.2, 0.4, 0.6, 0.8};
    c.bootstrap = desk ? 200 : 500;
    c.monte_carlo = desk ? 200 : 500;
    c.replications = c.monte_carlo;
  } else if (experiment == "svgd-table6") {
    c.truth = make_poisson_regression((Vec(7) << 2.5, 0.5, -0.4, 0.3, 0.2, -0.2, 0.1).finished(),
                                      (Vec(7) << 100, 1, 1, 1, 1, 1, 1).finished());
    c.n = 400;
    c.contamination = {{ContaminationKind::covariate, 0.10, {{"factor", 6.0}}},
                       {ContaminationKind::outcome, 0.10, {{"multiplier", 10.0}}}};
    c.gamma_grid = {0.0, 0.02, 0.05, 0.08, 0.10};
    c.scenarios = {"clean", "Y", "X", "XY"};
    c.replications = desk ? 10 : 20;
  } else if (experiment == "verify-identities") {
    c.truth = make_gaussian(Vec::Zero(1), Mat::Identity(1, 1));
    c.n = 2;
    c.gamma_grid = {0.0};
  } else {
    throw ArgumentError("unknown experiment '" + experiment + "'");
  }
  return c;
}

Json scenario_to_json(const ScenarioConfig& c) {
  Json cont = Json::array();
  for (const auto& s : c.contamination) {
    Json params = Json::object();
    for (const auto& [k, v] : s.params) params[k] = v;
    cont.push_back(Json{{"kind", contamination_name(s.kind)}, {"rate", s.rate}, {"params", params}});
  }
  return Json{{"experiment", c.experiment},
              {"family", family_name(c.truth.family())},
              {"true_params", model_to_json(c.truth)},
              {"n", c.n},
              {"contamination", cont},
              {"contamination_levels", c.contamination_levels},
              {"gamma_grid", c.gamma_grid},
              {"replications", c.replications},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"anchors", c.anchors},
              {"folds", c.folds},
              {"homotopy_stages", c.homotopy_stages},
              {"shifts", c.shifts},
              {"bootstrap", c.bootstrap},
              {"monte_carlo", c.monte_carlo},
              {"alpha", c.alpha},
              {"scenarios", c.scenarios},
              {"test_size", c.test_size},
              {"particles", c.particles},
              {"iterations", c.iterations},
              {"step", c.step},
              {"init_spread", c.init_spread}};
}

ScenarioConfig scenario_from_json(const Json& doc, ScenarioConfig c) {
  static const std::set<std::string> known = {
      "experiment", "family",   "true_params", "n",         "contamination", "contamination_levels",
      "gamma_grid", "replications", "seed",    "output_dir", "anchors",      "folds",
      "homotopy_stages", "shifts", "bootstrap", "monte_carlo", "alpha",     "scenarios",
      "test_size",  "particles", "iterations", "step",       "init_spread"};
  reject_unknown(doc, known, "scenario config");
  try {
    if (doc.contains("experiment")) {
      const auto name = doc.at("experiment").get<std::string>();
      if (name != c.experiment) {
        const bool desk = c.replications <= 20;
        c = default_scenario(name, desk);
      }
    }
    if (doc.contains("family") || doc.contains("true_params")) {
      const Family f = doc.contains("family") ? family_from_name(doc.at("family").get<std::string>()) : c.truth.family();
      if (!doc.contains("true_params")) throw ArgumentError("'family' given without 'true_params'");
      c.truth = model_from_json(f, doc.at("true_params"));
    }
    if (doc.contains("n")) c.n = doc.at("n").get<std::size_t>();
    if (doc.contains("contamination")) {
      c.contamination.clear();
      for (const auto& s : doc.at("contamination")) {
        reject_unknown(s, {"kind", "rate", "params"}, "contamination entry");
        ContaminationSpec spec;
        spec.kind = contamination_from_name(s.at("kind").get<std::string>());
        spec.rate = s.value("rate", 0.0);
        if (s.contains("params"))
          for (const auto& [k, v] : s.at("params").items()) spec.params[k] = v.get<double>();
        c.contamination.push_back(spec);
      }
    }
    auto read = [&](const char* key, auto& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    read("contamination_levels", c.contamination_levels);
    read("gamma_grid", c.gamma_grid);
    read("replications", c.replications);
    read("seed", c.seed);
    read("output_dir", c.output_dir);
    read("anchors", c.anchors);
    read("folds", c.folds);
    read("homotopy_stages", c.homotopy_stages);
    read("shifts", c.shifts);
    read("bootstrap", c.bootstrap);
    read("monte_carlo", c.monte_carlo);
    read("alpha", c.alpha);
    read("scenarios", c.scenarios);
    read("test_size", c.test_size);
    read("particles", c.particles);
    read("iterations", c.iterations);
    read("step", c.step);
    read("init_spread", c.init_spread);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("scenario config: ") + e.what());
  }
  if (c.experiment == "power-table5") c.replications = c.monte_carlo;
  return c;
}

Dataset generate_dataset(const ScenarioConfig& cfg, double level, std::size_t replication) {
  std::size_t level_index = 0;
  const auto it = std::find(cfg.contamination_levels.begin(), cfg.contamination_levels.end(), level);
  if (it != cfg.contamination_levels.end()) level_index = static_cast<std::size_t>(it - cfg.contamination_levels.begin());
  Rng rng(split_seed(cfg.seed, stream_of(kData, level_index), replication));
  std::vector<ContaminationSpec> specs;
  for (std::size_t k = 0; k < cfg.contamination.size(); ++k) specs.push_back(spec_at(cfg, k, level));
  Dataset d = generate_contaminated(cfg.truth, cfg.n, specs, rng);
  d.provenance.scenario = cfg.experiment;
  d.provenance.seed = cfg.seed;
  return d;
}

const TableCell& ExperimentReport::cell(const std::string& row, const std::string& column,
                                        const std::string& metric) const {
  if (const TableCell* c = find_cell(cells, row, column, metric)) return *c;
  throw ArgumentError("no table cell (" + row + ", " + column + ", " + metric + ") in " + name);
}

std::vector<TableCell> aggregate_replications(const ScenarioConfig& cfg, const CsvTable& reps) {
  const auto& e = cfg.experiment;
  if (e == "vmf-table1") return vmf_aggregate(reps);
  if (e == "cv-table2") return cv_aggregate(reps);
  if (e == "nmm-table3") return mean_metric_cells(reps, {"level", "estimator"}, {"rmse_pi", "rmse_mu", "rmse_sigma"});
  if (e == "quartic-table4") return quartic_aggregate(reps);
  if (e == "power-table5") return power_aggregate(reps);
  if (e == "svgd-table6") return svgd_aggregate(reps);
  if (e == "verify-identities") return verify_aggregate(reps);
  throw ArgumentError("unknown experiment '" + e + "'");
}

ExperimentReport run_experiment(const ScenarioConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto& e = cfg.experiment;
  const std::size_t R = static_cast<std::size_t>(cfg.replications);
  const std::size_t L = cfg.contamination_levels.size();
  CsvTable reps;

  auto level_tasks = [&](auto task) {
    return run_tasks(L * R, opt.threads, [&](std::size_t i) { return task(cfg, i / R, i % R); });
  };
  if (e == "vmf-table1") {
    reps = collect(kVmfHeader, level_tasks(vmf_task));
  } else if (e == "cv-table2") {
    reps = collect(kCvHeader, level_tasks(cv_task));
  } else if (e == "nmm-table3") {
    reps = collect(kNmmHeader, level_tasks(nmm_task));
  } else if (e == "quartic-table4") {
    reps = collect(kQuarticHeader, level_tasks(quartic_task));
  } else if (e == "power-table5") {
    reps = collect(kPowerHeader, power_rows(cfg, opt.threads));
  } else if (e == "svgd-table6") {
    const std::size_t S = cfg.scenarios.size();
    reps = collect(kSvgdHeader,
                   run_tasks(S * R, opt.threads, [&](std::size_t i) { return svgd_task(cfg, i / R, i % R); }));
  } else {
    reps.header = kVerifyHeader;
    for (const auto& c : run_identity_suite())
      reps.rows.push_back({c.group, c.name, "ok", num(c.value), num(c.threshold), c.passed ? "1" : "0"});
  }

  ExperimentReport rep;
  rep.name = e;
  rep.cells = aggregate_replications(cfg, reps);
  rep.text_table = render(cfg, rep.cells);
  for (const auto& c : rep.cells) {
    if (e == "verify-identities") {
      if (c.failures) rep.verification_failed = true;
      continue;
    }
    if (c.replications > 0 && c.failures * 10 > c.replications) rep.failure_threshold_exceeded = true;
  }
  for (std::size_t i = 0; i < reps.rows.size(); ++i)
    if (!ok_row(reps, i)) ++rep.replications_failed;

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.manifest = Json{{"toolkit_version", GSTEIN_VERSION},
                      {"experiment", e},
                      {"config", scenario_to_json(cfg)},
                      {"seed", cfg.seed},
                      {"threads", opt.threads},
                      {"wall_time_seconds", wall}};

  if (opt.write_files) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(cfg.output_dir) / e;
    fs::create_directories(dir);
    const fs::path reps_path = dir / "replications.csv";
    write_csv(reps_path, reps);
    write_csv(dir / "table.csv", cells_table(rep.cells));
    write_text(dir / "table.txt", rep.text_table);
    rep.files = {reps_path.string(), (dir / "table.csv").string(), (dir / "table.txt").string()};
    const auto series = plot_series(cfg, rep.cells);
    if (!series.empty()) {
      const bool power = e == "power-table5";
      write_text(dir / "plot.svg", line_plot_svg(e, power ? "shift" : "gamma", power ? "power" : "RMSE", series));
      rep.files.push_back((dir / "plot.svg").string());
    }
    rep.self_consistent = same_cells(rep.cells, aggregate_replications(cfg, read_csv(reps_path)));
    rep.files.push_back((dir / "manifest.json").string());
    rep.manifest["files"] = rep.files;
    rep.manifest["replications_failed"] = rep.replications_failed;
    rep.manifest["self_consistent"] = rep.self_consistent;
    write_text(dir / "manifest.json", rep.manifest.dump(2) + "\n");
  } else {
    CsvTable reparsed = parse_csv(to_csv(reps));
    rep.self_consistent = same_cells(rep.cells, aggregate_replications(cfg, reparsed));
  }
  return rep;
}

}  // namespace gstein
