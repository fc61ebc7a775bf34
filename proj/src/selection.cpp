#include "gstein/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace gstein {

std::vector<int> kfold_split(std::size_t n, int K, Rng& rng) {
  if (K < 2) throw ArgumentError("kfold_split: K must be >= 2");
  if (static_cast<std::size_t>(K) > n) throw ArgumentError("kfold_split: K exceeds the number of observations");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(K));
  return fold;
}

SelectionResult one_se_rule(const CvTable& table) {
  const auto G = table.gamma_grid.size();
  if (G == 0) throw ArgumentError("one_se_rule: empty grid");
  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < G; ++g) {
    if (!table.dropped.empty() && table.dropped[g]) continue;
    const auto gi = static_cast<Eigen::Index>(g);
    if (!std::isfinite(table.mean(gi))) continue;
    if (!best || table.mean(gi) < table.mean(static_cast<Eigen::Index>(*best)) ||
        (table.mean(gi) == table.mean(static_cast<Eigen::Index>(*best)) &&
         table.gamma_grid[g] < table.gamma_grid[*best]))
      best = g;
  }
  if (!best) throw ConvergenceError("one_se_rule: every gamma was dropped");
  const auto bi = static_cast<Eigen::Index>(*best);
  const double threshold = table.mean(bi) + table.stderr_(bi);
  SelectionResult r;
  r.gamma_argmin = table.gamma_grid[*best];
  std::size_t pick = *best;
  for (std::size_t g = 0; g < G; ++g) {
    if (!table.dropped.empty() && table.dropped[g]) continue;
    const auto gi = static_cast<Eigen::Index>(g);
    if (std::isfinite(table.mean(gi)) && table.mean(gi) <= threshold && table.gamma_grid[g] < table.gamma_grid[pick])
      pick = g;
  }
  r.gamma_one_se = table.gamma_grid[pick];
  r.score_at_selected = table.mean(static_cast<Eigen::Index>(pick));
  return r;
}

double stability_proportion(const std::vector<double>& selections) {
  if (selections.empty()) throw ArgumentError("stability_proportion: no selections");
  std::map<double, int> counts;
  for (double s : selections) ++counts[s];
  int top = 0;
  for (const auto& [g, c] : counts) top = std::max(top, c);  // map order breaks ties toward smaller gamma
  return static_cast<double>(top) / static_cast<double>(selections.size());
}

Fitter default_fitter(const ModelSpec& templ, const EstimatorOptions& opt) {
  validate(templ);
  switch (templ.family()) {
    case Family::gaussian:
      return [](const Dataset& train, double gamma) {
        const Vec mean = train.x.colwise().mean().transpose();
        const Mat centered = train.x.rowwise() - mean.transpose();
        const Mat cov = centered.transpose() * centered / static_cast<double>(train.x.rows());
        return gaussian_fixed_point(train, gamma, GaussianParams{mean, cov.inverse()});
      };
    case Family::vmf:
      return [rule = opt.vmf_rule](const Dataset& train, double gamma) {
        const FitResult mle = vmf_mle(train);
        if (gamma == 0.0) return mle;
        return vmf_fixed_point(train, gamma, std::get<VmfParams>(mle.params.params), {}, rule);
      };
    case Family::mixture: {
      const int J = static_cast<int>(std::get<MixtureParams>(templ.params).weights.size());
      return [J](const Dataset& train, double gamma) {
        return nmm_fit(train, J, gamma, HomotopySchedule::linear(gamma, gamma > 0.0 ? 4 : 1));
      };
    }
    case Family::quartic:
      return [q0 = std::get<QuarticParams>(templ.params)](const Dataset& train, double gamma) {
        if (gamma == 0.0) return quartic_mle(train, q0);
        return quartic_fit(train, gamma);
      };
    case Family::fisher_bingham:
      return [templ, opt](const Dataset& train, double gamma) { return solve_moment_norm(templ, train, gamma, {}, opt); };
    case Family::poisson_regression:
      break;
  }
  throw ArgumentError("default_fitter: no gamma estimator for " + family_name(templ.family()));
}

namespace {

double residual_score(const ModelSpec& fit, const Dataset& held, const Validator& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < held.size(); ++i) s += estimating_function(fit, held.row(i), v.gamma0, v.estimator).squaredNorm();
  return s / static_cast<double>(held.size());
}

}  // namespace

std::pair<CvTable, SelectionResult> cv_select(const Dataset& data, const Fitter& fit,
                                              const std::vector<double>& gamma_grid, const Validator& validator, int K,
                                              Rng& rng) {
  if (gamma_grid.empty()) throw ArgumentError("cv_select: empty gamma grid");
  if (!(validator.gamma0 >= 0.0)) throw ArgumentError("cv_select: gamma0 must be >= 0");
  for (double g : gamma_grid)
    if (!(g >= 0.0)) throw ArgumentError("cv_select: grid values must be >= 0");
  if (!fit) throw ArgumentError("cv_select: no fitter");
  const auto folds = kfold_split(data.size(), K, rng);
  const auto G = gamma_grid.size();

  CvTable table;
  table.gamma_grid = gamma_grid;
  table.validator = validator.kind;
  table.gamma0 = validator.gamma0;
  table.fold_scores = Mat::Constant(K, static_cast<Eigen::Index>(G), std::numeric_limits<double>::quiet_NaN());
  if (validator.kind == ValidatorKind::ksd) table.bandwidth = validator.bandwidth ? *validator.bandwidth : median_bandwidth(data);

  for (int k = 0; k < K; ++k) {
    std::vector<std::size_t> train_rows, held_rows;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == k ? held_rows : train_rows).push_back(i);
    const Dataset train = data.subset(train_rows);
    const Dataset held = data.subset(held_rows);
    for (std::size_t g = 0; g < G; ++g) {
      double score = std::numeric_limits<double>::quiet_NaN();
      try {
        const FitResult f = fit(train, gamma_grid[g]);
        if (f.converged) {
          score = validator.kind == ValidatorKind::residual
                      ? residual_score(f.params, held, validator)
                      : ksd_ustat(held, f.params, validator.gamma0, KernelSpec{table.bandwidth}).statistic;
        }
      } catch (const Error&) {
      }
      if (std::isfinite(score)) table.fold_scores(k, static_cast<Eigen::Index>(g)) = score;
    }
  }

  table.mean = Vec::Constant(static_cast<Eigen::Index>(G), std::numeric_limits<double>::quiet_NaN());
  table.stderr_ = Vec::Zero(static_cast<Eigen::Index>(G));
  table.dropped.assign(G, false);
  for (std::size_t g = 0; g < G; ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    std::vector<double> vals;
    for (int k = 0; k < K; ++k)
      if (std::isfinite(table.fold_scores(k, gi))) vals.push_back(table.fold_scores(k, gi));
    const auto invalid = static_cast<std::size_t>(K) - vals.size();
    if (vals.empty() || static_cast<double>(invalid) > 0.2 * K) {
      table.dropped[g] = true;
      if (vals.empty()) continue;
    }
    const double m = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - m) * (v - m);
    table.mean(gi) = m;
    table.stderr_(gi) =
        vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1) / static_cast<double>(vals.size())) : 0.0;
  }
  return {table, one_se_rule(table)};
}

}  // namespace gstein
