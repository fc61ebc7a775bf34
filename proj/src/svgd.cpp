#include "gstein/svgd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gstein {

ParticleEnsemble init_ensemble(int M, const Vec& center, double scale, std::uint64_t seed) {
  if (M < 1) throw ArgumentError("ensemble needs at least one particle");
  ParticleEnsemble e;
  e.seed = seed;
  Rng rng(seed);
  std::normal_distribution<double> normal;
  e.positions.resize(M, center.size());
  for (int i = 0; i < M; ++i)
    for (Eigen::Index c = 0; c < center.size(); ++c) e.positions(i, c) = center(c) + scale * normal(rng);
  return e;
}

Vec TargetSpec::grad_log_u(const Vec& x, double gamma) const {
  Vec g;
  eval(x, gamma, &g);
  return g;
}

TargetSpec model_target(const ModelSpec& q) {
  if (q.spherical()) throw ArgumentError("svgd targets must be Euclidean");
  TargetSpec t;
  t.kind = TargetSpec::Kind::posterior;
  t.name = family_name(q.family());
  t.eval = [q](const Vec& x, double, Vec* grad) {
    const ModelEval e = evaluate(q, x);
    if (grad) *grad = e.score_x;
    return e.log_u;
  };
  return t;
}

Vec particle_weights(const Vec& log_u, double gamma, bool softmax) {
  const auto M = log_u.size();
  if (M < 1) throw ArgumentError("particle_weights: empty ensemble");
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  if (gamma == 0.0) return Vec::Constant(M, 1.0 / static_cast<double>(M));
  for (Eigen::Index j = 0; j < M; ++j)
    if (std::isnan(log_u(j))) throw EvaluationError("particle_weights: NaN log u", Vec::Constant(1, log_u(j)));
  Vec w(M);
  if (!softmax) {
    for (Eigen::Index j = 0; j < M; ++j) w(j) = guarded_exp(gamma * log_u(j)) / static_cast<double>(M);
    return w;
  }
  const double top = (gamma * log_u).maxCoeff();
  if (!std::isfinite(top)) throw DomainError("particle_weights: every particle has log u = -inf");
  for (Eigen::Index j = 0; j < M; ++j) w(j) = std::exp(gamma * log_u(j) - top);
  return w / w.sum();
}

namespace {

// Shared loop so gamma = 0 with weights 1/M reproduces the plain field bit for bit.
Mat weighted_velocity(const Mat& X, const Mat& S, const Vec& w, double g1, double h) {
  if (!(h > 0.0)) throw ArgumentError("bandwidth must be positive");
  const auto M = X.rows();
  const auto d = X.cols();
  if (S.rows() != M || S.cols() != d || w.size() != M) throw ArgumentError("velocity: shape mismatch");
  const double h2 = h * h;
  Mat V = Mat::Zero(M, d);
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index j = 0; j < M; ++j) {
      double r2 = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double r = X(j, c) - X(i, c);
        r2 += r * r;
      }
      const double k = std::exp(-r2 / (2.0 * h2));
      for (Eigen::Index c = 0; c < d; ++c)
        V(i, c) += w(j) * (g1 * k * S(j, c) - (X(j, c) - X(i, c)) * k / h2);
    }
  }
  return V;
}

void evaluate_ensemble(const Mat& X, const TargetSpec& target, double gamma, Vec& log_u, Mat* scores) {
  const auto M = X.rows();
  log_u.resize(M);
  if (scores) scores->resize(M, X.cols());
  Vec g;
  for (Eigen::Index i = 0; i < M; ++i) {
    const Vec x = X.row(i).transpose();
    log_u(i) = target.eval(x, gamma, scores ? &g : nullptr);
    if (scores) scores->row(i) = g.transpose();
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

}  // namespace

Mat svgd_velocity(const Mat& positions, const Mat& scores, double bandwidth) {
  const auto M = positions.rows();
  if (M < 1) throw ArgumentError("svgd_velocity: empty ensemble");
  return weighted_velocity(positions, scores, Vec::Constant(M, 1.0 / static_cast<double>(M)), 1.0, bandwidth);
}

Mat svgd_velocity(const ParticleEnsemble& ens, const TargetSpec& target, const KernelSpec& K) {
  Vec lu;
  Mat S;
  evaluate_ensemble(ens.positions, target, 0.0, lu, &S);
  return svgd_velocity(ens.positions, S, K.bandwidth);
}

Mat gamma_svgd_velocity(const Mat& positions, const Mat& scores, const Vec& log_u, double gamma, double bandwidth,
                        bool softmax) {
  return weighted_velocity(positions, scores, particle_weights(log_u, gamma, softmax), gamma + 1.0, bandwidth);
}

Mat gamma_svgd_velocity(const ParticleEnsemble& ens, const TargetSpec& target, double gamma, const KernelSpec& K,
                        bool softmax) {
  Vec lu;
  Mat S;
  evaluate_ensemble(ens.positions, target, gamma, lu, &S);
  return gamma_svgd_velocity(ens.positions, S, lu, gamma, K.bandwidth, softmax);
}

PoissonTargetValue poisson_gamma_log_target(const PoissonRegParams& alpha, const Mat& X, const Eigen::VectorXi& y,
                                            double gamma, bool include_log_factorial) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  const auto n = X.rows();
  const auto p = alpha.alpha.size();
  if (X.cols() + 1 != p) throw ArgumentError("poisson target: alpha must have one entry per covariate plus intercept");
  if (y.size() != n) throw ArgumentError("poisson target: response length mismatch");
  if (alpha.prior_variances.size() != p) throw ArgumentError("poisson target: prior variance length mismatch");
  PoissonTargetValue out;
  out.grad = Vec::Zero(p);
  const double g1 = gamma + 1.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) < 0) throw ArgumentError("poisson target: counts must be nonnegative");
    const double yi = static_cast<double>(y(i));
    const double lf = include_log_factorial ? std::lgamma(yi + 1.0) : 0.0;
    double z = alpha.alpha(0);
    for (Eigen::Index k = 1; k < p; ++k) z += alpha.alpha(k) * X(i, k - 1);
    double term = 0.0;
    double dz = 0.0;
    if (gamma == 0.0) {
      const double mu = guarded_exp(z, &out.clamped);
      term = yi * z - mu - lf;
      dz = yi - mu;
    } else {
      const double mu = guarded_exp(g1 * z, &out.clamped);
      double a = gamma * (yi * z - lf) - gamma / g1 * mu;
      if (a > kMaxExponent) {
        a = kMaxExponent;
        out.clamped = true;
      }
      // expm1 keeps the small-gamma limit accurate; the -1/gamma shift is constant in alpha.
      term = std::expm1(a) / gamma;
      dz = std::exp(a) * (yi - mu);
    }
    total += term;
    out.grad(0) += dz;
    for (Eigen::Index k = 1; k < p; ++k) out.grad(k) += dz * X(i, k - 1);
  }
  for (Eigen::Index k = 0; k < p; ++k) {
    total -= 0.5 * alpha.alpha(k) * alpha.alpha(k) / alpha.prior_variances(k);
    out.grad(k) -= alpha.alpha(k) / alpha.prior_variances(k);
  }
  out.log_u = total;
  return out;
}

TargetSpec poisson_target(const Vec& prior_variances, Mat X, Eigen::VectorXi y, bool include_log_factorial) {
  if ((prior_variances.array() <= 0.0).any()) throw ArgumentError("prior variances must be positive");
  TargetSpec t;
  t.kind = TargetSpec::Kind::gamma_loss;
  t.name = "poisson_regression";
  t.eval = [pv = prior_variances, X = std::move(X), y = std::move(y), include_log_factorial](
               const Vec& a, double gamma, Vec* grad) {
    PoissonTargetValue v = poisson_gamma_log_target(PoissonRegParams{a, pv}, X, y, gamma, include_log_factorial);
    if (grad) *grad = std::move(v.grad);
    return v.log_u;
  };
  return t;
}

Vec poisson_map(const Mat& X, const Eigen::VectorXi& y, const Vec& prior_variances, int max_iter, double tol) {
  const auto n = X.rows();
  const auto p = X.cols() + 1;
  if (n == 0) throw ArgumentError("poisson_map: empty data");
  if (prior_variances.size() != p) throw ArgumentError("poisson_map: prior variance length mismatch");
  Mat Xt(n, p);
  Xt.col(0).setOnes();
  Xt.rightCols(p - 1) = X;
  const Vec yd = y.cast<double>();
  const Vec prec = prior_variances.cwiseInverse();
  auto objective = [&](const Vec& a) {
    const Vec z = Xt * a;
    double v = yd.dot(z) - 0.5 * a.dot(prec.asDiagonal() * a);
    for (Eigen::Index i = 0; i < n; ++i) v -= guarded_exp(z(i));
    return v;
  };
  Vec a = Vec::Zero(p);
  a(0) = std::log(yd.mean() + 0.5);
  double f = objective(a);
  for (int it = 0; it < max_iter; ++it) {
    const Vec z = Xt * a;
    Vec mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu(i) = guarded_exp(z(i));
    const Vec g = Xt.transpose() * (yd - mu) - prec.asDiagonal() * a;
    Mat H = Xt.transpose() * mu.asDiagonal() * Xt;
    H.diagonal() += prec;
    const Vec step = H.ldlt().solve(g);
    double t = 1.0;
    Vec next = a + step;
    double fn = objective(next);
    for (int k = 0; k < 30 && !(fn >= f); ++k) {
      t *= 0.5;
      next = a + t * step;
      fn = objective(next);
    }
    if (!(fn >= f)) break;
    const double moved = (next - a).norm();
    a = next;
    f = fn;
    if (moved < tol * (1.0 + a.norm())) break;
  }
  return a;
}

void SvgdConfig::validate() const {
  if (particles < 1) throw ArgumentError("svgd: particles must be >= 1");
  if (iterations < 0) throw ArgumentError("svgd: iterations must be >= 0");
  if (!(step > 0.0)) throw ArgumentError("svgd: step must be positive");
  if (!(gamma_target >= 0.0)) throw ArgumentError("svgd: gamma_target must be >= 0");
  if (!(anneal_fraction > 0.0 && anneal_fraction <= 1.0)) throw ArgumentError("svgd: anneal_fraction must lie in (0, 1]");
  if (!(rho >= 0.0 && rho < 1.0)) throw ArgumentError("svgd: rho must lie in [0, 1)");
  if (!(delta > 0.0)) throw ArgumentError("svgd: delta must be positive");
  if (max_halvings < 0) throw ArgumentError("svgd: max_halvings must be >= 0");
  if (!(guard_multiplier > 0.0) || !(guard_floor >= 0.0)) throw ArgumentError("svgd: invalid backtracking guard");
  if (projection_radius && !(*projection_radius > 0.0)) throw ArgumentError("svgd: projection radius must be positive");
  if (bandwidth_policy == BandwidthPolicy::frozen && !(frozen_bandwidth > 0.0))
    throw ArgumentError("svgd: frozen bandwidth must be positive");
}

double SvgdConfig::gamma_at(int t) const {
  if (iterations == 0 || t >= iterations) return gamma_target;
  if (t <= 0) return 0.0;
  const double ramp = anneal_fraction * static_cast<double>(iterations);
  return gamma_target * std::min(1.0, static_cast<double>(t) / ramp);
}

SvgdResult run_svgd(const SvgdConfig& cfg, const TargetSpec& target, ParticleEnsemble init) {
  cfg.validate();
  if (!target.eval) throw ArgumentError("svgd: target has no evaluator");
  if (init.size() < 1) throw ArgumentError("svgd: empty ensemble");
  if (!init.positions.allFinite()) throw ArgumentError("svgd: initial particles must be finite");
  SvgdResult res;
  res.ensemble = std::move(init);
  Mat& X = res.ensemble.positions;
  const auto M = X.rows();
  const auto d = X.cols();
  Vec acc = Vec::Zero(d);  // per-coordinate running mean of squared velocities
  double guard = std::numeric_limits<double>::infinity();
  Vec lu, lu_new;
  Mat S;

  auto project = [&](Mat& Y) {
    if (!cfg.projection_radius) return;
    for (Eigen::Index i = 0; i < M; ++i) {
      const double nrm = Y.row(i).norm();
      if (nrm > *cfg.projection_radius) Y.row(i) *= *cfg.projection_radius / nrm;
    }
  };

  for (int t = 0; t < cfg.iterations; ++t) {
    const double g = cfg.gamma_at(t + 1);
    evaluate_ensemble(X, target, g, lu, &S);
    const double h = cfg.bandwidth_policy == BandwidthPolicy::frozen || M < 2 ? cfg.frozen_bandwidth
                                                                               : median_bandwidth(X);
    const Mat V = gamma_svgd_velocity(X, S, lu, g, h, cfg.softmax_weights);
    if (!V.allFinite()) {
      res.aborted = true;
      res.message = "non-finite velocity at iteration " + std::to_string(t);
      return res;
    }
    acc = cfg.rho * acc + (1.0 - cfg.rho) * V.array().square().colwise().mean().matrix().transpose();
    Mat P = V;
    for (Eigen::Index c = 0; c < d; ++c) P.col(c) /= std::sqrt(acc(c)) + cfg.delta;

    double step = cfg.step;
    int halvings = 0;
    Mat Xn;
    bool accepted = false;
    for (;;) {
      Xn = X + step * P;
      project(Xn);
      bool finite = Xn.allFinite();
      if (finite) {
        evaluate_ensemble(Xn, target, g, lu_new, nullptr);
        finite = lu_new.allFinite();
      }
      bool ok = finite;
      if (ok && std::isfinite(guard))
        for (Eigen::Index i = 0; i < M; ++i)
          if (lu_new(i) - lu(i) < -guard) ok = false;
      if (ok || (finite && halvings >= cfg.max_halvings)) {
        accepted = true;
        break;
      }
      if (halvings >= cfg.max_halvings) break;
      step *= 0.5;
      ++halvings;
    }
    if (!accepted) {
      res.aborted = true;
      res.message = "non-finite particles persisted after backtracking at iteration " + std::to_string(t);
      return res;
    }
    std::vector<double> change(static_cast<std::size_t>(M));
    for (Eigen::Index i = 0; i < M; ++i) change[static_cast<std::size_t>(i)] = std::abs(lu_new(i) - lu(i));
    guard = std::max(cfg.guard_multiplier * median_of(std::move(change)), cfg.guard_floor);
    X = std::move(Xn);
    ++res.ensemble.step_count;
    res.trace.push_back({t, g, h, step, halvings, lu_new.mean(), V.norm()});
  }
  return res;
}

}  // namespace gstein
