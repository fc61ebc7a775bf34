#include "gstein/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace gstein {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_nonempty(const Dataset& data) {
  if (data.size() == 0) throw ArgumentError("empty dataset");
}

void require_unit_rows(const Dataset& data) {
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    if (std::abs(data.x.row(i).norm() - 1.0) > 1e-8) throw DomainError("data row off the unit sphere");
  }
}

// Unweighted part of U_gamma at x; the weight is exp(gamma * log_u).
Vec estimating_core(const ModelSpec& model, const Vec& x, double gamma, const EstimatorOptions& opt,
                    double* log_u) {
  const double g1 = gamma + 1.0;
  switch (model.family()) {
    case Family::gaussian: {
      const auto& p = std::get<GaussianParams>(model.params);
      const auto d = p.mean.size();
      const Vec diff = p.mean - x;
      const Vec s = p.precision * diff;
      *log_u = -0.5 * diff.dot(s) + model.log_scale;
      Vec out(d + d * (d + 1) / 2);
      out.head(d) = g1 * (p.precision * s);
      Eigen::Index k = d;
      for (Eigen::Index c = 0; c < d; ++c) {
        for (Eigen::Index r = c; r < d; ++r, ++k) {
          out(k) = r == c ? g1 * s(r) * diff(r) - 1.0 : g1 * (s(r) * diff(c) + s(c) * diff(r));
        }
      }
      return out;
    }
    case Family::vmf: {
      const auto& p = std::get<VmfParams>(model.params);
      const auto d = p.mu.size();
      const double t = p.mu.dot(x);
      *log_u = p.kappa * t + model.log_scale;
      const double c = opt.vmf_rule == VmfKappaRule::displayed ? 1.0 : g1;
      Vec out(d + 1);
      out.head(d) = x - p.mu * t;
      out(d) = static_cast<double>(d - 1) * t - c * p.kappa * (1.0 - t * t);
      return out;
    }
    case Family::fisher_bingham: {
      const auto& p = std::get<FisherBinghamParams>(model.params);
      const auto d = p.xi.size();
      const Vec Bx = p.B * x;
      const double xBx = x.dot(Bx);
      const double xix = p.xi.dot(x);
      *log_u = xix + xBx + model.log_scale;
      const double lin = xix + 2.0 * xBx;
      const double dd = static_cast<double>(d);
      Vec out(d + d * (d + 1) / 2);
      for (Eigen::Index i = 0; i < d; ++i)
        out(i) = -(dd - 1.0) * x(i) + g1 * (p.xi(i) + 2.0 * Bx(i) - x(i) * lin);
      Eigen::Index k = d;
      for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index l = j; l < d; ++l, ++k) {
          const double xx = x(j) * x(l);
          out(k) = (j == l ? 2.0 : 0.0) - 2.0 * dd * xx +
                   g1 * (x(j) * p.xi(l) + x(l) * p.xi(j) + 2.0 * (x(j) * Bx(l) + x(l) * Bx(j)) - 2.0 * xx * lin);
        }
      }
      return out;
    }
    case Family::mixture: {
      const auto& p = std::get<MixtureParams>(model.params);
      const auto J = p.weights.size();
      const auto d = x.size();
      const MixtureTerms t = mixture_terms(p, x);
      *log_u = t.log_p + model.log_scale;
      const double dd = static_cast<double>(d);
      Vec out(J + J * d + J);
      for (Eigen::Index j = 0; j < J; ++j) {
        const Vec sj = t.comp_scores.col(j);
        out(j) = g1 * t.score.dot(sj) - dd * p.precisions(j);
        for (Eigen::Index k = 0; k < d; ++k) out(J + j * d + k) = t.resp(j) * (gamma * t.score(k) + sj(k));
        out(J + J * d + j) = t.resp(j) * ((sj + gamma * t.score).dot(p.means[j] - x) - dd);
      }
      return out;
    }
    case Family::quartic: {
      const auto& q = std::get<QuarticParams>(model.params);
      const double v = x(0);
      const double v2 = v * v;
      *log_u = q.theta1 * v + q.theta2 * v2 + q.theta3 * v2 * v2 + model.log_scale;
      const double s = q.theta1 + 2.0 * q.theta2 * v + 4.0 * q.theta3 * v2 * v;
      Vec out(3);
      out << g1 * s, g1 * s * 2.0 * v + 2.0, g1 * s * 4.0 * v2 * v + 12.0 * v2;
      return out;
    }
    case Family::poisson_regression:
      break;
  }
  throw ArgumentError("estimating functions are not defined for " + family_name(model.family()));
}

std::vector<std::string> block_labels(const ModelSpec& model) {
  std::vector<std::string> out;
  auto idx = [](const std::string& base, long a) { return base + "[" + std::to_string(a) + "]"; };
  auto idx2 = [](const std::string& base, long a, long b) {
    return base + "[" + std::to_string(a) + "," + std::to_string(b) + "]";
  };
  switch (model.family()) {
    case Family::gaussian: {
      const long d = model.dim();
      for (long a = 0; a < d; ++a) out.push_back(idx("mean", a));
      for (long c = 0; c < d; ++c)
        for (long r = c; r < d; ++r) out.push_back(idx2("precision", r, c));
      break;
    }
    case Family::vmf: {
      const long d = model.dim();
      for (long a = 0; a < d; ++a) out.push_back(idx("mu", a));
      out.push_back("kappa");
      break;
    }
    case Family::fisher_bingham: {
      const long d = model.dim();
      for (long a = 0; a < d; ++a) out.push_back(idx("xi", a));
      for (long j = 0; j < d; ++j)
        for (long l = j; l < d; ++l) out.push_back(idx2("B", j, l));
      break;
    }
    case Family::mixture: {
      const auto& p = std::get<MixtureParams>(model.params);
      const long J = p.weights.size();
      const long d = model.dim();
      for (long j = 0; j < J; ++j) out.push_back(idx("pi", j));
      for (long j = 0; j < J; ++j)
        for (long k = 0; k < d; ++k) out.push_back(idx2("mu", j, k));
      for (long j = 0; j < J; ++j) out.push_back(idx("lambda", j));
      break;
    }
    case Family::quartic:
      out = {"theta1", "theta2", "theta3"};
      break;
    default:
      break;
  }
  return out;
}

bool self_normalized_family(Family f) { return f == Family::vmf || f == Family::fisher_bingham; }

struct Weighted {
  Mat cores;  // m x n
  Vec log_u;
};

Weighted all_cores(const ModelSpec& model, const Dataset& data, double gamma, const EstimatorOptions& opt) {
  require_nonempty(data);
  if (data.dim() != model.dim()) throw ArgumentError("data dimension does not match the model");
  if (model.spherical()) require_unit_rows(data);
  Weighted w;
  const auto n = data.x.rows();
  w.log_u.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double lu = 0.0;
    const Vec c = estimating_core(model, data.x.row(i).transpose(), gamma, opt, &lu);
    if (i == 0) w.cores.resize(c.size(), n);
    w.cores.col(i) = c;
    w.log_u(i) = lu;
  }
  return w;
}

Vec stabilized_weights(const Vec& log_u, double gamma) {
  if (gamma == 0.0) return Vec::Ones(log_u.size());
  const double m = log_u.maxCoeff();
  return (gamma * (log_u.array() - m)).exp();
}

// Chi-square(d) median (Wilson-Hilferty).
double chi2_median(double d) {
  const double a = 1.0 - 2.0 / (9.0 * d);
  return d * a * a * a;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

HomotopySchedule HomotopySchedule::linear(double target, int stages, int inner_iterations) {
  if (stages < 1) throw ArgumentError("homotopy: stages must be >= 1");
  HomotopySchedule s;
  s.inner_iterations = inner_iterations;
  for (int k = 0; k <= stages; ++k) s.gamma_path.push_back(target * k / stages);
  if (target == 0.0) s.gamma_path = {0.0};
  s.validate();
  return s;
}

void HomotopySchedule::validate() const {
  if (gamma_path.empty() || gamma_path.front() != 0.0) throw ArgumentError("homotopy path must start at 0");
  for (std::size_t k = 1; k < gamma_path.size(); ++k)
    if (!(gamma_path[k] > gamma_path[k - 1])) throw ArgumentError("homotopy path must be strictly increasing");
  if (inner_iterations < 1) throw ArgumentError("homotopy: inner_iterations must be >= 1");
}

Vec pack_params(const ModelSpec& model) {
  switch (model.family()) {
    case Family::gaussian: {
      const auto& p = std::get<GaussianParams>(model.params);
      const auto d = p.mean.size();
      Vec th(d + d * (d + 1) / 2);
      th.head(d) = p.mean;
      Eigen::Index k = d;
      for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index r = c; r < d; ++r) th(k++) = p.precision(r, c);
      return th;
    }
    case Family::vmf: {
      const auto& p = std::get<VmfParams>(model.params);
      Vec th(p.mu.size() + 1);
      th << p.mu, p.kappa;
      return th;
    }
    case Family::fisher_bingham: {
      const auto& p = std::get<FisherBinghamParams>(model.params);
      const auto d = p.xi.size();
      Vec th(d + d * (d + 1) / 2 - 1);
      th.head(d) = p.xi;
      Eigen::Index k = d;
      for (Eigen::Index a = 0; a + 1 < d; ++a) th(k++) = p.B(a, a);
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b) th(k++) = p.B(a, b);
      return th;
    }
    case Family::mixture: {
      const auto& p = std::get<MixtureParams>(model.params);
      const auto J = p.weights.size();
      const auto d = p.means.front().size();
      Vec th(J - 1 + J * d + J);
      for (Eigen::Index j = 0; j + 1 < J; ++j) th(j) = std::log(p.weights(j) / p.weights(J - 1));
      for (Eigen::Index j = 0; j < J; ++j) th.segment(J - 1 + j * d, d) = p.means[j];
      th.tail(J) = p.precisions.array().log();
      return th;
    }
    case Family::quartic: {
      const auto& q = std::get<QuarticParams>(model.params);
      Vec th(3);
      th << q.theta1, q.theta2, q.theta3;
      return th;
    }
    case Family::poisson_regression:
      return std::get<PoissonRegParams>(model.params).alpha;
  }
  return {};
}

ModelSpec unpack_params(const ModelSpec& templ, const Vec& th) {
  ModelSpec out = templ;
  switch (templ.family()) {
    case Family::gaussian: {
      const auto d = std::get<GaussianParams>(templ.params).mean.size();
      GaussianParams p{th.head(d), Mat(d, d)};
      Eigen::Index k = d;
      for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index r = c; r < d; ++r) p.precision(r, c) = p.precision(c, r) = th(k++);
      out.params = p;
      break;
    }
    case Family::vmf: {
      const auto d = std::get<VmfParams>(templ.params).mu.size();
      Vec mu = th.head(d);
      const double nrm = mu.norm();
      if (!(nrm > 0.0)) throw ArgumentError("vmf: zero direction");
      out.params = VmfParams{mu / nrm, std::abs(th(d))};
      break;
    }
    case Family::fisher_bingham: {
      const auto d = std::get<FisherBinghamParams>(templ.params).xi.size();
      FisherBinghamParams p{th.head(d), Mat::Zero(d, d)};
      Eigen::Index k = d;
      double tr = 0.0;
      for (Eigen::Index a = 0; a + 1 < d; ++a) {
        p.B(a, a) = th(k++);
        tr += p.B(a, a);
      }
      p.B(d - 1, d - 1) = -tr;
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b) p.B(a, b) = p.B(b, a) = th(k++);
      out.params = p;
      break;
    }
    case Family::mixture: {
      const auto& t = std::get<MixtureParams>(templ.params);
      const auto J = t.weights.size();
      const auto d = t.means.front().size();
      MixtureParams p;
      // Logits are clipped so no weight underflows to zero.
      Vec logits = Vec::Zero(J);
      logits.head(J - 1) = th.head(J - 1).cwiseMax(-50.0).cwiseMin(50.0);
      const double m = logits.maxCoeff();
      p.weights = (logits.array() - m).exp();
      p.weights /= p.weights.sum();
      for (Eigen::Index j = 0; j < J; ++j) p.means.push_back(th.segment(J - 1 + j * d, d));
      p.precisions = th.tail(J).array().exp();
      out.params = p;
      break;
    }
    case Family::quartic:
      out.params = QuarticParams{th(0), th(1), th(2)};
      break;
    case Family::poisson_regression: {
      auto p = std::get<PoissonRegParams>(templ.params);
      p.alpha = th;
      out.params = p;
      break;
    }
  }
  return out;
}

Vec estimating_function(const ModelSpec& model, const Vec& x, double gamma, const EstimatorOptions& opt) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  double lu = 0.0;
  const Vec c = estimating_core(model, x, gamma, opt, &lu);
  return gamma == 0.0 ? c : Vec(guarded_exp(gamma * lu) * c);
}

MomentVector estimating_mean(const ModelSpec& model, const Dataset& data, double gamma,
                             const EstimatorOptions& opt) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  const Weighted w = all_cores(model, data, gamma, opt);
  MomentVector mv;
  mv.block_index = block_labels(model);
  if (self_normalized_family(model.family())) {
    const Vec wt = stabilized_weights(w.log_u, gamma);
    mv.values = w.cores * wt / wt.sum();
  } else {
    Vec wt(w.log_u.size());
    for (Eigen::Index i = 0; i < wt.size(); ++i) wt(i) = gamma == 0.0 ? 1.0 : guarded_exp(gamma * w.log_u(i));
    mv.values = w.cores * wt / static_cast<double>(wt.size());
  }
  return mv;
}

Vec normalized_estimating_mean(const ModelSpec& model, const Dataset& data, double gamma,
                               const EstimatorOptions& opt) {
  const Weighted w = all_cores(model, data, gamma, opt);
  const Vec wt = stabilized_weights(w.log_u, gamma);
  return w.cores * wt / wt.sum();
}

FitResult gaussian_fixed_point(const Dataset& data, double gamma, const GaussianParams& init,
                               const FixedPointConfig& cfg) {
  require_nonempty(data);
  const auto n = data.x.rows();
  const auto d = data.x.cols();
  if (n <= d) throw ArgumentError("gaussian_fixed_point: need n > d");
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  ModelSpec model = make_gaussian(init.mean, init.precision);
  FitResult res;
  Vec mu = init.mean;
  Mat cov = init.precision.inverse();
  double eta = 1.0;
  double prev_step = kInf;
  Vec log_u(n);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Mat prec = cov.inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec diff = data.x.row(i).transpose() - mu;
      log_u(i) = -0.5 * diff.dot(prec * diff) + model.log_scale;
    }
    const Vec w = stabilized_weights(log_u, gamma);
    const double sw = w.sum();
    const Vec mu_new = data.x.transpose() * w / sw;
    const Mat centered = data.x.rowwise() - mu_new.transpose();
    Mat cov_new = (gamma + 1.0) * (centered.transpose() * w.asDiagonal() * centered) / sw;
    cov_new = 0.5 * (cov_new + cov_new.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(cov_new, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 1e-12)) {
      cov_new += 1e-8 * Mat::Identity(d, d);
      if (std::find(res.flags.begin(), res.flags.end(), "regularized") == res.flags.end())
        res.flags.push_back("regularized");
    }
    const Vec mu_step = mu_new - mu;
    const Mat cov_step = cov_new - cov;
    const double step = std::max(mu_step.cwiseAbs().maxCoeff(), cov_step.cwiseAbs().maxCoeff());
    if (step > prev_step && eta > 1.0 / 64.0) eta *= 0.5;  // oscillation guard
    prev_step = step;
    mu += eta * mu_step;
    cov += eta * cov_step;
    res.iterations = it;
    res.final_residual = step;
    if (cfg.keep_trace) {
      Vec snap(d + d * d);
      snap << mu, cov.reshaped();
      res.trace.push_back(snap);
    }
    if (step < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  Mat prec = cov.inverse();
  prec = 0.5 * (prec + prec.transpose());
  res.params = ModelSpec{GaussianParams{mu, prec}};
  return res;
}

FitResult vmf_fixed_point(const Dataset& data, double gamma, const VmfParams& init, const FixedPointConfig& cfg,
                          VmfKappaRule rule) {
  require_nonempty(data);
  require_unit_rows(data);
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  validate(ModelSpec{init});
  const auto n = data.x.rows();
  const double dm1 = static_cast<double>(data.x.cols() - 1);
  const double c = rule == VmfKappaRule::displayed ? 1.0 : gamma + 1.0;
  Vec mu = init.mu;
  double kappa = init.kappa;
  double eta = 1.0;
  double prev_step = kInf;
  FitResult res;
  Vec t(n);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    t = data.x * mu;
    const Vec w = stabilized_weights(kappa * t, gamma);
    const double sw = w.sum();
    const Vec rt = data.x.transpose() * w / sw;
    const double rn = rt.norm();
    if (rn < 1e-12) throw DomainError("vmf_fixed_point: weighted resultant vanishes, direction undefined");
    const double m1 = w.dot(t) / sw;
    const double m2 = w.dot(t.cwiseProduct(t)) / sw;
    if (m2 >= 1.0 - 1e-10) throw DomainError("vmf_fixed_point: degenerate concentration (all points identical)");
    const Vec mu_new = rt / rn;
    const double kappa_new = std::clamp(dm1 * m1 / (c * (1.0 - m2)), 0.0, kKappaMax);
    const double step = std::max((mu_new - mu).norm(), std::abs(kappa_new - kappa));
    if (step > prev_step && eta > 1.0 / 64.0) eta *= 0.5;
    prev_step = step;
    mu = (mu + eta * (mu_new - mu)).normalized();
    kappa += eta * (kappa_new - kappa);
    res.iterations = it;
    res.final_residual = step;
    if (cfg.keep_trace) {
      Vec snap(mu.size() + 1);
      snap << mu, kappa;
      res.trace.push_back(snap);
    }
    if (step < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  if (kappa >= kKappaMax) res.flags.push_back("kappa_at_max");
  res.params = ModelSpec{VmfParams{mu, kappa}};
  return res;
}

double bessel_ratio(double d, double kappa) {
  if (kappa <= 0.0) return 0.0;
  const double nu = d / 2.0 - 1.0;
  // I_{nu+1}/I_nu = 1 / (b1 + 1 / (b2 + ...)), b_k = 2 (nu + k) / kappa; modified Lentz.
  constexpr double tiny = 1e-300;
  double f = 2.0 * (nu + 1.0) / kappa;
  double C = f;
  double D = 0.0;
  for (int k = 2; k < 100000; ++k) {
    const double b = 2.0 * (nu + k) / kappa;
    D = b + D;
    if (D == 0.0) D = tiny;
    C = b + 1.0 / C;
    if (C == 0.0) C = tiny;
    D = 1.0 / D;
    const double delta = C * D;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

FitResult vmf_mle(const Dataset& data) {
  require_nonempty(data);
  require_unit_rows(data);
  const auto n = static_cast<double>(data.x.rows());
  const double d = static_cast<double>(data.x.cols());
  const Vec R = data.x.colwise().sum().transpose();
  const double rbar = R.norm() / n;
  FitResult res;
  res.converged = true;
  Vec mu = R.norm() > 0.0 ? Vec(R / R.norm()) : Vec(Vec::Unit(data.x.cols(), 0));
  if (rbar < 1e-12) {
    res.params = ModelSpec{VmfParams{mu, 0.0}};
    return res;
  }
  if (rbar >= 1.0 - 1e-12) {
    res.flags.push_back("kappa_at_max");
    res.params = ModelSpec{VmfParams{mu, kKappaMax}};
    return res;
  }
  if (bessel_ratio(d, kKappaMax) <= rbar) {
    res.flags.push_back("kappa_at_max");
    res.params = ModelSpec{VmfParams{mu, kKappaMax}};
    return res;
  }
  // Safeguarded Newton on A_d(kappa) = rbar; A is increasing, so keep a bracket.
  double lo = 0.0, hi = kKappaMax;
  double k = std::clamp(rbar * (d - rbar * rbar) / (1.0 - rbar * rbar), 1e-8, kKappaMax);
  int it = 0;
  for (; it < 200; ++it) {
    const double A = bessel_ratio(d, k);
    const double g = A - rbar;
    if (g > 0.0) hi = k; else lo = k;
    const double dA = 1.0 - A * A - (d - 1.0) * A / k;
    double next = dA > 0.0 ? k - g / dA : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - k) < 1e-12 * std::max(1.0, k)) {
      k = next;
      break;
    }
    k = next;
  }
  res.iterations = it + 1;
  res.final_residual = std::abs(bessel_ratio(d, k) - rbar);
  res.params = ModelSpec{VmfParams{mu, k}};
  return res;
}

FitResult solve_moment_norm(const ModelSpec& init, const Dataset& data, double gamma, const MomentNormConfig& cfg,
                            const EstimatorOptions& opt) {
  require_nonempty(data);
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  const Vec th0 = pack_params(init);
  const Eigen::Index n_params = th0.size();
  const Eigen::Index n_eq = normalized_estimating_mean(init, data, gamma, opt).size();
  const bool quartic = init.family() == Family::quartic;
  auto moments = [&](const Vec& th) -> Vec {
    if (quartic && !(th(2) < 0.0)) return Vec::Constant(n_eq, kInf);
    try {
      const ModelSpec m = unpack_params(init, th);
      return normalized_estimating_mean(m, data, gamma, opt);
    } catch (const Error&) {
      return Vec::Constant(n_eq, kInf);
    }
  };
  auto objective = [&](const Vec& th) {
    const Vec u = moments(th);
    const double v = u.squaredNorm();
    return std::isfinite(v) ? v : kInf;
  };
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal;
  auto jitter = [&]() {
    Vec start = th0;
    for (Eigen::Index k = 0; k < n_params; ++k)
      start(k) += cfg.restart_scale * std::max(1.0, std::abs(th0(k))) * normal(rng);
    if (quartic && !(start(2) < 0.0)) start(2) = th0(2);
    return start;
  };
  Vec best_x = th0;
  double best_value = kInf;
  int total_iter = 0;
  if (cfg.solver == MomentSolver::levenberg_marquardt) {
    for (int r = 0; r <= std::max(0, cfg.restarts); ++r) {
      const Vec start = r == 0 ? th0 : jitter();
      if (!moments(start).allFinite()) continue;
      const LeastSquaresResult ls = least_squares(moments, start, cfg.lm);
      total_iter += ls.iterations;
      if (ls.cost < best_value) {
        best_value = ls.cost;
        best_x = ls.x;
      }
      if (ls.converged) break;
    }
  } else {
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
      const NelderMeadResult nm = nelder_mead(objective, r == 0 ? th0 : jitter(), cfg.nm);
      total_iter += nm.iterations;
      if (nm.value < best_value) {
        best_value = nm.value;
        best_x = nm.x;
      }
    }
    // Polish from the best point with a fresh simplex.
    NelderMeadConfig polish = cfg.nm;
    polish.initial_step = std::max(1e-4, 0.1 * cfg.nm.initial_step);
    const NelderMeadResult nm = nelder_mead(objective, best_x, polish);
    total_iter += nm.iterations;
    if (nm.value <= best_value) {
      best_value = nm.value;
      best_x = nm.x;
    }
  }
  if (!std::isfinite(best_value)) throw ConvergenceError("solve_moment_norm: no finite objective value found");
  const NelderMeadResult best{best_x, best_value, total_iter, true};

  FitResult res;
  res.iterations = total_iter;
  const Vec u = moments(best.x);
  if (n_eq == n_params) {
    res.final_residual = u.norm();
    res.converged = std::isfinite(res.final_residual) && res.final_residual < 1e2 * cfg.tol;
  } else {
    // Overdetermined: stationarity of |U|^2 via J'U.
    const Mat J = fd_jacobian(moments, best.x);
    const Vec g = J.transpose() * u;
    res.final_residual = g.norm();
    res.converged = std::isfinite(res.final_residual) && res.final_residual < 1e2 * cfg.tol * (1.0 + J.norm());
  }
  res.params = unpack_params(init, best.x);
  if (init.family() == Family::mixture) {
    auto& p = std::get<MixtureParams>(res.params.params);
    p.weights /= p.weights.sum();
  }
  return res;
}

MixtureParams nmm_initialize(const Dataset& data, int J, const NmmInit& init) {
  require_nonempty(data);
  if (J < 1) throw ArgumentError("nmm: J must be >= 1");
  const auto n = data.x.rows();
  const auto d = data.x.cols();
  if (n < J) throw ArgumentError("nmm: fewer observations than components");
  const auto keep = std::max<Eigen::Index>(J, static_cast<Eigen::Index>(std::ceil((1.0 - init.trim_fraction) * n)));
  Rng rng(init.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  std::vector<Vec> best_centers;
  double best_cost = kInf;
  int failures = 0;
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  constexpr int kStarts = 10;
  for (int start = 0; start < kStarts; ++start) {
    std::vector<Vec> centers;
    for (int j = 0; j < J; ++j) centers.push_back(data.x.row(pick(rng)).transpose());
    bool empty = false;
    double cost = kInf;
    for (int it = 0; it < 100; ++it) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double bd = kInf;
        for (int j = 0; j < J; ++j) {
          const double dd = (data.x.row(i).transpose() - centers[j]).squaredNorm();
          if (dd < bd) {
            bd = dd;
            assign[i] = j;
          }
        }
        dist[i] = bd;
      }
      std::iota(order.begin(), order.end(), 0);
      std::nth_element(order.begin(), order.begin() + (keep - 1), order.end(),
                       [&](Eigen::Index a, Eigen::Index b) { return dist[a] < dist[b]; });
      std::vector<Vec> sums(J, Vec::Zero(d));
      std::vector<int> counts(J, 0);
      cost = 0.0;
      for (Eigen::Index k = 0; k < keep; ++k) {
        const Eigen::Index i = order[k];
        sums[assign[i]] += data.x.row(i).transpose();
        ++counts[assign[i]];
        cost += dist[i];
      }
      double moved = 0.0;
      for (int j = 0; j < J; ++j) {
        if (counts[j] == 0) {
          empty = true;
          break;
        }
        const Vec c = sums[j] / counts[j];
        moved = std::max(moved, (c - centers[j]).norm());
        centers[j] = c;
      }
      if (empty || moved < 1e-10) break;
    }
    if (empty) {
      if (++failures > init.max_reseeds) throw ConvergenceError("nmm_initialize: empty cluster after re-seeding");
      --start;
      continue;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_centers = centers;
    }
  }

  // Final assignment and robust spread on the retained points.
  for (Eigen::Index i = 0; i < n; ++i) {
    double bd = kInf;
    for (int j = 0; j < J; ++j) {
      const double dd = (data.x.row(i).transpose() - best_centers[j]).squaredNorm();
      if (dd < bd) {
        bd = dd;
        assign[i] = j;
      }
    }
    dist[i] = bd;
  }
  std::iota(order.begin(), order.end(), 0);
  std::nth_element(order.begin(), order.begin() + (keep - 1), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return dist[a] < dist[b]; });
  std::vector<std::vector<double>> sq(J);
  for (Eigen::Index k = 0; k < keep; ++k) sq[assign[order[k]]].push_back(dist[order[k]]);
  MixtureParams out;
  out.weights.resize(J);
  out.precisions.resize(J);
  const double med = chi2_median(static_cast<double>(d));
  for (int j = 0; j < J; ++j) {
    out.means.push_back(best_centers[j]);
    out.weights(j) = static_cast<double>(sq[j].size()) / static_cast<double>(keep);
    const double var = std::max(median_of(sq[j]) / med, 1e-6);
    out.precisions(j) = 1.0 / var;
  }
  return out;
}

FitResult nmm_fit_from(const Dataset& data, const MixtureParams& start, const HomotopySchedule& schedule,
                       const MomentNormConfig& cfg) {
  schedule.validate();
  ModelSpec current{start};
  validate(current);
  FitResult res;
  for (std::size_t k = 0; k < schedule.gamma_path.size(); ++k) {
    const bool last = k + 1 == schedule.gamma_path.size();
    // The gamma = 0 equations are not robust; on a longer path the robust
    // start itself stands in for that stage.
    if (!last && schedule.gamma_path[k] == 0.0) {
      res.trace.push_back(pack_params(current));
      continue;
    }
    MomentNormConfig stage = cfg;
    if (!last) {
      stage.restarts = cfg.solver == MomentSolver::levenberg_marquardt ? 0 : 1;
      stage.nm.max_iter = schedule.inner_iterations;
      stage.lm.max_iter = std::min(cfg.lm.max_iter, schedule.inner_iterations);
    }
    const FitResult f = solve_moment_norm(current, data, schedule.gamma_path[k], stage);
    current = f.params;
    res.iterations += f.iterations;
    res.trace.push_back(pack_params(current));
    if (last) {
      res.converged = f.converged;
      res.final_residual = f.final_residual;
    }
  }
  res.params = current;
  return res;
}

FitResult nmm_fit(const Dataset& data, int J, double gamma_target, const HomotopySchedule& schedule,
                  const NmmInit& init, const MomentNormConfig& cfg) {
  const auto n = data.size();
  const std::size_t n_params = static_cast<std::size_t>(J) * (data.dim() + 2) - 1;
  if (n < 10 * n_params) throw ArgumentError("nmm_fit: need n >= 10 x parameter count");
  if (schedule.gamma_path.empty() || std::abs(schedule.gamma_path.back() - gamma_target) > 1e-12)
    throw ArgumentError("nmm_fit: homotopy path must end at the target gamma");
  return nmm_fit_from(data, nmm_initialize(data, J, init), schedule, cfg);
}

FitResult nmm_em_mle(const Dataset& data, const MixtureParams& init, double tol, int max_iter) {
  require_nonempty(data);
  MixtureParams p = init;
  validate(ModelSpec{p});
  const auto n = data.x.rows();
  const auto d = data.x.cols();
  const auto J = p.weights.size();
  FitResult res;
  Mat R(n, J);
  double prev_ll = -kInf;
  for (int it = 1; it <= max_iter; ++it) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const MixtureTerms t = mixture_terms(p, data.x.row(i).transpose());
      R.row(i) = t.resp.transpose();
      ll += t.log_p;
    }
    res.trace.push_back(Vec::Constant(1, ll));
    if (ll < prev_ll - 1e-9 * std::abs(prev_ll) &&
        std::find(res.flags.begin(), res.flags.end(), "loglik_decrease") == res.flags.end())
      res.flags.push_back("loglik_decrease");
    res.iterations = it;
    if (std::abs(ll - prev_ll) < tol * (1.0 + std::abs(ll))) {
      res.converged = true;
      res.final_residual = std::abs(ll - prev_ll);
      break;
    }
    prev_ll = ll;
    for (Eigen::Index j = 0; j < J; ++j) {
      const double nj = R.col(j).sum();
      if (nj <= 0.0) continue;
      p.weights(j) = nj / static_cast<double>(n);
      p.means[j] = data.x.transpose() * R.col(j) / nj;
      double ss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) ss += R(i, j) * (data.x.row(i).transpose() - p.means[j]).squaredNorm();
      double var = ss / (static_cast<double>(d) * nj);
      if (var < 1e-6) {
        var = 1e-6;
        if (std::find(res.flags.begin(), res.flags.end(), "variance_floor") == res.flags.end())
          res.flags.push_back("variance_floor");
      }
      p.precisions(j) = 1.0 / var;
    }
    p.weights /= p.weights.sum();
  }
  res.params = ModelSpec{p};
  return res;
}

double quartic_log_normalizer(const QuarticParams& q) {
  const auto [lo, hi] = quartic_support(q);
  const QuadratureGrid g = uniform_grid_1d(lo, hi, 4001);
  Vec lv(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double v = g.nodes(0, i);
    const double v2 = v * v;
    lv(i) = q.theta1 * v + q.theta2 * v2 + q.theta3 * v2 * v2;
  }
  double log_z = 0.0;
  normalize_log_values(lv, g, &log_z);
  return log_z;
}

std::vector<QuarticParams> default_quartic_starts() { return {{0.0, 0.0, -0.1}, {0.0, 1.0, -1.0}, {0.0, 4.0, -2.0}}; }

FitResult quartic_fit(const Dataset& data, double gamma, const std::vector<QuarticParams>& starts,
                      const MomentNormConfig& cfg) {
  if (starts.empty()) throw ArgumentError("quartic_fit: no starting points");
  std::optional<FitResult> best;
  int iterations = 0;
  for (const auto& s : starts) {
    FitResult f;
    try {
      f = solve_moment_norm(ModelSpec{s}, data, gamma, cfg);
    } catch (const ConvergenceError&) {
      continue;
    }
    iterations += f.iterations;
    if (f.converged) {
      f.iterations = iterations;
      return f;
    }
    if (!best || f.final_residual < best->final_residual) best = f;
  }
  if (!best) throw ConvergenceError("quartic_fit: no start produced a finite objective");
  best->iterations = iterations;
  return *best;
}

FitResult quartic_mle(const Dataset& data, const QuarticParams& init, const NelderMeadConfig& nm) {
  require_nonempty(data);
  if (data.dim() != 1) throw ArgumentError("quartic_mle: data must be one-dimensional");
  const double m1 = data.x.col(0).mean();
  const double m2 = data.x.col(0).array().square().mean();
  const double m4 = data.x.col(0).array().pow(4).mean();
  // Negative mean log-likelihood in (theta1, theta2, log(-theta3)).
  auto objective = [&](const Vec& z) {
    const QuarticParams q{z(0), z(1), -std::exp(z(2))};
    if (!std::isfinite(q.theta3) || q.theta3 == 0.0) return kInf;
    try {
      return -(q.theta1 * m1 + q.theta2 * m2 + q.theta3 * m4) + quartic_log_normalizer(q);
    } catch (const Error&) {
      return kInf;
    }
  };
  Vec z0(3);
  z0 << init.theta1, init.theta2, std::log(-init.theta3);
  NelderMeadResult best = nelder_mead(objective, z0, nm);
  NelderMeadConfig polish = nm;
  polish.initial_step = 0.1 * nm.initial_step;
  const NelderMeadResult again = nelder_mead(objective, best.x, polish);
  if (again.value <= best.value) best = again;
  FitResult res;
  res.iterations = best.iterations;
  res.converged = best.converged;
  res.final_residual = best.value;
  res.params = ModelSpec{QuarticParams{best.x(0), best.x(1), -std::exp(best.x(2))}};
  return res;
}

Mat estimating_jacobian(const ModelSpec& model, const Dataset& data, double gamma) {
  const Vec th = pack_params(model);
  auto map = [&](const Vec& t) { return estimating_mean(unpack_params(model, t), data, gamma).values; };
  return fd_jacobian(map, th, 1e-5);
}

double jacobian_symmetry_diagnostic(const ModelSpec& model, const Dataset& data, double gamma) {
  const Mat J = estimating_jacobian(model, data, gamma);
  if (J.rows() != J.cols()) throw ArgumentError("jacobian_symmetry_diagnostic: system is not square");
  return (J - J.transpose()).norm() / J.norm();
}

namespace {

// d log u / d theta in packed coordinates.
Vec param_score_log_u(const ModelSpec& model, const Vec& x) {
  switch (model.family()) {
    case Family::gaussian: {
      const auto& p = std::get<GaussianParams>(model.params);
      const auto d = p.mean.size();
      const Vec diff = x - p.mean;
      Vec g(d + d * (d + 1) / 2);
      g.head(d) = p.precision * diff;
      Eigen::Index k = d;
      for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index r = c; r < d; ++r) g(k++) = r == c ? -0.5 * diff(r) * diff(r) : -diff(r) * diff(c);
      return g;
    }
    case Family::quartic: {
      const double v = x(0);
      Vec g(3);
      g << v, v * v, v * v * v * v;
      return g;
    }
    default: {
      const Vec th = pack_params(model);
      Vec g(th.size());
      for (Eigen::Index k = 0; k < th.size(); ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(th(k)));
        Vec a = th, b = th;
        a(k) += h;
        b(k) -= h;
        g(k) = (log_density(unpack_params(model, a), x) - log_density(unpack_params(model, b), x)) / (2.0 * h);
      }
      return g;
    }
  }
}

}  // namespace

Mat population_jacobian(const ModelSpec& model, double gamma, const QuadratureGrid& grid) {
  if (model.dim() != grid.dimension) throw ArgumentError("population_jacobian: grid dimension mismatch");
  const Vec p = normalized_density(model, grid);
  double log_z = 0.0;
  normalize_log_values(log_density_on_grid(model, grid), grid, &log_z);
  const auto m = pack_params(model).size();
  std::vector<Vec> scores;
  std::vector<Vec> us;
  Vec mean_score = Vec::Zero(m);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const Vec x = grid.nodes.col(i);
    const Vec s = param_score_log_u(model, x);
    mean_score += grid.weights(i) * p(i) * s;
    double lu = 0.0;
    const Vec core = estimating_core(model, x, gamma, {}, &lu);
    us.push_back(gamma == 0.0 ? core : Vec(std::exp(gamma * (lu - log_z)) * core));
    scores.push_back(s);
  }
  Mat J = Mat::Zero(m, us.front().size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    J += grid.weights(i) * p(i) * (scores[k] - mean_score) * us[k].transpose();
  }
  return J;
}

}  // namespace gstein
