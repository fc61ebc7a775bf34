#include "gstein/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace gstein {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kSphereTol = 1e-8;
constexpr std::size_t kMaxProposals = 1000000;

void check_on_sphere(const Vec& x) {
  const double r = x.norm();
  if (std::abs(r - 1.0) > kSphereTol) {
    std::ostringstream os;
    os << "point is off the unit sphere (|x| = " << r << ")";
    throw DomainError(os.str());
  }
}

double logsumexp(const Vec& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

}  // namespace

Family ModelSpec::family() const {
  return static_cast<Family>(params.index());
}

int ModelSpec::dim() const {
  return std::visit(
      overloaded{
          [](const GaussianParams& p) { return static_cast<int>(p.mean.size()); },
          [](const VmfParams& p) { return static_cast<int>(p.mu.size()); },
          [](const FisherBinghamParams& p) { return static_cast<int>(p.xi.size()); },
          [](const MixtureParams& p) {
            return p.means.empty() ? 0 : static_cast<int>(p.means.front().size());
          },
          [](const QuarticParams&) { return 1; },
          [](const PoissonRegParams& p) { return static_cast<int>(p.alpha.size()); },
      },
      params);
}

bool ModelSpec::spherical() const {
  const Family f = family();
  return f == Family::vmf || f == Family::fisher_bingham;
}

std::string family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::vmf: return "vmf";
    case Family::fisher_bingham: return "fisher_bingham";
    case Family::mixture: return "mixture";
    case Family::quartic: return "quartic";
    case Family::poisson_regression: return "poisson_regression";
  }
  return "unknown";
}

Family family_from_name(const std::string& name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "vmf") return Family::vmf;
  if (name == "fisher_bingham" || name == "fb") return Family::fisher_bingham;
  if (name == "mixture" || name == "nmm") return Family::mixture;
  if (name == "quartic") return Family::quartic;
  if (name == "poisson_regression" || name == "poisson") return Family::poisson_regression;
  throw ArgumentError("unknown model family '" + name + "'");
}

ModelSpec make_gaussian(Vec mean, Mat precision) {
  ModelSpec m{GaussianParams{std::move(mean), std::move(precision)}};
  validate(m);
  return m;
}

ModelSpec make_vmf(Vec mu, double kappa) {
  ModelSpec m{VmfParams{std::move(mu), kappa}};
  validate(m);
  return m;
}

ModelSpec make_fisher_bingham(Vec xi, Mat B) {
  ModelSpec m{FisherBinghamParams{std::move(xi), std::move(B)}};
  validate(m);
  return m;
}

ModelSpec make_mixture(Vec weights, std::vector<Vec> means, Vec precisions) {
  ModelSpec m{MixtureParams{std::move(weights), std::move(means), std::move(precisions)}};
  validate(m);
  return m;
}

ModelSpec make_quartic(double t1, double t2, double t3) {
  ModelSpec m{QuarticParams{t1, t2, t3}};
  validate(m);
  return m;
}

ModelSpec make_poisson_regression(Vec alpha, Vec prior_variances) {
  ModelSpec m{PoissonRegParams{std::move(alpha), std::move(prior_variances)}};
  validate(m);
  return m;
}

void validate(const ModelSpec& model) {
  if (!std::isfinite(model.log_scale)) throw ArgumentError("log_scale must be finite");
  std::visit(
      overloaded{
          [](const GaussianParams& p) {
            const auto d = p.mean.size();
            if (d == 0 || p.precision.rows() != d || p.precision.cols() != d)
              throw ArgumentError("gaussian: precision must be d x d with d = dim(mean)");
            if ((p.precision - p.precision.transpose()).cwiseAbs().maxCoeff() >
                1e-12 * std::max(1.0, p.precision.cwiseAbs().maxCoeff()))
              throw ArgumentError("gaussian: precision must be symmetric");
            Eigen::SelfAdjointEigenSolver<Mat> es(p.precision, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() <= 0.0)
              throw ArgumentError("gaussian: precision must be positive definite");
          },
          [](const VmfParams& p) {
            if (p.mu.size() < 2) throw ArgumentError("vmf: dimension must be >= 2");
            if (std::abs(p.mu.norm() - 1.0) > 1e-10) throw ArgumentError("vmf: mu must be a unit vector");
            if (!(p.kappa >= 0.0) || !std::isfinite(p.kappa)) throw ArgumentError("vmf: kappa must be >= 0");
          },
          [](const FisherBinghamParams& p) {
            const auto d = p.xi.size();
            if (d < 2 || p.B.rows() != d || p.B.cols() != d)
              throw ArgumentError("fisher_bingham: B must be d x d with d = dim(xi) >= 2");
            if ((p.B - p.B.transpose()).cwiseAbs().maxCoeff() > 1e-12)
              throw ArgumentError("fisher_bingham: B must be symmetric");
            if (std::abs(p.B.trace()) > 1e-10) throw ArgumentError("fisher_bingham: B must be traceless");
          },
          [](const MixtureParams& p) {
            const auto J = p.weights.size();
            if (J == 0 || p.means.size() != static_cast<std::size_t>(J) || p.precisions.size() != J)
              throw ArgumentError("mixture: weights, means and precisions must have J entries");
            const auto d = p.means.front().size();
            for (const auto& m : p.means)
              if (m.size() != d || d == 0) throw ArgumentError("mixture: component means must share dimension");
            if (p.weights.minCoeff() < 0.0 || std::abs(p.weights.sum() - 1.0) > 1e-10)
              throw ArgumentError("mixture: weights must lie on the simplex");
            if (p.precisions.minCoeff() <= 0.0) throw ArgumentError("mixture: precisions must be positive");
          },
          [](const QuarticParams& p) {
            if (!(p.theta3 < 0.0)) throw ArgumentError("quartic: theta3 must be negative");
            if (!std::isfinite(p.theta1) || !std::isfinite(p.theta2))
              throw ArgumentError("quartic: parameters must be finite");
          },
          [](const PoissonRegParams& p) {
            if (p.alpha.size() < 1 || p.prior_variances.size() != p.alpha.size())
              throw ArgumentError("poisson_regression: prior_variances must match alpha");
            if (p.prior_variances.minCoeff() <= 0.0)
              throw ArgumentError("poisson_regression: prior variances must be positive");
          },
      },
      model.params);
}

MixtureTerms mixture_terms(const MixtureParams& m, const Vec& x) {
  const auto J = m.weights.size();
  const auto d = x.size();
  MixtureTerms t;
  Vec logc(J);
  t.comp_scores.resize(d, J);
  for (Eigen::Index j = 0; j < J; ++j) {
    const Vec diff = m.means[j] - x;
    const double lam = m.precisions(j);
    logc(j) = std::log(m.weights(j)) + 0.5 * static_cast<double>(d) * std::log(lam / (2.0 * std::numbers::pi)) -
              0.5 * lam * diff.squaredNorm();
    t.comp_scores.col(j) = lam * diff;
  }
  t.log_p = logsumexp(logc);
  t.resp = (logc.array() - t.log_p).exp();
  t.score = t.comp_scores * t.resp;
  return t;
}

ModelEval evaluate(const ModelSpec& model, const Vec& x) {
  ModelEval ev = std::visit(
      overloaded{
          [&](const GaussianParams& p) {
            if (x.size() != p.mean.size()) throw ArgumentError("gaussian: point dimension mismatch");
            const Vec diff = x - p.mean;
            const Vec g = -(p.precision * diff);
            return ModelEval{0.5 * diff.dot(g), g, -p.precision};
          },
          [&](const VmfParams& p) {
            if (x.size() != p.mu.size()) throw ArgumentError("vmf: point dimension mismatch");
            check_on_sphere(x);
            const auto d = x.size();
            return ModelEval{p.kappa * p.mu.dot(x), p.kappa * p.mu, Mat::Zero(d, d)};
          },
          [&](const FisherBinghamParams& p) {
            if (x.size() != p.xi.size()) throw ArgumentError("fisher_bingham: point dimension mismatch");
            check_on_sphere(x);
            const Vec Bx = p.B * x;
            return ModelEval{p.xi.dot(x) + x.dot(Bx), p.xi + 2.0 * Bx, 2.0 * p.B};
          },
          [&](const MixtureParams& p) {
            if (p.means.empty() || x.size() != p.means.front().size())
              throw ArgumentError("mixture: point dimension mismatch");
            const MixtureTerms t = mixture_terms(p, x);
            const auto d = x.size();
            // Hessian of log p: sum_j r_j (-lambda_j I + s_j s_j') - s s'.
            Mat H = -t.score * t.score.transpose();
            for (Eigen::Index j = 0; j < p.weights.size(); ++j) {
              const Vec& sj = t.comp_scores.col(j);
              H += t.resp(j) * (sj * sj.transpose() - p.precisions(j) * Mat::Identity(d, d));
            }
            return ModelEval{t.log_p, t.score, H};
          },
          [&](const QuarticParams& p) {
            if (x.size() != 1) throw ArgumentError("quartic: points are scalars");
            const double v = x(0);
            const double v2 = v * v;
            ModelEval e;
            e.log_u = p.theta1 * v + p.theta2 * v2 + p.theta3 * v2 * v2;
            e.score_x = Vec::Constant(1, p.theta1 + 2.0 * p.theta2 * v + 4.0 * p.theta3 * v2 * v);
            e.hessian = Mat::Constant(1, 1, 2.0 * p.theta2 + 12.0 * p.theta3 * v2);
            return e;
          },
          [&](const PoissonRegParams&) -> ModelEval {
            throw ArgumentError(
                "poisson_regression is a conditional model; use poisson_gamma_log_target for its density");
          },
      },
      model.params);
  ev.log_u += model.log_scale;
  return ev;
}

double log_density(const ModelSpec& model, const Vec& x) {
  if (const auto* m = std::get_if<MixtureParams>(&model.params)) {
    const auto J = m->weights.size();
    const auto d = static_cast<double>(x.size());
    Vec logc(J);
    for (Eigen::Index j = 0; j < J; ++j) {
      const double lam = m->precisions(j);
      logc(j) = std::log(m->weights(j)) + 0.5 * d * std::log(lam / (2.0 * std::numbers::pi)) -
                0.5 * lam * (m->means[j] - x).squaredNorm();
    }
    return logsumexp(logc) + model.log_scale;
  }
  if (const auto* q = std::get_if<QuarticParams>(&model.params)) {
    const double v = x(0);
    const double v2 = v * v;
    return q->theta1 * v + q->theta2 * v2 + q->theta3 * v2 * v2 + model.log_scale;
  }
  return evaluate(model, x).log_u;
}

Vec sphere_grad_log(const ModelSpec& model, const Vec& x) {
  if (!model.spherical()) throw ArgumentError("sphere_grad_log requires a vmf or fisher_bingham model");
  const ModelEval e = evaluate(model, x);
  // (I - xx') g
  return e.score_x - x * x.dot(e.score_x);
}

double sphere_lap_log(const ModelSpec& model, const Vec& x) {
  if (!model.spherical()) throw ArgumentError("sphere_lap_log requires a vmf or fisher_bingham model");
  const ModelEval e = evaluate(model, x);
  const auto d = x.size();
  const Mat P = Mat::Identity(d, d) - x * x.transpose();
  return (P * e.hessian * P).trace() - static_cast<double>(d - 1) * x.dot(e.score_x);
}

std::pair<double, double> quartic_support(const QuarticParams& q, double drop) {
  const double a3 = std::abs(q.theta3);
  double R = 2.0 + std::max({std::cbrt(std::abs(q.theta1) / a3), std::sqrt(std::abs(q.theta2) / a3), 1.0});
  auto f = [&](double v) {
    const double v2 = v * v;
    return q.theta1 * v + q.theta2 * v2 + q.theta3 * v2 * v2;
  };
  constexpr int kCoarse = 4001;
  for (int attempt = 0; attempt < 60; ++attempt) {
    const double h = 2.0 * R / (kCoarse - 1);
    double fmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kCoarse; ++i) fmax = std::max(fmax, f(-R + i * h));
    if (f(-R) < fmax - drop && f(R) < fmax - drop) {
      int first = 0;
      int last = kCoarse - 1;
      while (f(-R + first * h) < fmax - drop) ++first;
      while (f(-R + last * h) < fmax - drop) --last;
      return {-R + std::max(first - 1, 0) * h, -R + std::min(last + 1, kCoarse - 1) * h};
    }
    R *= 2.0;
  }
  throw DomainError("quartic: could not bracket the density support");
}

Vec sample_vmf(const Vec& mu, double kappa, Rng& rng) {
  const auto d = mu.size();
  std::normal_distribution<double> normal;
  if (kappa <= 0.0) {
    Vec z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    return z.normalized();
  }
  const double dm1 = static_cast<double>(d - 1);
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  std::gamma_distribution<double> ga(dm1 / 2.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double w = 0.0;
  std::size_t proposals = 0;
  for (;;) {
    if (++proposals > kMaxProposals) throw ConvergenceError("vmf sampler stuck: exceeded 1e6 proposals");
    const double g1 = ga(rng);
    const double g2 = ga(rng);
    const double z = g1 / (g1 + g2);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = unif(rng);
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  // Uniform tangent direction orthogonal to mu.
  Vec v(d);
  double vn = 0.0;
  do {
    for (Eigen::Index i = 0; i < d; ++i) v(i) = normal(rng);
    v -= mu * mu.dot(v);
    vn = v.norm();
  } while (vn < 1e-12);
  v /= vn;
  Vec out = w * mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * v;
  return out / out.norm();
}

Dataset sample(const ModelSpec& model, std::size_t n, Rng& rng) {
  if (n == 0) throw ArgumentError("sample: n must be >= 1");
  validate(model);
  Dataset out;
  const auto rows = static_cast<Eigen::Index>(n);
  std::normal_distribution<double> normal;
  std::visit(
      overloaded{
          [&](const GaussianParams& p) {
            const auto d = p.mean.size();
            Eigen::LLT<Mat> llt(p.precision);
            const Mat Lt = llt.matrixU();  // precision = Lt' Lt
            out.x.resize(rows, d);
            Vec z(d);
            for (Eigen::Index i = 0; i < rows; ++i) {
              for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
              out.x.row(i) = (p.mean + Lt.triangularView<Eigen::Upper>().solve(z)).transpose();
            }
          },
          [&](const VmfParams& p) {
            out.x.resize(rows, p.mu.size());
            for (Eigen::Index i = 0; i < rows; ++i) out.x.row(i) = sample_vmf(p.mu, p.kappa, rng).transpose();
          },
          [&](const FisherBinghamParams& p) {
            // vMF envelope with exp(x'Bx - lambda_max(B)) acceptance; smoke quality.
            const auto d = p.xi.size();
            Eigen::SelfAdjointEigenSolver<Mat> es(p.B, Eigen::EigenvaluesOnly);
            const double lmax = es.eigenvalues().maxCoeff();
            const double kap = p.xi.norm();
            Vec dir = kap > 0.0 ? Vec(p.xi / kap) : Vec(Vec::Unit(d, 0));
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            out.x.resize(rows, d);
            for (Eigen::Index i = 0; i < rows; ++i) {
              std::size_t proposals = 0;
              for (;;) {
                if (++proposals > kMaxProposals)
                  throw ConvergenceError("fisher_bingham sampler stuck: exceeded 1e6 proposals");
                const Vec x = sample_vmf(dir, kap, rng);
                if (std::log(unif(rng)) <= x.dot(p.B * x) - lmax) {
                  out.x.row(i) = x.transpose();
                  break;
                }
              }
            }
          },
          [&](const MixtureParams& p) {
            const auto d = p.means.front().size();
            std::discrete_distribution<int> pick(p.weights.data(), p.weights.data() + p.weights.size());
            out.x.resize(rows, d);
            for (Eigen::Index i = 0; i < rows; ++i) {
              const int j = pick(rng);
              const double sd = 1.0 / std::sqrt(p.precisions(j));
              for (Eigen::Index k = 0; k < d; ++k) out.x(i, k) = p.means[j](k) + sd * normal(rng);
            }
          },
          [&](const QuarticParams& p) {
            // Inverse CDF on an 8001-node grid of the normalized density.
            constexpr int kNodes = 8001;
            const auto [lo, hi] = quartic_support(p);
            const double h = (hi - lo) / (kNodes - 1);
            std::vector<double> logf(kNodes);
            double fmax = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < kNodes; ++i) {
              const double v = lo + i * h;
              const double v2 = v * v;
              logf[i] = p.theta1 * v + p.theta2 * v2 + p.theta3 * v2 * v2;
              fmax = std::max(fmax, logf[i]);
            }
            std::vector<double> dens(kNodes), cdf(kNodes, 0.0);
            for (int i = 0; i < kNodes; ++i) dens[i] = std::exp(logf[i] - fmax);
            for (int i = 1; i < kNodes; ++i) cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
            const double total = cdf.back();
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            out.x.resize(rows, 1);
            for (Eigen::Index r = 0; r < rows; ++r) {
              const double target = unif(rng) * total;
              auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
              int k = static_cast<int>(std::distance(cdf.begin(), it));
              k = std::clamp(k, 1, kNodes - 1);
              // Within a cell the density is linear; invert the quadratic CDF piece.
              const double f0 = dens[k - 1];
              const double f1 = dens[k];
              const double need = target - cdf[k - 1];
              const double slope = (f1 - f0) / h;
              double t;
              if (std::abs(slope) < 1e-14 * std::max(f0, 1e-300)) {
                t = f0 > 0.0 ? need / f0 : 0.5 * h;
              } else {
                const double disc = f0 * f0 + 2.0 * slope * need;
                t = (-f0 + std::sqrt(std::max(disc, 0.0))) / slope;
              }
              out.x(r, 0) = lo + (k - 1) * h + std::clamp(t, 0.0, h);
            }
          },
          [&](const PoissonRegParams& p) {
            const auto d = p.alpha.size() - 1;
            out.x.resize(rows, d);
            Eigen::VectorXi y(rows);
            for (Eigen::Index i = 0; i < rows; ++i) {
              double z = p.alpha(0);
              for (Eigen::Index k = 0; k < d; ++k) {
                out.x(i, k) = normal(rng);
                z += p.alpha(k + 1) * out.x(i, k);
              }
              std::poisson_distribution<int> pois(std::exp(std::min(z, 20.0)));
              y(i) = pois(rng);
            }
            out.y = std::move(y);
          },
      },
      model.params);
  out.provenance.scenario = family_name(model.family());
  out.provenance.contaminated.assign(n, false);
  return out;
}

}  // namespace gstein
