#include "gstein/stein.hpp"

#include <cmath>

namespace gstein {

namespace {

struct GridEval {
  Vec log_u;
  Mat score;  // d x N
};

GridEval eval_on_grid(const ModelSpec& model, const QuadratureGrid& grid) {
  GridEval g;
  const auto n = grid.size();
  g.log_u.resize(n);
  g.score.resize(grid.dimension, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ModelEval e = evaluate(model, grid.nodes.col(i));
    g.log_u(i) = e.log_u;
    g.score.col(i) = e.score_x;
  }
  return g;
}

double log_integral(const Vec& log_values, const Vec& weights) {
  const double m = log_values.maxCoeff();
  return m + std::log(weights.dot((log_values.array() - m).exp().matrix()));
}

// Normalized grid density of p with the coverage check.
Vec grid_density(const ModelSpec& p, const QuadratureGrid& grid, const GridEval& ge) {
  const Vec dens = normalize_log_values(ge.log_u, grid);
  const double tail = tail_mass_estimate(p, grid, dens);
  if (tail > 1e-6) {
    throw DomainError("quadrature grid does not cover the density mass (estimated tail mass " +
                      std::to_string(tail) + ")");
  }
  return dens;
}

void check_dims(const ModelSpec& m, const QuadratureGrid& grid) {
  if (m.dim() != grid.dimension) throw ArgumentError("model dimension does not match the quadrature grid");
}

// D_gamma from normalized grid density p and log q values (any scale).
double divergence_from_values(const Vec& p, const Vec& log_p, const Vec& log_q, double gamma,
                              const QuadratureGrid& grid) {
  const Vec wp = grid.weights.cwiseProduct(p);
  if (gamma == 0.0) {
    const double log_zq = log_integral(log_q, grid.weights);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (wp(i) > 0.0) kl += wp(i) * (log_p(i) - (log_q(i) - log_zq));
    return kl;
  }
  // ||p||_{g+1} and int p (q / ||q||_{g+1})^g, both in log space.
  const double log_norm_p = log_integral((gamma + 1.0) * log_p, grid.weights) / (gamma + 1.0);
  const double log_norm_q = log_integral((gamma + 1.0) * log_q, grid.weights) / (gamma + 1.0);
  double cross = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (wp(i) > 0.0) cross += wp(i) * std::exp(gamma * (log_q(i) - log_norm_q));
  return (std::exp(log_norm_p) - cross) / gamma;
}

}  // namespace

SteinEvaluation apply_gamma_stein(double log_u, const Vec& score, double gamma, const TestField& field,
                                  const Vec& x) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  const Vec f = field.value(x);
  const double div = field.divergence(x);
  if (!f.allFinite() || !std::isfinite(div)) throw EvaluationError("non-finite test field at point", x);
  if (!score.allFinite()) throw EvaluationError("non-finite score at point", x);
  SteinEvaluation ev;
  ev.gamma = gamma;
  ev.weight = gamma == 0.0 ? 1.0 : guarded_exp(gamma * log_u, &ev.clamped);
  ev.drift_term = (gamma + 1.0) * score.dot(f);
  ev.divergence_term = div;
  ev.total = ev.weight * (ev.drift_term + ev.divergence_term);
  return ev;
}

SteinEvaluation apply_gamma_stein(const ModelSpec& model, double gamma, const TestField& field, const Vec& x) {
  const ModelEval e = evaluate(model, x);
  return apply_gamma_stein(e.log_u, e.score_x, gamma, field, x);
}

double apply_stein(const ModelSpec& model, const TestField& field, const Vec& x) {
  const ModelEval e = evaluate(model, x);
  return e.score_x.dot(field.value(x)) + field.divergence(x);
}

double field_consistency(const TestField& field, const Mat& probes, double step) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < probes.cols(); ++j) {
    const Vec x = probes.col(j);
    double fd = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Vec a = x, b = x;
      a(k) += step;
      b(k) -= step;
      fd += (field.value(a)(k) - field.value(b)(k)) / (2.0 * step);
    }
    const double div = field.divergence(x);
    worst = std::max(worst, std::abs(fd - div) / std::max(1.0, std::abs(div)));
  }
  return worst;
}

double stein_identity_residual(const ModelSpec& model, double gamma, const TestField& field,
                               const QuadratureGrid& grid) {
  check_dims(model, grid);
  const GridEval ge = eval_on_grid(model, grid);
  double log_z = 0.0;
  normalize_log_values(ge.log_u, grid, &log_z);
  const Vec p = grid_density(model, grid, ge);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (p(i) == 0.0) continue;
    const Vec x = grid.nodes.col(i);
    acc += grid.weights(i) * p(i) * apply_gamma_stein(ge.log_u(i) - log_z, ge.score.col(i), gamma, field, x).total;
  }
  return std::abs(acc);
}

InnerProductCheck mixed_inner_product_check(const ModelSpec& p, const ModelSpec& q, double gamma,
                                            const TestField& field, const QuadratureGrid& grid) {
  check_dims(p, grid);
  check_dims(q, grid);
  const GridEval gp = eval_on_grid(p, grid);
  const GridEval gq = eval_on_grid(q, grid);
  const Vec dens = grid_density(p, grid, gp);
  InnerProductCheck out;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (dens(i) == 0.0) continue;
    const Vec x = grid.nodes.col(i);
    const SteinEvaluation ev = apply_gamma_stein(gq.log_u(i), gq.score.col(i), gamma, field, x);
    const double wq = gamma == 0.0 ? 1.0 : guarded_exp(gamma * gq.log_u(i));
    out.lhs += grid.weights(i) * dens(i) * ev.total;
    out.rhs += grid.weights(i) * dens(i) * wq * (gq.score.col(i) - gp.score.col(i)).dot(field.value(x));
  }
  return out;
}

double gamma_fisher_divergence(const ModelSpec& p, const ModelSpec& q, double gamma, const QuadratureGrid& grid) {
  check_dims(p, grid);
  check_dims(q, grid);
  const GridEval gp = eval_on_grid(p, grid);
  const GridEval gq = eval_on_grid(q, grid);
  const Vec dens = grid_density(p, grid, gp);
  double log_zq = 0.0;
  normalize_log_values(gq.log_u, grid, &log_zq);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (dens(i) == 0.0) continue;
    const double wq = gamma == 0.0 ? 1.0 : guarded_exp(gamma * (gq.log_u(i) - log_zq));
    acc += grid.weights(i) * dens(i) * wq * (gq.score.col(i) - gp.score.col(i)).squaredNorm();
  }
  return acc;
}

Escorts escort_moments(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                       const QuadratureGrid& grid) {
  check_dims(p, grid);
  check_dims(q, grid);
  const GridEval gp = eval_on_grid(p, grid);
  const GridEval gq = eval_on_grid(q, grid);
  grid_density(p, grid, gp);  // coverage check
  const Vec lp = gp.log_u + gamma * gq.log_u;
  const Vec lq = (gamma + 1.0) * gq.log_u;
  const Vec ep = normalize_log_values(lp, grid);
  const Vec eq = normalize_log_values(lq, grid);
  Escorts out;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const Vec x = grid.nodes.col(i);
    const Vec s = gq.score.col(i);
    const double inner = s.dot(v.value(x));
    const double nrm = s.squaredNorm();
    const double w = grid.weights(i);
    out.p_gamma_inner += w * ep(i) * inner;
    out.q_gamma_inner += w * eq(i) * inner;
    out.p_gamma_norm += w * ep(i) * nrm;
    out.q_gamma_norm += w * eq(i) * nrm;
  }
  return out;
}

double normalizing_condition_residual(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                                      const QuadratureGrid& grid) {
  const Escorts e = escort_moments(v, p, q, gamma, grid);
  return e.q_gamma_inner - e.p_gamma_inner;
}

CorrectedField correct_field(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                             const QuadratureGrid& grid) {
  const Escorts e = escort_moments(v, p, q, gamma, grid);
  const double den = e.q_gamma_norm - e.p_gamma_norm;
  CorrectedField out;
  if (std::abs(den) < 1e-12) {
    out.degenerate = true;
    out.c = 0.0;
    out.field = v;
    return out;
  }
  const double c = (e.q_gamma_inner - e.p_gamma_inner) / den;
  out.c = c;
  const ModelSpec qc = q;
  out.field.value = [v, qc, c](const Vec& x) -> Vec { return v.value(x) - c * evaluate(qc, x).score_x; };
  out.field.divergence = [v, qc, c](const Vec& x) {
    return v.divergence(x) - c * evaluate(qc, x).hessian.trace();
  };
  if (v.jacobian) {
    out.field.jacobian = [v, qc, c](const Vec& x) -> Mat { return v.jacobian(x) - c * evaluate(qc, x).hessian; };
  }
  return out;
}

double gamma_divergence(const ModelSpec& p, const ModelSpec& q, double gamma, const QuadratureGrid& grid) {
  check_dims(p, grid);
  check_dims(q, grid);
  const GridEval gp = eval_on_grid(p, grid);
  const Vec dens = grid_density(p, grid, gp);
  double log_zp = 0.0;
  normalize_log_values(gp.log_u, grid, &log_zp);
  const Vec log_p = gp.log_u.array() - log_zp;
  return divergence_from_values(dens, log_p, log_density_on_grid(q, grid), gamma, grid);
}

FirstVariationCheck first_variation_check(const ModelSpec& p, const ModelSpec& q, double gamma,
                                          const TestField& v, double eps, const QuadratureGrid& grid) {
  if (!(eps > 0.0)) throw ArgumentError("first_variation_check: eps must be positive");
  check_dims(p, grid);
  check_dims(q, grid);
  const int d = grid.dimension;
  if (d > 1 && !v.jacobian) throw ArgumentError("first_variation_check: a field Jacobian is required for d > 1");
  const GridEval gp = eval_on_grid(p, grid);
  const GridEval gq = eval_on_grid(q, grid);
  const Vec dens = grid_density(p, grid, gp);
  double log_zp = 0.0;
  normalize_log_values(gp.log_u, grid, &log_zp);
  const Vec log_p = gp.log_u.array() - log_zp;

  const auto n = grid.size();
  Mat vals(d, n);
  Vec divs(n);
  std::vector<Mat> jacs;
  if (d > 1) jacs.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec x = grid.nodes.col(i);
    vals.col(i) = v.value(x);
    divs(i) = v.divergence(x);
    if (d > 1) jacs[static_cast<std::size_t>(i)] = v.jacobian(x);
  }

  // log q_eps(x) = log q(x - eps v(x)) + log det(I - eps grad v(x)).
  auto transported = [&](double e) {
    Vec out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec y = grid.nodes.col(i) - e * vals.col(i);
      double det;
      if (d == 1) {
        det = 1.0 - e * divs(i);
      } else {
        det = (Mat::Identity(d, d) - e * jacs[static_cast<std::size_t>(i)]).determinant();
      }
      if (!(det > 0.0)) throw DomainError("first_variation_check: transport step is not invertible");
      out(i) = log_density(q, y) + std::log(det);
    }
    return out;
  };
  auto dgam = [&](double e) { return divergence_from_values(dens, log_p, transported(e), gamma, grid); };

  FirstVariationCheck out;
  out.fd_derivative = (dgam(eps) - dgam(-eps)) / (2.0 * eps);
  out.fd_coarse = (dgam(2.0 * eps) - dgam(-2.0 * eps)) / (4.0 * eps);

  // C_gamma(q) int p A_q^gamma v; the scale of q cancels between the two factors.
  const double log_cq = gamma == 0.0 ? 0.0
                                     : -gamma / (gamma + 1.0) * log_integral((gamma + 1.0) * gq.log_u, grid.weights);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dens(i) == 0.0) continue;
    const double wq = gamma == 0.0 ? 1.0 : std::exp(gamma * gq.log_u(i) + log_cq);
    acc += grid.weights(i) * dens(i) * wq * ((gamma + 1.0) * gq.score.col(i).dot(vals.col(i)) + divs(i));
  }
  out.operator_side = acc;
  return out;
}

TestField identity_field(int d) {
  TestField f;
  f.value = [](const Vec& x) -> Vec { return x; };
  f.divergence = [d](const Vec&) { return static_cast<double>(d); };
  f.jacobian = [d](const Vec&) -> Mat { return Mat::Identity(d, d); };
  return f;
}

TestField score_field(const ModelSpec& q) {
  TestField f;
  f.value = [q](const Vec& x) -> Vec { return evaluate(q, x).score_x; };
  f.divergence = [q](const Vec& x) { return evaluate(q, x).hessian.trace(); };
  f.jacobian = [q](const Vec& x) -> Mat { return evaluate(q, x).hessian; };
  return f;
}

}  // namespace gstein
