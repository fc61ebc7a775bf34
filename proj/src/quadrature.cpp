#include "gstein/quadrature.hpp"

#include <cmath>
#include <limits>

namespace gstein {

namespace {

Vec trapezoid_weights(int n, double h) {
  Vec w = Vec::Constant(n, h);
  w(0) = w(n - 1) = 0.5 * h;
  return w;
}

}  // namespace

QuadratureGrid uniform_grid_1d(double lo, double hi, int n) {
  if (!(hi > lo) || n < 3) throw ArgumentError("uniform_grid_1d: need hi > lo and n >= 3");
  QuadratureGrid g;
  g.dimension = 1;
  const double h = (hi - lo) / (n - 1);
  g.nodes.resize(1, n);
  for (int i = 0; i < n; ++i) g.nodes(0, i) = lo + i * h;
  g.nodes(0, n - 1) = hi;
  g.weights = trapezoid_weights(n, h);
  g.domain = {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  return g;
}

QuadratureGrid uniform_grid_2d(const Vec& lo, const Vec& hi, int n) {
  if (lo.size() != 2 || hi.size() != 2 || !(hi.array() > lo.array()).all() || n < 3)
    throw ArgumentError("uniform_grid_2d: need a 2-D box with hi > lo and n >= 3");
  QuadratureGrid g;
  g.dimension = 2;
  const double hx = (hi(0) - lo(0)) / (n - 1);
  const double hy = (hi(1) - lo(1)) / (n - 1);
  const Vec wx = trapezoid_weights(n, hx);
  const Vec wy = trapezoid_weights(n, hy);
  g.nodes.resize(2, static_cast<Eigen::Index>(n) * n);
  g.weights.resize(static_cast<Eigen::Index>(n) * n);
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j, ++k) {
      g.nodes(0, k) = i == n - 1 ? hi(0) : lo(0) + i * hx;
      g.nodes(1, k) = j == n - 1 ? hi(1) : lo(1) + j * hy;
      g.weights(k) = wx(i) * wy(j);
    }
  }
  g.domain = {lo, hi};
  return g;
}

QuadratureGrid default_grid(const ModelSpec& model, double half_width) {
  switch (model.family()) {
    case Family::gaussian: {
      const auto& p = std::get<GaussianParams>(model.params);
      const Mat cov = p.precision.inverse();
      const Vec sd = cov.diagonal().cwiseSqrt();
      const Vec lo = p.mean - half_width * sd;
      const Vec hi = p.mean + half_width * sd;
      if (p.mean.size() == 1) return uniform_grid_1d(lo(0), hi(0));
      if (p.mean.size() == 2) return uniform_grid_2d(lo, hi);
      break;
    }
    case Family::mixture: {
      const auto& p = std::get<MixtureParams>(model.params);
      const auto d = p.means.front().size();
      Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
      Vec hi = -lo;
      for (Eigen::Index j = 0; j < p.weights.size(); ++j) {
        const double sd = 1.0 / std::sqrt(p.precisions(j));
        lo = lo.cwiseMin(p.means[j] - Vec::Constant(d, half_width * sd));
        hi = hi.cwiseMax(p.means[j] + Vec::Constant(d, half_width * sd));
      }
      if (d == 1) return uniform_grid_1d(lo(0), hi(0));
      if (d == 2) return uniform_grid_2d(lo, hi);
      break;
    }
    case Family::quartic: {
      const auto [lo, hi] = quartic_support(std::get<QuarticParams>(model.params));
      return uniform_grid_1d(lo, hi);
    }
    default:
      break;
  }
  throw ArgumentError("default_grid: quadrature is available for 1-D and 2-D Euclidean families only");
}

Vec log_density_on_grid(const ModelSpec& model, const QuadratureGrid& grid) {
  Vec out(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) out(i) = log_density(model, grid.nodes.col(i));
  return out;
}

Vec normalize_log_values(const Vec& log_values, const QuadratureGrid& grid, double* log_z) {
  const double m = log_values.maxCoeff();
  Vec p = (log_values.array() - m).exp();
  const double z = grid.weights.dot(p);
  p /= z;
  if (log_z) *log_z = m + std::log(z);
  return p;
}

double tail_mass_estimate(const ModelSpec& model, const QuadratureGrid& grid, const Vec& p) {
  // Outside the box a log-concave-like tail decays at least as fast as
  // exp(-|s.n| t), so the mass beyond a boundary node is about p / |s.n|.
  double tail = 0.0;
  const double big = 1e300;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const Vec x = grid.nodes.col(i);
    for (int k = 0; k < grid.dimension; ++k) {
      const bool at_lo = x(k) == grid.domain.lo(k);
      const bool at_hi = x(k) == grid.domain.hi(k);
      if (!at_lo && !at_hi) continue;
      if (p(i) < 1e-300) continue;
      const double sn = evaluate(model, x).score_x(k) * (at_hi ? 1.0 : -1.0);
      // Score pointing outward means the density grows past the boundary.
      const double rate = sn < 0.0 ? -sn : 0.0;
      double line = 1.0;
      if (grid.dimension == 2) {
        // boundary length element along the other axis
        const int other = 1 - k;
        const double n_axis = std::sqrt(static_cast<double>(grid.size()));
        line = (grid.domain.hi(other) - grid.domain.lo(other)) / (n_axis - 1.0);
      }
      tail += rate > 0.0 ? p(i) * line / rate : big;
    }
  }
  return tail;
}

Vec normalized_density(const ModelSpec& model, const QuadratureGrid& grid, double max_tail) {
  const Vec p = normalize_log_values(log_density_on_grid(model, grid), grid);
  const double tail = tail_mass_estimate(model, grid, p);
  if (tail > max_tail) {
    throw DomainError("quadrature grid does not cover the density mass (estimated tail mass " +
                      std::to_string(tail) + ")");
  }
  return p;
}

}  // namespace gstein
