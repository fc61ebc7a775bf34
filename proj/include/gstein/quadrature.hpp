#pragma once

#include "gstein/models.hpp"

namespace gstein {

struct Box {
  Vec lo;
  Vec hi;
};

// Trapezoid rule on a uniform tensor grid (1-D or 2-D). Nodes include the
// box boundary so that the weights sum to the box measure exactly.
struct QuadratureGrid {
  int dimension = 1;
  Mat nodes;    // dimension x N, one node per column
  Vec weights;  // N positive weights
  Box domain;

  Eigen::Index size() const { return nodes.cols(); }
  Vec node(Eigen::Index i) const { return nodes.col(i); }
};

QuadratureGrid uniform_grid_1d(double lo, double hi, int n = 4001);
QuadratureGrid uniform_grid_2d(const Vec& lo, const Vec& hi, int n_per_axis = 401);

// Grid of +-half_width standard deviations around the model's location
// (Gaussian and mixture families; quartic uses its support bracket).
QuadratureGrid default_grid(const ModelSpec& model, double half_width = 10.0);

// Log-density values of `model` at every node.
Vec log_density_on_grid(const ModelSpec& model, const QuadratureGrid& grid);

// Normalized density values sum_i w_i p_i = 1 on the grid. Throws DomainError
// when the estimated mass outside the box exceeds `max_tail`.
Vec normalized_density(const ModelSpec& model, const QuadratureGrid& grid, double max_tail = 1e-6);

// Same normalization from precomputed log values; returns log Z too.
Vec normalize_log_values(const Vec& log_values, const QuadratureGrid& grid, double* log_z = nullptr);

// Estimated probability mass outside the grid box for density p with
// normalized grid values `p` and scores at the boundary nodes.
double tail_mass_estimate(const ModelSpec& model, const QuadratureGrid& grid, const Vec& p);

}  // namespace gstein
