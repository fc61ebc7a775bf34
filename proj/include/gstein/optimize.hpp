#pragma once

#include "gstein/types.hpp"

#include <functional>

namespace gstein {

using Objective = std::function<double(const Vec&)>;

struct NelderMeadConfig {
  double initial_step = 0.1;
  double size_tol = 1e-10;  // simplex characteristic size at which to stop
  int max_iter = 5000;
};

struct NelderMeadResult {
  Vec x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Derivative-free simplex minimization (GSL nmsimplex2). Non-finite objective
// values are treated as +inf.
NelderMeadResult nelder_mead(const Objective& f, const Vec& x0, const NelderMeadConfig& cfg = {});

struct LeastSquaresConfig {
  int max_iter = 200;
  double xtol = 1e-10;
  double gtol = 1e-14;
  double ftol = 0.0;
};

struct LeastSquaresResult {
  Vec x;
  Vec residual;
  double cost = 0.0;  // |residual|^2
  int iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt trust region (GSL multifit_nlinear) on a residual map
// with m >= dim(x) components and a central-difference Jacobian. A non-finite
// residual stops the iteration at the last accepted point.
LeastSquaresResult least_squares(const std::function<Vec(const Vec&)>& residual, const Vec& x0,
                                 const LeastSquaresConfig& cfg = {});

// Central-difference Jacobian of a vector map; column k is d map / d x_k.
Mat fd_jacobian(const std::function<Vec(const Vec&)>& map, const Vec& x, double rel_step = 1e-6);

// Root of a scalar function on [lo, hi] with a sign change (GSL Brent).
double brent_root(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-13);

}  // namespace gstein
