#pragma once

#include "gstein/stein.hpp"

#include <cmath>
#include <functional>

namespace gstein::testing {

inline TestField field_1d(std::function<double(double)> f, std::function<double(double)> df) {
  TestField t;
  t.value = [f](const Vec& x) -> Vec { return Vec::Constant(1, f(x(0))); };
  t.divergence = [df](const Vec& x) { return df(x(0)); };
  t.jacobian = [df](const Vec& x) -> Mat { return Mat::Constant(1, 1, df(x(0))); };
  return t;
}

inline ModelSpec normal_1d(double mean, double var) {
  return make_gaussian(Vec::Constant(1, mean), Mat::Constant(1, 1, 1.0 / var));
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
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

inline double rel_error(const Vec& a, const Vec& b) { return (a - b).norm() / (1.0 + b.norm()); }

inline Vec unit(Vec v) { return v / v.norm(); }

}  // namespace gstein::testing
