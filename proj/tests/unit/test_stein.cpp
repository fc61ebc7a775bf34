#include "helpers.hpp"

#include "gstein/stein.hpp"

#include <doctest.h>

using namespace gstein;
using namespace gstein::testing;

namespace {

TestField linear() {
  return field_1d([](double x) { return x; }, [](double) { return 1.0; });
}
TestField sine() {
  return field_1d([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}
TestField cubic() {
  return field_1d([](double x) { return x * x * x; }, [](double x) { return 3.0 * x * x; });
}
TestField translation() {
  return field_1d([](double) { return 1.0; }, [](double) { return 0.0; });
}

}  // namespace

TEST_CASE("gamma-Stein operator: hand-evaluated value") {
  const SteinEvaluation e = apply_gamma_stein(normal_1d(0.0, 1.0), 1.0, linear(), Vec::Constant(1, 1.0));
  // e^{-1/2} (2 * (-1) + 1)
  CHECK(e.total == doctest::Approx(-0.6065306597126334).epsilon(1e-14));
  CHECK(e.weight == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK_FALSE(e.clamped);
}

TEST_CASE("gamma = 0 reduces to an independently coded classical operator") {
  Rng rng(7);
  std::normal_distribution<double> nd;
  Mat prec(2, 2);
  prec << 1.5, -0.4, -0.4, 0.8;
  const ModelSpec g = make_gaussian((Vec(2) << 0.2, -0.7).finished(), prec);
  const TestField f = identity_field(2);
  for (int k = 0; k < 50; ++k) {
    const Vec x = (Vec(2) << 3 * nd(rng), 3 * nd(rng)).finished();
    // <-P (x - m), x> + 2
    const Vec s = -prec * (x - (Vec(2) << 0.2, -0.7).finished());
    const double classical = s.dot(x) + 2.0;
    CHECK(std::abs(apply_gamma_stein(g, 0.0, f, x).total - classical) <= 1e-12 * (1.0 + std::abs(classical)));
    CHECK(std::abs(apply_stein(g, f, x) - classical) <= 1e-12 * (1.0 + std::abs(classical)));
  }
}

TEST_CASE("scaling u by c multiplies the operator by c^gamma") {
  ModelSpec q = make_quartic(0.2, 2.0, -0.5);
  const Vec x = Vec::Constant(1, 0.8);
  const double gamma = 0.4;
  const double base = apply_gamma_stein(q, gamma, sine(), x).total;
  for (double c : {-50.0, -3.0, 2.5, 50.0}) {
    q.log_scale = c;
    CHECK(apply_gamma_stein(q, gamma, sine(), x).total == doctest::Approx(base * std::exp(gamma * c)).epsilon(1e-12));
  }
}

TEST_CASE("analytic divergences agree with finite differences") {
  Mat probes(1, 5);
  probes << -2.0, -0.5, 0.0, 0.7, 1.9;
  for (const auto& f : {linear(), sine(), cubic()}) CHECK(field_consistency(f, probes) < 1e-6);
}

TEST_CASE("Stein identity residuals") {
  const QuadratureGrid grid = uniform_grid_1d(-14.0, 14.0, 4001);
  CHECK(stein_identity_residual(normal_1d(0.0, 1.0), 0.3, sine(), grid) < 1e-6);
  CHECK(stein_identity_residual(normal_1d(0.0, 1.0), 1.0, cubic(), grid) < 1e-6);
  CHECK(stein_identity_residual(make_quartic(0.0, 2.0, -0.5), 0.5, linear(), grid) < 1e-6);
}

TEST_CASE("mixed inner product: both sides agree") {
  const QuadratureGrid grid = uniform_grid_1d(-14.0, 14.0, 4001);
  const InnerProductCheck a = mixed_inner_product_check(normal_1d(0.0, 1.0), normal_1d(1.0, 1.0), 0.5, linear(), grid);
  CHECK(std::abs(a.lhs - a.rhs) < 1e-6);
  CHECK(std::abs(a.lhs) > 1e-3);
  const TestField damped = field_1d([](double x) { return x * x * std::exp(-x * x / 8.0); },
                                    [](double x) { return (2.0 * x - x * x * x / 4.0) * std::exp(-x * x / 8.0); });
  const InnerProductCheck b = mixed_inner_product_check(normal_1d(0.0, 1.0), normal_1d(0.0, 4.0), 1.0, damped, grid);
  CHECK(std::abs(b.lhs - b.rhs) < 1e-6);
}

TEST_CASE("gamma-Fisher divergence against a Gaussian integral") {
  const QuadratureGrid grid = uniform_grid_1d(-14.0, 14.0, 4001);
  // s_q - s_p = 1 and E_p[q] = exp(-1/4)/sqrt(4 pi) for the normalized q.
  const double v = gamma_fisher_divergence(normal_1d(0.0, 1.0), normal_1d(1.0, 1.0), 1.0, grid);
  CHECK(std::abs(v - std::exp(-0.25) / std::sqrt(4.0 * M_PI)) < 1e-8);
  CHECK(gamma_fisher_divergence(normal_1d(0.0, 1.0), normal_1d(0.0, 1.0), 0.7, grid) < 1e-14);
}

TEST_CASE("one-step correction satisfies the normalizing condition") {
  const QuadratureGrid grid = uniform_grid_1d(-14.0, 14.0, 4001);
  const ModelSpec p = normal_1d(0.0, 1.0), q = normal_1d(0.5, 1.0);
  CHECK(std::abs(normalizing_condition_residual(linear(), p, q, 0.5, grid)) > 1e-3);
  const CorrectedField c = correct_field(linear(), p, q, 0.5, grid);
  CHECK_FALSE(c.degenerate);
  CHECK(std::abs(normalizing_condition_residual(c.field, p, q, 0.5, grid)) < 1e-8);
}

TEST_CASE("first variation of the gamma-divergence") {
  const QuadratureGrid grid = uniform_grid_1d(-12.0, 12.0, 4001);
  const ModelSpec p = normal_1d(0.0, 1.0), q = normal_1d(0.3, 1.2);
  const CorrectedField c = correct_field(translation(), p, q, 0.3, grid);
  const FirstVariationCheck fv = first_variation_check(p, q, 0.3, c.field, 1e-3, grid);
  CHECK(std::abs(fv.fd_derivative - fv.operator_side) < 1e-3);

  // gamma = 0: KL first variation <s_q - s_p, v> under p, by direct quadrature.
  const ModelSpec q2 = normal_1d(1.0, 1.0);
  const FirstVariationCheck kl = first_variation_check(p, q2, 0.0, linear(), 1e-3, grid);
  const Vec dens = normalized_density(p, grid);
  double direct = 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double x = grid.nodes(0, i);
    direct += grid.weights(i) * dens(i) * ((1.0 - x) - (-x)) * x;
  }
  CHECK(std::abs(kl.operator_side - direct) < 1e-8);
  CHECK(std::abs(kl.fd_derivative - kl.operator_side) < 1e-3);
}

TEST_CASE("gamma-divergence vanishes at p = q and is positive otherwise") {
  const QuadratureGrid grid = uniform_grid_1d(-14.0, 14.0, 4001);
  CHECK(std::abs(gamma_divergence(normal_1d(0.0, 1.0), normal_1d(0.0, 1.0), 0.5, grid)) < 1e-10);
  CHECK(gamma_divergence(normal_1d(0.0, 1.0), normal_1d(0.5, 1.0), 0.5, grid) > 1e-3);
  // KL(N(0,1) || N(1,1)) = 1/2
  CHECK(gamma_divergence(normal_1d(0.0, 1.0), normal_1d(1.0, 1.0), 0.0, grid) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("quadrature grids") {
  const QuadratureGrid g = uniform_grid_1d(-1.0, 3.0, 101);
  CHECK(g.weights.sum() == doctest::Approx(4.0).epsilon(1e-14));
  const QuadratureGrid g2 = uniform_grid_2d(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 51);
  CHECK(g2.weights.sum() == doctest::Approx(4.0).epsilon(1e-14));
  // A grid that misses the mass is rejected.
  CHECK_THROWS_AS(normalized_density(normal_1d(0.0, 1.0), uniform_grid_1d(2.0, 6.0, 401)), DomainError);
}
