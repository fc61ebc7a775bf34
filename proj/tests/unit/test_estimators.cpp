#include "helpers.hpp"

#include "gstein/estimators.hpp"
#include "gstein/optimize.hpp"

#include <doctest.h>

using namespace gstein;
using namespace gstein::testing;

namespace {

Dataset points_1d(std::initializer_list<double> xs) {
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double v : xs) d.x(i++, 0) = v;
  return d;
}

ModelSpec nmm_truth() {
  return make_mixture((Vec(2) << 0.5, 0.5).finished(),
                      {(Vec(2) << -2.0, 0.0).finished(), (Vec(2) << 2.0, 0.0).finished()}, Vec::Constant(2, 1.0 / 0.6));
}

// Component-wise |mean U| <= 5 sd / sqrt(n) at the true parameter.
void check_unbiased(const ModelSpec& m, double gamma, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Dataset d = sample(m, n, rng);
  Mat U(static_cast<Eigen::Index>(n), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec u = estimating_function(m, d.row(i), gamma);
    if (U.cols() == 0) U.resize(static_cast<Eigen::Index>(n), u.size());
    U.row(static_cast<Eigen::Index>(i)) = u.transpose();
  }
  const Vec mean = U.colwise().mean().transpose();
  for (Eigen::Index k = 0; k < U.cols(); ++k) {
    const double sd = std::sqrt((U.col(k).array() - mean(k)).square().sum() / static_cast<double>(n - 1));
    INFO("family " << family_name(m.family()) << " component " << k);
    CHECK(std::abs(mean(k)) <= 5.0 * sd / std::sqrt(static_cast<double>(n)) + 1e-12);
  }
}

}  // namespace

TEST_CASE("quartic estimating mean matches a straight-line evaluation") {
  const double t1 = 0.0, t2 = 2.0, t3 = -0.5, gamma = 0.3;
  const Dataset d = points_1d({-1.7, -0.4, 0.0, 0.9, 2.1});
  const Vec got = estimating_mean(make_quartic(t1, t2, t3), d, gamma).values;
  Vec want = Vec::Zero(3);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    const double x = d.x(i, 0);
    const double w = std::exp(gamma * (t1 * x + t2 * x * x + t3 * x * x * x * x));
    const double s = t1 + 2.0 * t2 * x + 4.0 * t3 * x * x * x;
    want(0) += w * ((gamma + 1.0) * s * 1.0 + 0.0);
    want(1) += w * ((gamma + 1.0) * s * 2.0 * x + 2.0);
    want(2) += w * ((gamma + 1.0) * s * 4.0 * x * x * x + 12.0 * x * x);
  }
  want /= static_cast<double>(d.x.rows());
  REQUIRE(got.size() == 3);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("estimating functions are unbiased at the truth") {
  Mat prec(2, 2);
  prec << 1.2, 0.3, 0.3, 0.7;
  check_unbiased(make_gaussian((Vec(2) << 0.5, -0.5).finished(), prec), 0.5, 100000, 1);
  check_unbiased(make_quartic(0.0, 2.0, -0.5), 0.3, 100000, 2);
  check_unbiased(nmm_truth(), 0.3, 100000, 3);
  check_unbiased(make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0), 0.0, 100000, 4);
}

TEST_CASE("Gaussian fixed point on symmetric data") {
  const Dataset d = points_1d({-1.0, 1.0});
  const FitResult f = gaussian_fixed_point(d, 1.0, GaussianParams{Vec::Constant(1, 0.0), Mat::Constant(1, 1, 1.0)});
  const auto& p = std::get<GaussianParams>(f.params.params);
  CHECK(f.converged);
  CHECK(std::abs(p.mean(0)) < 1e-10);
  CHECK(1.0 / p.precision(0, 0) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("Gaussian fixed point down-weights outliers") {
  Rng rng(8);
  Dataset d = sample(normal_1d(0.0, 1.0), 2000, rng);
  for (Eigen::Index i = 0; i < 200; ++i) d.x(i, 0) = 8.0;
  const GaussianParams init{Vec::Constant(1, 0.0), Mat::Constant(1, 1, 1.0)};
  const FitResult fr = gaussian_fixed_point(d, 0.3, init), fc = gaussian_fixed_point(d, 0.0, init);
  const double robust = std::get<GaussianParams>(fr.params.params).mean(0);
  const double classical = std::get<GaussianParams>(fc.params.params).mean(0);
  CHECK(std::abs(robust) < std::abs(classical));
  CHECK(std::abs(robust) < 0.15);
}

TEST_CASE("Bessel ratio and vMF MLE") {
  for (double k : {0.5, 2.0, 10.0, 80.0})
    CHECK(bessel_ratio(3.0, k) == doctest::Approx(1.0 / std::tanh(k) - 1.0 / k).epsilon(1e-12));
  // Mean resultant length 0.8 along e1.
  Dataset d;
  d.x.resize(2, 3);
  d.x << 0.8, 0.6, 0.0, 0.8, -0.6, 0.0;
  const FitResult f = vmf_mle(d);
  const auto& p = std::get<VmfParams>(f.params.params);
  const double root = brent_root([](double k) { return 1.0 / std::tanh(k) - 1.0 / k - 0.8; }, 1e-3, 100.0);
  CHECK(std::abs(p.kappa - root) < 1e-8);
  CHECK(std::abs(p.mu(0) - 1.0) < 1e-12);
}

TEST_CASE("vMF fixed point recovers the truth on clean data") {
  Rng rng(12);
  const Vec mu = (Vec(3) << 0.0, 0.6, 0.8).finished();
  const Dataset d = sample(make_vmf(mu, 10.0), 4000, rng);
  for (double g : {0.0, 0.05}) {
    const FitResult f = vmf_fixed_point(d, g, VmfParams{(Vec(3) << 1.0, 0.0, 0.0).finished(), 1.0});
    const auto& p = std::get<VmfParams>(f.params.params);
    CHECK(f.converged);
    CHECK(p.mu.dot(mu) > 0.999);
  }
  // gamma = 0 fixed point solves the classical sphere score-matching equation.
  const FitResult f0 = vmf_fixed_point(d, 0.0, VmfParams{mu, 5.0});
  CHECK(std::get<VmfParams>(f0.params.params).kappa == doctest::Approx(10.0).epsilon(0.08));
}

TEST_CASE("quartic MLE and gamma estimator are consistent") {
  Rng rng(21);
  const Dataset d = sample(make_quartic(0.0, 2.0, -0.5), 10000, rng);
  const Vec truth = (Vec(3) << 0.0, 2.0, -0.5).finished();
  const Vec mle = pack_params(quartic_mle(d, QuarticParams{0.0, 1.0, -1.0}).params);
  CHECK((mle - truth).cwiseAbs().maxCoeff() < 0.1);
  const Vec sm = pack_params(quartic_fit(d, 0.3).params);
  CHECK((sm - truth).cwiseAbs().maxCoeff() < 0.15);
}

TEST_CASE("mixture fits on clean data") {
  Rng rng(31);
  const Dataset d = sample(nmm_truth(), 1500, rng);
  const FitResult em = nmm_em_mle(d, nmm_initialize(d, 2));
  const FitResult st = nmm_fit(d, 2, 0.3, HomotopySchedule::linear(0.3, 3));
  for (const auto* f : {&em, &st}) {
    const auto& p = std::get<MixtureParams>(f->params.params);
    const double m0 = std::min(p.means[0](0), p.means[1](0)), m1 = std::max(p.means[0](0), p.means[1](0));
    CHECK(m0 == doctest::Approx(-2.0).epsilon(0.1));
    CHECK(m1 == doctest::Approx(2.0).epsilon(0.1));
  }
  const HomotopySchedule s = HomotopySchedule::linear(0.3, 3);
  REQUIRE(s.gamma_path.size() == 4);
  CHECK(s.gamma_path.front() == 0.0);
  CHECK(s.gamma_path.back() == 0.3);
}

TEST_CASE("pack and unpack round-trip") {
  Mat B(3, 3);
  B << 1.0, 0.2, 0.0, 0.2, -0.4, 0.1, 0.0, 0.1, -0.6;
  Mat prec(2, 2);
  prec << 1.2, 0.3, 0.3, 0.7;
  const std::vector<ModelSpec> models = {make_gaussian((Vec(2) << 0.5, -0.5).finished(), prec),
                                         make_vmf((Vec(3) << 0.0, 1.0, 0.0).finished(), 3.0),
                                         make_fisher_bingham((Vec(3) << 0.5, -1.0, 2.0).finished(), B), nmm_truth(),
                                         make_quartic(0.1, 2.0, -0.5)};
  for (const auto& m : models) {
    const Vec th = pack_params(m);
    CHECK((pack_params(unpack_params(m, th)) - th).norm() < 1e-12);
  }
}

TEST_CASE("normalizer invariance of the estimating equations and fits") {
  Rng rng(41);
  const Dataset d = sample(make_quartic(0.0, 2.0, -0.5), 400, rng);
  ModelSpec m = make_quartic(0.1, 1.8, -0.45);
  const Vec base = normalized_estimating_mean(m, d, 0.3);
  const Vec raw = estimating_mean(m, d, 0.3).values;
  const FitResult f0 = solve_moment_norm(m, d, 0.3);
  for (double c : {-50.0, -7.5, 13.0, 50.0}) {
    m.log_scale = c;
    CHECK((normalized_estimating_mean(m, d, 0.3) - base).norm() <= 1e-13 * (1.0 + base.norm()));
    CHECK((estimating_mean(m, d, 0.3).values - std::exp(0.3 * c) * raw).norm() <= 1e-12 * std::exp(0.3 * c) * raw.norm());
    const FitResult f = solve_moment_norm(m, d, 0.3);
    CHECK((pack_params(f.params) - pack_params(f0.params)).norm() <= 1e-12);
  }
}

TEST_CASE("Jacobian asymmetry shrinks with n and the population Jacobian is negative definite") {
  const ModelSpec g = normal_1d(0.0, 1.0);
  std::vector<double> ratios;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    double avg = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng(100 + s);
      avg += jacobian_symmetry_diagnostic(g, sample(g, n, rng), 0.5) / 5.0;
    }
    ratios.push_back(avg);
  }
  CHECK(ratios[1] < ratios[0]);
  CHECK(ratios[2] < ratios[1]);
  const Mat J = population_jacobian(g, 0.5, uniform_grid_1d(-14.0, 14.0, 4001));
  const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (J + J.transpose()));
  CHECK(es.eigenvalues().maxCoeff() < 0.0);
  CHECK((J - J.transpose()).norm() < 1e-8 * J.norm());
}

TEST_CASE("estimators reject invalid input") {
  CHECK_THROWS_AS(estimating_mean(normal_1d(0.0, 1.0), Dataset{}, 0.3), ArgumentError);
  CHECK_THROWS_AS(solve_moment_norm(make_quartic(0, 2, -0.5), points_1d({1.0, 2.0}), -0.1), ArgumentError);
  CHECK_THROWS(HomotopySchedule::linear(0.3, 0));
}
