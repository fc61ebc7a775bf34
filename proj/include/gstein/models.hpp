#pragma once

#include "gstein/types.hpp"

#include <string>
#include <variant>
#include <vector>

namespace gstein {

// Gaussian with unnormalized density u(x) = exp{-(x-mean)' precision (x-mean) / 2}.
struct GaussianParams {
  Vec mean;
  Mat precision;
};

// von Mises-Fisher on S^{d-1}: u(x) = exp{kappa mu'x}.
struct VmfParams {
  Vec mu;
  double kappa = 0.0;
};

// Fisher-Bingham on S^{d-1}: u(x) = exp{xi'x + x'Bx}, B symmetric and traceless.
struct FisherBinghamParams {
  Vec xi;
  Mat B;
};

// Spherical normal mixture: component j is N(means[j], I / precisions[j]).
struct MixtureParams {
  Vec weights;
  std::vector<Vec> means;
  Vec precisions;
};

// Quartic potential u(x) = exp(theta1 x + theta2 x^2 + theta3 x^4), theta3 < 0.
struct QuarticParams {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double theta3 = -1.0;
};

// Poisson log-linear regression; alpha(0) is the intercept.
struct PoissonRegParams {
  Vec alpha;
  Vec prior_variances;
};

enum class Family { gaussian, vmf, fisher_bingham, mixture, quartic, poisson_regression };

using ModelParams = std::variant<GaussianParams, VmfParams, FisherBinghamParams, MixtureParams,
                                 QuarticParams, PoissonRegParams>;

// The model handle consumed by estimators, tests and flows.
//
// `log_scale` multiplies the unnormalized density by exp(log_scale). Scores are
// unaffected; gamma-weights scale by exp(gamma * log_scale). It exists so the
// normalizer-invariance properties can be exercised on every family.
struct ModelSpec {
  ModelParams params;
  double log_scale = 0.0;

  Family family() const;
  int dim() const;
  bool spherical() const;
};

std::string family_name(Family f);
Family family_from_name(const std::string& name);

ModelSpec make_gaussian(Vec mean, Mat precision);
ModelSpec make_vmf(Vec mu, double kappa);
ModelSpec make_fisher_bingham(Vec xi, Mat B);
ModelSpec make_mixture(Vec weights, std::vector<Vec> means, Vec precisions);
ModelSpec make_quartic(double t1, double t2, double t3);
ModelSpec make_poisson_regression(Vec alpha, Vec prior_variances);

// Throws ArgumentError when the parameter invariants of the family fail.
void validate(const ModelSpec& model);

struct ModelEval {
  double log_u = 0.0;
  Vec score_x;   // ambient gradient of log u
  Mat hessian;   // ambient Hessian of log u
};

// log u, x-score and Hessian of log u at x. Spherical families return the
// ambient gradient (kappa*mu, resp. xi + 2Bx); project with sphere_grad_log.
ModelEval evaluate(const ModelSpec& model, const Vec& x);

// log u only (cheaper than evaluate for mixtures).
double log_density(const ModelSpec& model, const Vec& x);

Vec sphere_grad_log(const ModelSpec& model, const Vec& x);
double sphere_lap_log(const ModelSpec& model, const Vec& x);

// Responsibilities, component scores and mixture score at x.
struct MixtureTerms {
  double log_p = 0.0;
  Vec resp;
  Mat comp_scores;  // d x J, column j is s_j(x) = lambda_j (mu_j - x)
  Vec score;        // sum_j r_j s_j
};
MixtureTerms mixture_terms(const MixtureParams& m, const Vec& x);

// Exact (Gaussian, mixture, vMF, Poisson-regression) or grid/rejection (quartic,
// Fisher-Bingham) sampler. Deterministic given the generator state.
Dataset sample(const ModelSpec& model, std::size_t n, Rng& rng);

// Wood's tangent-normal rejection sampler for vMF(mu, kappa).
Vec sample_vmf(const Vec& mu, double kappa, Rng& rng);

// Interval [lo, hi] where log u(x) of a quartic exceeds max - drop.
std::pair<double, double> quartic_support(const QuarticParams& q, double drop = 40.0);

}  // namespace gstein
