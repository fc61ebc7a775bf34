#pragma once

#include "gstein/optimize.hpp"
#include "gstein/quadrature.hpp"

#include <string>
#include <vector>

namespace gstein {

// kappa update for the vMF equations. `displayed` solves
// (d-1) m1 - kappa (1 - m2) = 0; `stein_consistent` solves the weighted sphere
// Stein identity (d-1) m1 - (gamma+1) kappa (1 - m2) = 0, which is unbiased at
// the truth for every gamma.
enum class VmfKappaRule { displayed, stein_consistent };

struct EstimatorOptions {
  VmfKappaRule vmf_rule = VmfKappaRule::displayed;
};

struct MomentVector {
  Vec values;
  std::vector<std::string> block_index;
};

struct FitResult {
  ModelSpec params;
  int iterations = 0;
  bool converged = false;
  double final_residual = 0.0;
  std::vector<Vec> trace;
  std::vector<std::string> flags;
};

struct HomotopySchedule {
  std::vector<double> gamma_path;
  int inner_iterations = 400;

  // 0 = g_0 < ... < g_{stages} = target, equally spaced.
  static HomotopySchedule linear(double target, int stages, int inner_iterations = 400);
  void validate() const;
};

// Unconstrained coordinates used by the solvers and the Jacobian diagnostic.
//  gaussian: (mean, vech(precision)) with vech over the lower triangle, column-major
//  vmf:      (mu, kappa)
//  fisher_bingham: (xi, B_11..B_{d-1,d-1}, B_kl for k<l)
//  mixture:  (softmax logits 1..J-1, means, log precisions)
//  quartic:  (theta1, theta2, theta3)
Vec pack_params(const ModelSpec& model);
ModelSpec unpack_params(const ModelSpec& templ, const Vec& theta);

// Per-observation estimating function U_gamma(theta, x) for the family of `model`.
Vec estimating_function(const ModelSpec& model, const Vec& x, double gamma, const EstimatorOptions& opt = {});

// (1/n) sum U_gamma(theta, x_i) with u^gamma weights. The vMF and FB equations
// use self-normalized weights as written for those families.
MomentVector estimating_mean(const ModelSpec& model, const Dataset& data, double gamma,
                             const EstimatorOptions& opt = {});

// sum w_i U_i / sum w_i with w_i = exp(gamma (log u_i - max log u)). Same roots
// as estimating_mean and invariant to the scale of u.
Vec normalized_estimating_mean(const ModelSpec& model, const Dataset& data, double gamma,
                               const EstimatorOptions& opt = {});

struct FixedPointConfig {
  double tol = 1e-8;
  int max_iter = 500;
  bool keep_trace = false;
};

FitResult gaussian_fixed_point(const Dataset& data, double gamma, const GaussianParams& init,
                               const FixedPointConfig& cfg = {});

inline constexpr double kKappaMax = 1e3;

FitResult vmf_fixed_point(const Dataset& data, double gamma, const VmfParams& init, const FixedPointConfig& cfg = {},
                          VmfKappaRule rule = VmfKappaRule::displayed);

// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa), continued fraction.
double bessel_ratio(double d, double kappa);
FitResult vmf_mle(const Dataset& data);

enum class MomentSolver { levenberg_marquardt, nelder_mead };

struct MomentNormConfig {
  double tol = 1e-8;
  MomentSolver solver = MomentSolver::levenberg_marquardt;
  // Levenberg-Marquardt stays local to the start; jittered restarts are only
  // tried when it fails to converge. Nelder-Mead always runs every restart.
  int restarts = 5;
  double restart_scale = 0.25;  // relative jitter of restart points
  LeastSquaresConfig lm{};
  NelderMeadConfig nm{0.1, 1e-10, 4000};
  std::uint64_t seed = 12345;
};

// Minimizes |sum w_i U_i / sum w_i|^2 over the packed coordinates, locally
// from `init` by default.
FitResult solve_moment_norm(const ModelSpec& init, const Dataset& data, double gamma, const MomentNormConfig& cfg = {},
                            const EstimatorOptions& opt = {});

struct NmmInit {
  int max_reseeds = 10;
  double trim_fraction = 0.1;
  std::uint64_t seed = 7;
};

// Trimmed k-means centers with within-cluster robust variance.
MixtureParams nmm_initialize(const Dataset& data, int J, const NmmInit& init = {});

FitResult nmm_fit(const Dataset& data, int J, double gamma_target, const HomotopySchedule& schedule,
                  const NmmInit& init = {}, const MomentNormConfig& cfg = {});
FitResult nmm_fit_from(const Dataset& data, const MixtureParams& start, const HomotopySchedule& schedule,
                       const MomentNormConfig& cfg = {});

FitResult nmm_em_mle(const Dataset& data, const MixtureParams& init, double tol = 1e-8, int max_iter = 1000);

// Quartic gamma estimator: solve_moment_norm from each start in turn, keeping
// the first converged root (the best residual when none converges). The
// default starts are diffuse shapes that keep clear of the theta3 -> 0 root
// a heavy-tailed sample can create.
std::vector<QuarticParams> default_quartic_starts();
FitResult quartic_fit(const Dataset& data, double gamma, const std::vector<QuarticParams>& starts = default_quartic_starts(),
                      const MomentNormConfig& cfg = {});

// Maximizes the quadrature log-likelihood of the quartic family.
FitResult quartic_mle(const Dataset& data, const QuarticParams& init, const NelderMeadConfig& nm = {0.2, 1e-9, 4000});

// log of int exp(theta1 x + theta2 x^2 + theta3 x^4) dx by quadrature.
double quartic_log_normalizer(const QuarticParams& q);

// |J - J'|_F / |J|_F for the central-difference Jacobian of estimating_mean.
double jacobian_symmetry_diagnostic(const ModelSpec& model, const Dataset& data, double gamma);
Mat estimating_jacobian(const ModelSpec& model, const Dataset& data, double gamma);

// E_p[S_theta U'] by quadrature, S_theta the normalized parameter score.
Mat population_jacobian(const ModelSpec& model, double gamma, const QuadratureGrid& grid);

}  // namespace gstein
