#pragma once

#include "gstein/ksd.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gstein {

struct ParticleEnsemble {
  Mat positions;  // M x d, one particle per row
  int step_count = 0;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }
};

// M particles drawn from N(center, scale^2 I).
ParticleEnsemble init_ensemble(int M, const Vec& center, double scale, std::uint64_t seed);

// log u and its gradient at a particle. `gamma` is the current annealing level;
// posterior targets ignore it, gamma-loss targets rebuild their loss with it.
struct TargetSpec {
  enum class Kind { posterior, gamma_loss };
  Kind kind = Kind::posterior;
  std::function<double(const Vec& x, double gamma, Vec* grad)> eval;
  std::string name;

  double log_u(const Vec& x, double gamma = 0.0) const { return eval(x, gamma, nullptr); }
  Vec grad_log_u(const Vec& x, double gamma = 0.0) const;
};

// Target exp(log u) of a Euclidean model (scores from evaluate()).
TargetSpec model_target(const ModelSpec& q);

// Particle weights: softmax(gamma log u), or u^gamma / M when `softmax` is false.
// gamma = 0 gives exactly 1/M.
Vec particle_weights(const Vec& log_u, double gamma, bool softmax = true);

// phi(x_i) = (1/M) sum_j [K(x_j, x_i) s(x_j) + grad_{x_j} K(x_j, x_i)].
Mat svgd_velocity(const Mat& positions, const Mat& scores, double bandwidth);
Mat svgd_velocity(const ParticleEnsemble& ens, const TargetSpec& target, const KernelSpec& K);

// phi_gamma(x_i) = sum_j w_j [(gamma+1) K(x_j, x_i) s(x_j) + grad_{x_j} K(x_j, x_i)].
Mat gamma_svgd_velocity(const Mat& positions, const Mat& scores, const Vec& log_u, double gamma, double bandwidth,
                        bool softmax = true);
Mat gamma_svgd_velocity(const ParticleEnsemble& ens, const TargetSpec& target, double gamma, const KernelSpec& K,
                        bool softmax = true);

struct PoissonTargetValue {
  double log_u = 0.0;
  Vec grad;
  bool clamped = false;
};

// sum_i (exp(a_i) - 1) / gamma + log prior with
// a_i = gamma (y_i z_i - log y_i!) - gamma/(gamma+1) exp((gamma+1) z_i),
// z_i = alpha_0 + x_i' alpha_{1:}. The limit gamma -> 0 is the Poisson
// log-likelihood y z - exp(z) - log y!, used exactly at gamma = 0. Dropping
// log y! (include_log_factorial = false) leaves the gradient in alpha
// unchanged only at gamma = 0.
PoissonTargetValue poisson_gamma_log_target(const PoissonRegParams& alpha, const Mat& X, const Eigen::VectorXi& y,
                                            double gamma, bool include_log_factorial = true);

// Target over alpha; the loss uses the annealed gamma passed to eval.
TargetSpec poisson_target(const Vec& prior_variances, Mat X, Eigen::VectorXi y, bool include_log_factorial = true);

// Posterior mode of the gamma = 0 target by damped Newton. Used as the centre
// of the initial ensemble so particles start inside one kernel bandwidth of
// each other; particles that fall far behind under softmax weights lose their
// own drive.
Vec poisson_map(const Mat& X, const Eigen::VectorXi& y, const Vec& prior_variances, int max_iter = 100,
                double tol = 1e-10);

enum class BandwidthPolicy { median_per_iteration, frozen };

struct SvgdConfig {
  int particles = 32;
  int iterations = 220;
  double step = 0.05;
  double gamma_target = 0.0;
  double anneal_fraction = 0.6;  // gamma rises linearly over this share of T
  double rho = 0.9;     // decay of the per-coordinate squared-velocity average
  double delta = 1e-6;
  int max_halvings = 10;
  double guard_multiplier = 10.0;
  double guard_floor = 1.0;  // nats; keeps settled ensembles from freezing
  std::optional<double> projection_radius;
  bool softmax_weights = true;
  BandwidthPolicy bandwidth_policy = BandwidthPolicy::median_per_iteration;
  double frozen_bandwidth = 1.0;

  void validate() const;
  // gamma_t for t = 0..T; gamma_0 = 0 and gamma_T = gamma_target.
  double gamma_at(int t) const;
};

struct SvgdTraceEntry {
  int iteration = 0;
  double gamma = 0.0;
  double bandwidth = 0.0;
  double step = 0.0;
  int halvings = 0;
  double mean_log_u = 0.0;
  double velocity_norm = 0.0;
};

struct SvgdResult {
  ParticleEnsemble ensemble;
  std::vector<SvgdTraceEntry> trace;
  bool aborted = false;
  std::string message;
};

SvgdResult run_svgd(const SvgdConfig& cfg, const TargetSpec& target, ParticleEnsemble init);

}  // namespace gstein
