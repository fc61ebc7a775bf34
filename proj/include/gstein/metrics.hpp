#pragma once

#include "gstein/models.hpp"

#include <string>
#include <vector>

namespace gstein {

enum class MetricKind { trace_rmse, integrated_rmse, mixture_rmse, param_rmse, predictive_rmse, power, type1 };

std::string metric_name(MetricKind k);

// Per-replication values with mean and stderr = sd / sqrt(R).
struct MetricReport {
  MetricKind kind = MetricKind::param_rmse;
  std::vector<double> values;
  double mean = 0.0;
  double stderr_ = 0.0;
};

MetricReport summarize(MetricKind kind, std::vector<double> values);

// sqrt(2 mean[1 - (mu_hat' mu*)^2]).
double trace_rmse(const std::vector<Vec>& estimates, const Vec& mu_star);

// sqrt(mean (v - truth)^2).
double scalar_rmse(const std::vector<double>& estimates, double truth);

// Trace RMSE of the directions plus RMSE of the concentrations.
double integrated_rmse(const std::vector<Vec>& mus, const std::vector<double>& kappas, const Vec& mu_star,
                       double kappa_star);

// sqrt(mean |theta_hat - theta*|^2) over replications.
double param_rmse(const std::vector<Vec>& estimates, const Vec& truth);

struct MixtureError {
  double rmse_pi = 0.0;
  double rmse_mu = 0.0;     // over all J d mean coordinates
  double rmse_sigma = 0.0;  // variances 1 / lambda_j
  std::vector<int> permutation;  // fit component matched to truth component j
};

// Blockwise RMSE under the label permutation minimizing the summed squared
// error of all three blocks (one permutation shared by the blocks).
MixtureError mixture_rmse(const MixtureParams& fit, const MixtureParams& truth);

// sqrt(mean_i (mu_hat_i - target_i)^2) with mu_hat_i the particle average of
// exp(alpha_0 + x_i' alpha_{1:}).
double predictive_rmse(const Mat& particles, const Mat& X, const Vec& target);

}  // namespace gstein
