#pragma once

#include "gstein/models.hpp"

#include <functional>
#include <vector>

namespace gstein {

// RBF kernel K(x, x') = exp(-|x - x'|^2 / (2 h^2)).
struct KernelSpec {
  double bandwidth = 1.0;

  void validate() const;
  double operator()(const Vec& x, const Vec& y) const;
};

// h with h^2 = median pairwise squared distance / 2 (times 1 + 1e-8); 1 when
// the median is zero. Rows are points.
double median_bandwidth(const Mat& x);
double median_bandwidth(const Dataset& data);

// Closed-form gamma Stein kernel. Spherical models use tangential scores with
// the curvature term and projected kernel derivatives.
double stein_kernel(const ModelSpec& q, double gamma, const KernelSpec& K, const Vec& x, const Vec& y);

// Euclidean kernel from precomputed scores.
double stein_kernel_euclidean(const Vec& sx, const Vec& sy, const Vec& x, const Vec& y, double gamma, double h);

struct KsdResult {
  double statistic = 0.0;
  std::size_t n = 0;
  double gamma = 0.0;
  double bandwidth_used = 0.0;
  bool clamped = false;
};

// (1 / (n (n-1))) sum_{i != j} u_i^gamma u_j^gamma u(x_i, x_j).
KsdResult ksd_ustat(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K);

// Pairwise matrix H_ij = u_i^gamma u_j^gamma u(x_i, x_j) (diagonal included).
Mat weighted_stein_gram(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K,
                        bool* clamped = nullptr);

enum class Calibration { null_simulation, multiplier };

using NullSampler = std::function<Dataset(std::size_t n, Rng& rng)>;

struct GofTestResult {
  double statistic = 0.0;
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  int bootstrap_replicates = 0;
  bool calibration_warning = false;
};

// Null-simulation mode draws B datasets from `null_sampler` and recomputes the
// U-statistic with the same bandwidth. Multiplier mode compares the
// V-statistic with Rademacher-weighted V-statistic replicates.
GofTestResult gof_test(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K, Calibration cal,
                       const NullSampler& null_sampler, int B, double alpha, Rng& rng);

// B null statistics of size-n samples from `null_sampler`.
std::vector<double> null_statistics(const ModelSpec& q, double gamma, const KernelSpec& K,
                                    const NullSampler& null_sampler, std::size_t n, int B, Rng& rng);

// Decision from a statistic and replicate values: critical value at the
// empirical (1 - alpha) quantile, p = (1 + #{boot >= stat}) / (B + 1).
GofTestResult decide(double statistic, std::vector<double> replicates, double alpha);

}  // namespace gstein
