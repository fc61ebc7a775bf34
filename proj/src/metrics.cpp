#include "gstein/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gstein {

std::string metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::trace_rmse: return "trace-rmse";
    case MetricKind::integrated_rmse: return "integrated-rmse";
    case MetricKind::mixture_rmse: return "mixture-rmse";
    case MetricKind::param_rmse: return "param-rmse";
    case MetricKind::predictive_rmse: return "predictive-rmse";
    case MetricKind::power: return "power";
    case MetricKind::type1: return "type1";
  }
  return "unknown";
}

MetricReport summarize(MetricKind kind, std::vector<double> values) {
  MetricReport r;
  r.kind = kind;
  r.values = std::move(values);
  const auto R = r.values.size();
  if (R == 0) {
    r.mean = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / static_cast<double>(R);
  if (R > 1) {
    double ss = 0.0;
    for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(ss / static_cast<double>(R - 1)) / std::sqrt(static_cast<double>(R));
  }
  return r;
}

double trace_rmse(const std::vector<Vec>& estimates, const Vec& mu_star) {
  if (estimates.empty()) throw ArgumentError("trace_rmse: no estimates");
  double s = 0.0;
  for (const Vec& m : estimates) {
    const double c = m.dot(mu_star);
    s += 1.0 - c * c;
  }
  return std::sqrt(std::max(0.0, 2.0 * s / static_cast<double>(estimates.size())));
}

double scalar_rmse(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw ArgumentError("scalar_rmse: no estimates");
  double s = 0.0;
  for (double v : estimates) s += (v - truth) * (v - truth);
  return std::sqrt(s / static_cast<double>(estimates.size()));
}

double integrated_rmse(const std::vector<Vec>& mus, const std::vector<double>& kappas, const Vec& mu_star,
                       double kappa_star) {
  return trace_rmse(mus, mu_star) + scalar_rmse(kappas, kappa_star);
}

double param_rmse(const std::vector<Vec>& estimates, const Vec& truth) {
  if (estimates.empty()) throw ArgumentError("param_rmse: no estimates");
  double s = 0.0;
  for (const Vec& e : estimates) s += (e - truth).squaredNorm();
  return std::sqrt(s / static_cast<double>(estimates.size()));
}

MixtureError mixture_rmse(const MixtureParams& fit, const MixtureParams& truth) {
  const auto J = truth.weights.size();
  if (fit.weights.size() != J || fit.means.size() != static_cast<std::size_t>(J) || fit.precisions.size() != J)
    throw ArgumentError("mixture_rmse: component counts differ");
  if (J == 0) throw ArgumentError("mixture_rmse: empty mixture");
  const auto d = truth.means.front().size();
  std::vector<int> perm(static_cast<std::size_t>(J));
  std::iota(perm.begin(), perm.end(), 0);
  MixtureError best;
  double best_total = std::numeric_limits<double>::infinity();
  do {
    double sp = 0.0, sm = 0.0, ss = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      const auto k = perm[static_cast<std::size_t>(j)];
      sp += std::pow(fit.weights(k) - truth.weights(j), 2);
      sm += (fit.means[static_cast<std::size_t>(k)] - truth.means[static_cast<std::size_t>(j)]).squaredNorm();
      ss += std::pow(1.0 / fit.precisions(k) - 1.0 / truth.precisions(j), 2);
    }
    if (sp + sm + ss < best_total) {
      best_total = sp + sm + ss;
      const double Jd = static_cast<double>(J);
      best.rmse_pi = std::sqrt(sp / Jd);
      best.rmse_mu = std::sqrt(sm / (Jd * static_cast<double>(d)));
      best.rmse_sigma = std::sqrt(ss / Jd);
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double predictive_rmse(const Mat& particles, const Mat& X, const Vec& target) {
  if (particles.rows() == 0) throw ArgumentError("predictive_rmse: no particles");
  if (particles.cols() != X.cols() + 1) throw ArgumentError("predictive_rmse: dimension mismatch");
  if (target.size() != X.rows()) throw ArgumentError("predictive_rmse: target length mismatch");
  Vec z = Vec::Zero(X.rows());
  Vec mu = Vec::Zero(X.rows());
  for (Eigen::Index m = 0; m < particles.rows(); ++m) {
    z = X * particles.row(m).tail(X.cols()).transpose();
    z.array() += particles(m, 0);
    mu.array() += z.array().exp();
  }
  mu /= static_cast<double>(particles.rows());
  return std::sqrt((mu - target).squaredNorm() / static_cast<double>(X.rows()));
}

}  // namespace gstein
