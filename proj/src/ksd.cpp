#include "gstein/ksd.hpp"

#include <algorithm>
#include <cmath>

namespace gstein {

void KernelSpec::validate() const {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ArgumentError("kernel bandwidth must be positive");
}

double KernelSpec::operator()(const Vec& x, const Vec& y) const {
  return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

double median_bandwidth(const Mat& x) {
  const auto n = x.rows();
  if (n < 2) throw ArgumentError("median_bandwidth: need at least two points");
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d2.push_back((x.row(i) - x.row(j)).squaredNorm());
  const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  double med = *mid;
  if (d2.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d2.begin(), mid));
  if (!(med > 0.0)) return 1.0;
  return std::sqrt(0.5 * med * (1.0 + 1e-8));
}

double median_bandwidth(const Dataset& data) { return median_bandwidth(data.x); }

double stein_kernel_euclidean(const Vec& sx, const Vec& sy, const Vec& x, const Vec& y, double gamma, double h) {
  const double h2 = h * h;
  const Vec r = x - y;
  const double r2 = r.squaredNorm();
  const double k = std::exp(-r2 / (2.0 * h2));
  const double g1 = gamma + 1.0;
  const double d = static_cast<double>(x.size());
  // grad_x K = -r K / h^2, grad_y K = r K / h^2, tr grad_x grad_y K = K (d/h^2 - r^2/h^4)
  return g1 * g1 * sx.dot(sy) * k + g1 * sx.dot(r) * k / h2 - g1 * sy.dot(r) * k / h2 +
         k * (d / h2 - r2 / (h2 * h2));
}

namespace {

// Allocation-free Euclidean kernel on raw coordinates.
double stein_kernel_raw(const double* sx, const double* sy, const double* x, const double* y, Eigen::Index d,
                        double gamma, double h2) {
  double r2 = 0.0, ss = 0.0, sxr = 0.0, syr = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double r = x[k] - y[k];
    r2 += r * r;
    ss += sx[k] * sy[k];
    sxr += sx[k] * r;
    syr += sy[k] * r;
  }
  const double k = std::exp(-r2 / (2.0 * h2));
  const double g1 = gamma + 1.0;
  return g1 * g1 * ss * k + g1 * sxr * k / h2 - g1 * syr * k / h2 + k * (static_cast<double>(d) / h2 - r2 / (h2 * h2));
}

// a(x) = (gamma+1) P_x s(x) - (d-1) x for the tangent field P_x g.
Vec sphere_drift(const ModelSpec& q, double gamma, const Vec& x) {
  const double d = static_cast<double>(x.size());
  return (gamma + 1.0) * sphere_grad_log(q, x) - (d - 1.0) * x;
}

double stein_kernel_sphere(const Vec& ax, const Vec& ay, const Vec& x, const Vec& y, double h) {
  const auto d = x.size();
  const double h2 = h * h;
  const Vec r = x - y;
  const double k = std::exp(-r.squaredNorm() / (2.0 * h2));
  const Mat Px = Mat::Identity(d, d) - x * x.transpose();
  const Mat Py = Mat::Identity(d, d) - y * y.transpose();
  const Vec gx = -r * k / h2;  // grad_x K
  const Vec gy = r * k / h2;   // grad_y K
  const Vec pxr = Px * r;
  const Vec pyr = Py * r;
  const double trace = k / h2 * (Px * Py).trace() - k / (h2 * h2) * pxr.dot(pyr);
  return ax.dot(ay) * k + ax.dot(Py * gy) + ay.dot(Px * gx) + trace;
}

struct PointTerms {
  Mat drift;  // d x n (scores, or sphere drift)
  Vec log_u;
};

PointTerms point_terms(const Dataset& data, const ModelSpec& q, double gamma) {
  const auto n = data.x.rows();
  PointTerms t;
  t.drift.resize(data.x.cols(), n);
  t.log_u.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec x = data.x.row(i).transpose();
    const ModelEval e = evaluate(q, x);
    t.log_u(i) = e.log_u;
    t.drift.col(i) = q.spherical() ? sphere_drift(q, gamma, x) : e.score_x;
  }
  return t;
}

}  // namespace

double stein_kernel(const ModelSpec& q, double gamma, const KernelSpec& K, const Vec& x, const Vec& y) {
  K.validate();
  if (q.spherical()) return stein_kernel_sphere(sphere_drift(q, gamma, x), sphere_drift(q, gamma, y), x, y, K.bandwidth);
  return stein_kernel_euclidean(evaluate(q, x).score_x, evaluate(q, y).score_x, x, y, gamma, K.bandwidth);
}

Mat weighted_stein_gram(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K, bool* clamped) {
  K.validate();
  if (data.dim() != q.dim()) throw ArgumentError("ksd: data dimension does not match the model");
  const PointTerms t = point_terms(data, q, gamma);
  const auto n = data.x.rows();
  Vec w(n);
  bool cl = false;
  for (Eigen::Index i = 0; i < n; ++i) w(i) = gamma == 0.0 ? 1.0 : guarded_exp(gamma * t.log_u(i), &cl);
  if (clamped) *clamped = cl;
  Mat H(n, n);
  if (!q.spherical()) {
    const Mat xt = data.x.transpose();
    const auto d = xt.rows();
    const double h2 = K.bandwidth * K.bandwidth;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j)
        H(i, j) = H(j, i) =
            w(i) * w(j) * stein_kernel_raw(&t.drift(0, i), &t.drift(0, j), &xt(0, i), &xt(0, j), d, gamma, h2);
    return H;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec xi = data.x.row(i).transpose();
    for (Eigen::Index j = i; j < n; ++j) {
      const Vec xj = data.x.row(j).transpose();
      H(i, j) = H(j, i) = w(i) * w(j) * stein_kernel_sphere(t.drift.col(i), t.drift.col(j), xi, xj, K.bandwidth);
    }
  }
  return H;
}

KsdResult ksd_ustat(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  const auto n = data.x.rows();
  if (n < 2) throw ArgumentError("ksd_ustat: need n >= 2");
  KsdResult r;
  const Mat H = weighted_stein_gram(data, q, gamma, K, &r.clamped);
  double off = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) off += H(i, j);
  r.statistic = 2.0 * off / (static_cast<double>(n) * static_cast<double>(n - 1));
  r.n = static_cast<std::size_t>(n);
  r.gamma = gamma;
  r.bandwidth_used = K.bandwidth;
  return r;
}

GofTestResult decide(double statistic, std::vector<double> replicates, double alpha) {
  if (replicates.empty()) throw ArgumentError("decide: no bootstrap replicates");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("alpha must lie in (0, 1)");
  GofTestResult out;
  out.statistic = statistic;
  out.bootstrap_replicates = static_cast<int>(replicates.size());
  out.calibration_warning = static_cast<double>(replicates.size()) < 1.0 / alpha;
  std::sort(replicates.begin(), replicates.end());
  const auto B = replicates.size();
  auto idx = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(B)));
  idx = std::clamp<std::size_t>(idx, 1, B) - 1;
  out.critical_value = replicates[idx];
  const auto ge = static_cast<double>(replicates.end() - std::lower_bound(replicates.begin(), replicates.end(), statistic));
  out.p_value = (1.0 + ge) / (static_cast<double>(B) + 1.0);
  out.reject = statistic > out.critical_value;
  return out;
}

std::vector<double> null_statistics(const ModelSpec& q, double gamma, const KernelSpec& K,
                                    const NullSampler& null_sampler, std::size_t n, int B, Rng& rng) {
  if (!null_sampler) throw ArgumentError("null-simulation calibration needs a null sampler");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) out.push_back(ksd_ustat(null_sampler(n, rng), q, gamma, K).statistic);
  return out;
}

GofTestResult gof_test(const Dataset& data, const ModelSpec& q, double gamma, const KernelSpec& K, Calibration cal,
                       const NullSampler& null_sampler, int B, double alpha, Rng& rng) {
  if (B < 1) throw ArgumentError("gof_test: B must be >= 1");
  if (cal == Calibration::null_simulation) {
    const double stat = ksd_ustat(data, q, gamma, K).statistic;
    return decide(stat, null_statistics(q, gamma, K, null_sampler, data.size(), B, rng), alpha);
  }
  const Mat H = weighted_stein_gram(data, q, gamma, K);
  const auto n = H.rows();
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  const double stat = H.sum() / nn;
  std::bernoulli_distribution coin(0.5);
  std::vector<double> reps;
  reps.reserve(static_cast<std::size_t>(B));
  Vec e(n);
  for (int b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) e(i) = coin(rng) ? 1.0 : -1.0;
    reps.push_back(e.dot(H * e) / nn);
  }
  return decide(stat, std::move(reps), alpha);
}

}  // namespace gstein
