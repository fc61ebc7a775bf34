#include "gstein/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gstein {

namespace {

const std::vector<std::pair<ContaminationKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ContaminationKind, std::string>> names = {
      {ContaminationKind::none, "none"},
      {ContaminationKind::antipodal_vmf, "antipodal-vmf"},
      {ContaminationKind::student_t, "student-t"},
      {ContaminationKind::quartic_outlier, "quartic-outlier"},
      {ContaminationKind::gaussian_shift, "gaussian-shift"},
      {ContaminationKind::covariate, "covariate"},
      {ContaminationKind::outcome, "outcome"},
  };
  return names;
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool regression_spec(ContaminationKind k) { return k == ContaminationKind::covariate || k == ContaminationKind::outcome; }

std::size_t contaminant_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

}  // namespace

std::string contamination_name(ContaminationKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "none";
}

ContaminationKind contamination_from_name(const std::string& name) {
  for (const auto& [kind, n] : kind_names())
    if (n == name) return kind;
  throw ArgumentError("unknown contamination kind '" + name + "'");
}

double ContaminationSpec::param(const std::string& key, double fallback) const {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

void ContaminationSpec::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("contamination rate must lie in [0, 1)");
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

Vec draw_contaminant(const ModelSpec& truth, const ContaminationSpec& spec, Rng& rng) {
  const int d = truth.dim();
  switch (spec.kind) {
    case ContaminationKind::antipodal_vmf: {
      const auto& v = std::get<VmfParams>(truth.params);
      return sample_vmf(-v.mu, spec.param("kappa", 50.0), rng);
    }
    case ContaminationKind::student_t: {
      std::student_t_distribution<double> t(spec.param("df", 4.0));
      const double s = spec.param("scale", 1.0);
      Vec x(d);
      for (int k = 0; k < d; ++k) x(k) = s * t(rng);
      return x;
    }
    case ContaminationKind::quartic_outlier: {
      std::normal_distribution<double> nd(spec.param("location", 0.0), spec.param("scale", 10.0));
      Vec x(d);
      for (int k = 0; k < d; ++k) x(k) = nd(rng);
      return x;
    }
    case ContaminationKind::gaussian_shift: {
      std::normal_distribution<double> nd(0.0, 1.0);
      Vec x(d);
      for (int k = 0; k < d; ++k) x(k) = spec.param("center", 5.0) + nd(rng);
      return x;
    }
    default:
      break;
  }
  throw ArgumentError("draw_contaminant: '" + contamination_name(spec.kind) + "' has no point contaminant");
}

Dataset generate_contaminated(const ModelSpec& truth, std::size_t n, const std::vector<ContaminationSpec>& specs,
                              Rng& rng) {
  for (const auto& s : specs) s.validate();
  if (truth.family() == Family::poisson_regression) {
    Dataset data = sample(truth, n, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    data.provenance.contaminated.assign(n, false);
    Eigen::VectorXi& y = *data.y;
    const double mean_y = y.cast<double>().mean();
    std::uniform_int_distribution<Eigen::Index> column(0, data.x.cols() - 1);
    double top_rate = 0.0;
    for (const auto& s : specs) {
      if (s.kind == ContaminationKind::none || s.rate == 0.0) continue;
      if (!regression_spec(s.kind)) throw ArgumentError("regression data take covariate or outcome contamination only");
      top_rate = std::max(top_rate, s.rate);
      const std::size_t m = contaminant_count(s.rate, n);
      for (std::size_t k = 0; k < m; ++k) {
        const auto i = static_cast<Eigen::Index>(perm[k]);
        data.provenance.contaminated[perm[k]] = true;
        if (s.kind == ContaminationKind::covariate) {
          data.x(i, column(rng)) *= s.param("factor", 6.0);
        } else {
          std::poisson_distribution<int> spike(s.param("multiplier", 10.0) * mean_y);
          y(i) += spike(rng);
        }
      }
    }
    data.provenance.contamination = top_rate;
    return data;
  }

  ContaminationSpec active;
  for (const auto& s : specs) {
    if (s.kind == ContaminationKind::none || s.rate == 0.0) continue;
    if (active.kind != ContaminationKind::none) throw ArgumentError("one point contaminant per dataset");
    active = s;
  }
  const std::size_t m = contaminant_count(active.rate, n);
  Dataset data = sample(truth, n - m, rng);
  data.x.conservativeResize(static_cast<Eigen::Index>(n), Eigen::NoChange);
  for (std::size_t k = n - m; k < n; ++k)
    data.x.row(static_cast<Eigen::Index>(k)) = draw_contaminant(truth, active, rng).transpose();
  std::vector<bool> flags(n, false);
  for (std::size_t k = n - m; k < n; ++k) flags[k] = true;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out = data.subset(perm);
  out.provenance.contaminated.clear();
  for (std::size_t k = 0; k < n; ++k) out.provenance.contaminated.push_back(flags[perm[k]]);
  out.provenance.contamination = active.rate;
  return out;
}

Dataset sample_mixture_contaminated(const ModelSpec& truth, std::size_t n, const ContaminationSpec& spec, Rng& rng) {
  spec.validate();
  Dataset data = sample(truth, n, rng);
  data.provenance.contaminated.assign(n, false);
  data.provenance.contamination = spec.rate;
  if (spec.kind == ContaminationKind::none || spec.rate == 0.0) return data;
  std::bernoulli_distribution coin(spec.rate);
  for (std::size_t i = 0; i < n; ++i) {
    if (!coin(rng)) continue;
    data.x.row(static_cast<Eigen::Index>(i)) = draw_contaminant(truth, spec, rng).transpose();
    data.provenance.contaminated[i] = true;
  }
  return data;
}

}  // namespace gstein
