#pragma once

#include "gstein/models.hpp"

#include <map>
#include <string>
#include <vector>

namespace gstein {

enum class ContaminationKind {
  none,
  antipodal_vmf,    // vMF(-mu*, kappa) spike; params: kappa
  student_t,        // isotropic t draws; params: df, scale
  quartic_outlier,  // N(location, scale^2); params: location, scale
  gaussian_shift,   // N(center * 1, I) cluster; params: center
  covariate,        // one random covariate times factor; params: factor
  outcome,          // y += Poisson(multiplier * mean y); params: multiplier
};

std::string contamination_name(ContaminationKind k);
ContaminationKind contamination_from_name(const std::string& name);

struct ContaminationSpec {
  ContaminationKind kind = ContaminationKind::none;
  double rate = 0.0;
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const;
  void validate() const;
};

// Counter-based stream splitting: the seed of (stream, index) depends only on
// its coordinates, so replications can run in any order.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// floor(rate n) rows replaced by contaminant draws, the remaining rows drawn
// clean, then shuffled. Regression data keep the clean covariate draw and
// perturb floor(rate n) rows chosen by one permutation per dataset, so
// covariate and outcome specs at equal rates hit the same rows.
Dataset generate_contaminated(const ModelSpec& truth, std::size_t n, const std::vector<ContaminationSpec>& specs,
                              Rng& rng);

// Each point independently contaminated with probability `spec.rate`
// (mixture sampling, used for the power study's null and alternative).
Dataset sample_mixture_contaminated(const ModelSpec& truth, std::size_t n, const ContaminationSpec& spec, Rng& rng);

// Single contaminant draw for a non-regression spec.
Vec draw_contaminant(const ModelSpec& truth, const ContaminationSpec& spec, Rng& rng);

}  // namespace gstein
