#pragma once

#include "gstein/estimators.hpp"
#include "gstein/ksd.hpp"

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace gstein {

enum class ValidatorKind { residual, ksd };

struct Validator {
  ValidatorKind kind = ValidatorKind::residual;
  double gamma0 = 0.1;
  // KSD only: bandwidth shared by every fold. Unset means the median rule on
  // the full data, computed once before splitting.
  std::optional<double> bandwidth;
  EstimatorOptions estimator;  // residual only: moment functional options
};

struct CvTable {
  std::vector<double> gamma_grid;
  Mat fold_scores;  // K x |grid|, NaN marks an invalid cell
  Vec mean;
  Vec stderr_;
  std::vector<bool> dropped;  // > 20% invalid cells
  ValidatorKind validator = ValidatorKind::residual;
  double gamma0 = 0.0;
  double bandwidth = 0.0;  // KSD validator bandwidth actually used
};

struct SelectionResult {
  double gamma_argmin = 0.0;
  double gamma_one_se = 0.0;
  double score_at_selected = 0.0;  // mean validator value at gamma_one_se
  std::optional<double> stability_proportion;
};

// Fold index per observation; fold sizes differ by at most one.
std::vector<int> kfold_split(std::size_t n, int K, Rng& rng);

// Argmin and the smallest gamma with mean <= min mean + stderr(argmin), over
// the columns that were not dropped.
SelectionResult one_se_rule(const CvTable& table);

// Share of selections equal to the modal value (ties go to the smaller gamma).
double stability_proportion(const std::vector<double>& selections);

// Fits theta for one gamma on a training set.
using Fitter = std::function<FitResult(const Dataset& train, double gamma)>;

// Per-family gamma estimator seeded from `templ` (its dimension, number of
// components, or starting point).
Fitter default_fitter(const ModelSpec& templ, const EstimatorOptions& opt = {});

std::pair<CvTable, SelectionResult> cv_select(const Dataset& data, const Fitter& fit,
                                              const std::vector<double>& gamma_grid, const Validator& validator, int K,
                                              Rng& rng);

}  // namespace gstein
