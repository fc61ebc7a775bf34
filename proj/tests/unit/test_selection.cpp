#include "helpers.hpp"

#include "gstein/scenario.hpp"
#include "gstein/selection.hpp"

#include <doctest.h>

using namespace gstein;

namespace {

CvTable table(std::vector<double> grid, std::vector<double> mean, std::vector<double> se) {
  CvTable t;
  t.gamma_grid = grid;
  t.mean = Eigen::Map<Vec>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  t.stderr_ = Eigen::Map<Vec>(se.data(), static_cast<Eigen::Index>(se.size()));
  t.dropped.assign(grid.size(), false);
  return t;
}

}  // namespace

TEST_CASE("k-fold split balances fold sizes") {
  Rng rng(1);
  const std::vector<int> f = kfold_split(103, 5, rng);
  std::vector<int> sizes(5, 0);
  for (int k : f) ++sizes[static_cast<std::size_t>(k)];
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  Rng a(9), b(9);
  CHECK(kfold_split(50, 4, a) == kfold_split(50, 4, b));
  CHECK_THROWS_AS(kfold_split(3, 5, rng), ArgumentError);
}

TEST_CASE("one-SE rule picks the smallest gamma within one standard error") {
  const SelectionResult s = one_se_rule(table({0.0, 0.05, 0.1, 0.2}, {1.0, 0.5, 0.45, 0.8}, {0.2, 0.1, 0.1, 0.1}));
  CHECK(s.gamma_argmin == 0.1);
  CHECK(s.gamma_one_se == 0.05);
  CHECK(s.score_at_selected == 0.5);

  CvTable t = table({0.0, 0.05, 0.1}, {0.2, 0.5, 0.45}, {0.01, 0.1, 0.1});
  t.dropped[0] = true;
  const SelectionResult d = one_se_rule(t);
  CHECK(d.gamma_argmin == 0.1);
  CHECK(d.gamma_one_se == 0.05);
}

TEST_CASE("stability proportion") {
  CHECK(stability_proportion({0.05, 0.05, 0.1, 0.1}) == 0.5);
  CHECK(stability_proportion({0.1, 0.1, 0.05}) == doctest::Approx(2.0 / 3.0));
  CHECK(stability_proportion({0.0}) == 1.0);
}

TEST_CASE("cross-validated selection on contaminated vMF data") {
  const ModelSpec truth = make_vmf((Vec(3) << 1.0, 0.0, 0.0).finished(), 10.0);
  Rng rng(3);
  const Dataset d = generate_contaminated(truth, 200, {{ContaminationKind::antipodal_vmf, 0.1, {}}}, rng);
  const std::vector<double> grid = {0.0, 0.05, 0.1, 0.2};
  for (auto kind : {ValidatorKind::ksd, ValidatorKind::residual}) {
    Validator v;
    v.kind = kind;
    v.gamma0 = 0.05;
    Rng folds(5);
    const auto [tab, sel] = cv_select(d, default_fitter(truth), grid, v, 5, folds);
    CHECK(tab.fold_scores.rows() == 5);
    CHECK(tab.fold_scores.cols() == 4);
    CHECK(tab.mean.allFinite());
    CHECK(std::find(grid.begin(), grid.end(), sel.gamma_one_se) != grid.end());
    CHECK(sel.gamma_one_se <= sel.gamma_argmin);
    if (kind == ValidatorKind::ksd) {
      CHECK(tab.bandwidth > 0.0);
      // Any gamma > 0 scores better than the unweighted fit under contamination.
      CHECK(sel.gamma_argmin > 0.0);
    }
  }
}

TEST_CASE("selection is deterministic given the fold generator") {
  const ModelSpec truth = make_quartic(0.0, 2.0, -0.5);
  Rng rng(8);
  const Dataset d = sample(truth, 150, rng);
  Validator v;
  v.kind = ValidatorKind::ksd;
  Rng a(2), b(2);
  const auto r1 = cv_select(d, default_fitter(truth), {0.0, 0.3}, v, 3, a);
  const auto r2 = cv_select(d, default_fitter(truth), {0.0, 0.3}, v, 3, b);
  CHECK((r1.first.mean - r2.first.mean).norm() == 0.0);
}
