#pragma once

#include <string>
#include <vector>

namespace gstein {

struct VerifyCheck {
  std::string group;  // identity, inner-product, first-variation
  std::string name;
  double value = 0.0;      // discrepancy
  double threshold = 0.0;  // pass when value < threshold
  bool passed = false;
};

// Quadrature checks of the weighted Stein identity (12 cases), the mixed
// inner-product identity (6 model pairs) and the first-variation link on
// corrected fields (4 cases).
std::vector<VerifyCheck> run_identity_suite();

}  // namespace gstein
