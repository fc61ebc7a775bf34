#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gstein {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Error hierarchy. Everything thrown by the toolkit derives from Error so
// callers (CLI, Python bindings) can map failures to exit codes in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Point outside a model's support (e.g. off the unit sphere) or a quadrature
// grid that does not cover the density mass.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite score or field value at a specific point.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, Vec point)
      : Error(what), point_(std::move(point)) {}
  const Vec& point() const { return point_; }

 private:
  Vec point_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Exponent clamp for u(x)^gamma = exp(gamma * log u(x)).
inline constexpr double kMaxExponent = 700.0;

struct Provenance {
  std::string scenario;
  std::uint64_t seed = 0;
  double contamination = 0.0;
  std::vector<bool> contaminated;  // per row; empty when unknown
};

// n x d sample matrix (one observation per row) with an optional integer
// response for regression data.
struct Dataset {
  Mat x;
  std::optional<Eigen::VectorXi> y;
  Provenance provenance;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
  Vec row(std::size_t i) const { return x.row(static_cast<Eigen::Index>(i)).transpose(); }

  Dataset subset(const std::vector<std::size_t>& rows) const;
};

inline Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  if (y) out.y = Eigen::VectorXi(static_cast<Eigen::Index>(rows.size()));
  std::vector<bool> flags;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    out.x.row(static_cast<Eigen::Index>(k)) = x.row(r);
    if (y) (*out.y)(static_cast<Eigen::Index>(k)) = (*y)(r);
    if (!provenance.contaminated.empty()) flags.push_back(provenance.contaminated[rows[k]]);
  }
  out.provenance = provenance;
  out.provenance.contaminated = std::move(flags);
  return out;
}

// exp(e) with e clamped to +-kMaxExponent; sets *clamped when clamping happened.
inline double guarded_exp(double e, bool* clamped = nullptr) {
  if (e > kMaxExponent) {
    if (clamped) *clamped = true;
    e = kMaxExponent;
  } else if (e < -kMaxExponent - 45.0) {
    return 0.0;
  }
  return std::exp(e);
}

}  // namespace gstein
