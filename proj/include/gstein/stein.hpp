#pragma once

#include "gstein/quadrature.hpp"

#include <functional>

namespace gstein {

// Vector field with analytic divergence. The Jacobian is optional and only
// needed by the transport check in dimension > 1.
struct TestField {
  std::function<Vec(const Vec&)> value;
  std::function<double(const Vec&)> divergence;
  std::function<Mat(const Vec&)> jacobian;
};

struct SteinEvaluation {
  double gamma = 0.0;
  double weight = 1.0;
  double drift_term = 0.0;
  double divergence_term = 0.0;
  double total = 0.0;
  bool clamped = false;
};

// p^gamma {(gamma+1) <s, f> + div f} at x. The weight is exp(gamma * log u),
// so an unnormalized model gives the u^gamma variant.
SteinEvaluation apply_gamma_stein(const ModelSpec& model, double gamma, const TestField& field, const Vec& x);

// Same operator evaluated from a precomputed log u and score.
SteinEvaluation apply_gamma_stein(double log_u, const Vec& score, double gamma, const TestField& field,
                                  const Vec& x);

// Classical <s, f> + div f.
double apply_stein(const ModelSpec& model, const TestField& field, const Vec& x);

// Max relative disagreement between field.divergence and central differences
// of field.value at the probe points.
double field_consistency(const TestField& field, const Mat& probes, double step = 1e-5);

// |int p A_p^gamma f| with p renormalized on the grid.
double stein_identity_residual(const ModelSpec& model, double gamma, const TestField& field,
                               const QuadratureGrid& grid);

struct InnerProductCheck {
  double lhs = 0.0;
  double rhs = 0.0;
};

// lhs = int p A_q^gamma f, rhs = int p q^gamma <s_q - s_p, f>.
InnerProductCheck mixed_inner_product_check(const ModelSpec& p, const ModelSpec& q, double gamma,
                                            const TestField& field, const QuadratureGrid& grid);

// E_p[q^gamma |s_q - s_p|^2]; q is normalized on the grid.
double gamma_fisher_divergence(const ModelSpec& p, const ModelSpec& q, double gamma, const QuadratureGrid& grid);

struct Escorts {
  double p_gamma_inner = 0.0;  // E_{p_gamma} <s_q, v>
  double q_gamma_inner = 0.0;  // E_{q_{gamma+1}} <s_q, v>
  double p_gamma_norm = 0.0;   // E_{p_gamma} |s_q|^2
  double q_gamma_norm = 0.0;   // E_{q_{gamma+1}} |s_q|^2
};

Escorts escort_moments(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                       const QuadratureGrid& grid);

struct CorrectedField {
  TestField field;
  double c = 0.0;
  bool degenerate = false;  // denominator below 1e-12, c set to 0
};

// v - c s_q with c chosen so the two escort expectations of <s_q, v> agree.
CorrectedField correct_field(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                             const QuadratureGrid& grid);

// E_{q_{gamma+1}} <s_q, v> - E_{p_gamma} <s_q, v>.
double normalizing_condition_residual(const TestField& v, const ModelSpec& p, const ModelSpec& q, double gamma,
                                      const QuadratureGrid& grid);

// gamma-divergence D_gamma(p || q) on the grid (KL when gamma = 0).
double gamma_divergence(const ModelSpec& p, const ModelSpec& q, double gamma, const QuadratureGrid& grid);

struct FirstVariationCheck {
  double fd_derivative = 0.0;  // central difference at eps
  double fd_coarse = 0.0;      // central difference at 2 eps
  double operator_side = 0.0;  // C_gamma(q) int p A_q^gamma v
};

// Derivative of eps -> D_gamma(p || q_eps) for the transport x -> x + eps v(x).
FirstVariationCheck first_variation_check(const ModelSpec& p, const ModelSpec& q, double gamma,
                                          const TestField& v, double eps, const QuadratureGrid& grid);

// Common fields.
TestField identity_field(int d);
TestField score_field(const ModelSpec& q);

}  // namespace gstein
