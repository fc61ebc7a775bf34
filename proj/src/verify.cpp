#include "gstein/verify.hpp"

#include "gstein/stein.hpp"

#include <cmath>
#include <sstream>

namespace gstein {

namespace {

TestField field_1d(double (*f)(double), double (*df)(double)) {
  TestField t;
  t.value = [f](const Vec& x) -> Vec { return Vec::Constant(1, f(x(0))); };
  t.divergence = [df](const Vec& x) { return df(x(0)); };
  t.jacobian = [df](const Vec& x) -> Mat { return Mat::Constant(1, 1, df(x(0))); };
  return t;
}

struct NamedField {
  std::string name;
  TestField field;
};

NamedField linear() {
  return {"x", field_1d([](double x) { return x; }, [](double) { return 1.0; })};
}
NamedField sine() {
  return {"sin", field_1d([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); })};
}
NamedField cubic() {
  return {"x^3", field_1d([](double x) { return x * x * x; }, [](double x) { return 3.0 * x * x; })};
}
NamedField damped_square() {
  return {"x^2 exp(-x^2/8)", field_1d([](double x) { return x * x * std::exp(-x * x / 8.0); },
                                      [](double x) { return (2.0 * x - x * x * x / 4.0) * std::exp(-x * x / 8.0); })};
}
NamedField constant_one() {
  return {"1", field_1d([](double) { return 1.0; }, [](double) { return 0.0; })};
}

ModelSpec normal_1d(double mean, double var) {
  return make_gaussian(Vec::Constant(1, mean), Mat::Constant(1, 1, 1.0 / var));
}

std::string label(const std::string& p, const std::string& q, const std::string& f, double gamma) {
  std::ostringstream o;
  o << p;
  if (!q.empty()) o << " | " << q;
  o << ", f=" << f << ", gamma=" << gamma;
  return o.str();
}

}  // namespace

std::vector<VerifyCheck> run_identity_suite() {
  std::vector<VerifyCheck> out;
  const ModelSpec n01 = normal_1d(0.0, 1.0);
  const ModelSpec n11 = normal_1d(1.0, 1.0);
  const ModelSpec n04 = normal_1d(0.0, 4.0);
  const ModelSpec shifted = normal_1d(0.5, 0.5);
  const ModelSpec quartic = make_quartic(0.0, 2.0, -0.5);
  const ModelSpec mix = make_mixture((Vec(2) << 0.3, 0.7).finished(), {Vec::Constant(1, -2.0), Vec::Constant(1, 1.5)},
                                     (Vec(2) << 2.0, 1.0).finished());
  Mat prec2(2, 2);
  prec2 << 1.5, 0.4, 0.4, 0.8;
  const ModelSpec gauss2 = make_gaussian((Vec(2) << 0.3, -0.2).finished(), prec2);

  struct IdentityCase {
    std::string model_name;
    ModelSpec model;
    NamedField field;
    double gamma;
  };
  const std::vector<IdentityCase> identity = {
      {"N(0,1)", n01, linear(), 0.0},          {"N(0,1)", n01, sine(), 0.3},
      {"N(0,1)", n01, cubic(), 1.0},           {"N(0,1)", n01, linear(), 0.5},
      {"N(0,1)", n01, sine(), 0.1},            {"quartic(0,2,-0.5)", quartic, linear(), 0.0},
      {"quartic(0,2,-0.5)", quartic, sine(), 0.5}, {"quartic(0,2,-0.5)", quartic, cubic(), 0.1},
      {"mixture-1d", mix, linear(), 0.3},      {"mixture-1d", mix, sine(), 1.0},
      {"N(0.5,0.5)", shifted, cubic(), 0.5},   {"N2(corr)", gauss2, {"x", identity_field(2)}, 0.5},
  };
  for (const auto& c : identity) {
    const double r = stein_identity_residual(c.model, c.gamma, c.field.field, default_grid(c.model));
    out.push_back({"identity", label(c.model_name, "", c.field.name, c.gamma), r, 1e-6, r < 1e-6});
  }

  const QuadratureGrid wide = uniform_grid_1d(-14.0, 14.0, 4001);
  struct PairCase {
    std::string p_name, q_name;
    ModelSpec p, q;
    NamedField field;
    double gamma;
  };
  const std::vector<PairCase> pairs = {
      {"N(0,1)", "N(0,1)", n01, n01, linear(), 0.5},
      {"N(0,1)", "N(1,1)", n01, n11, linear(), 0.5},
      {"N(0,1)", "N(0,4)", n01, n04, damped_square(), 1.0},
      {"N(0,1)", "quartic(0,2,-0.5)", n01, quartic, sine(), 0.3},
      {"mixture-1d", "N(0,1)", mix, n01, linear(), 0.5},
      {"quartic(0,2,-0.5)", "N(1,1)", quartic, n11, cubic(), 0.2},
  };
  for (const auto& c : pairs) {
    const auto r = mixed_inner_product_check(c.p, c.q, c.gamma, c.field.field, wide);
    const double gap = std::abs(r.lhs - r.rhs) / (1.0 + std::abs(r.lhs));
    out.push_back({"inner-product", label(c.p_name, c.q_name, c.field.name, c.gamma), gap, 1e-6, gap < 1e-6});
  }

  const QuadratureGrid fv_grid = uniform_grid_1d(-12.0, 12.0, 4001);
  const ModelSpec q_fv = normal_1d(0.3, 1.2);
  const std::vector<PairCase> variations = {
      {"N(0,1)", "N(0.3,1.2)", n01, q_fv, constant_one(), 0.3},
      {"N(0,1)", "N(0.3,1.2)", n01, q_fv, linear(), 0.5},
      {"N(0,1)", "N(0.5,0.5)", n01, shifted, sine(), 1.0},
      {"N(0,1)", "N(1,1)", n01, n11, linear(), 0.0},
  };
  for (const auto& c : variations) {
    const CorrectedField cf = correct_field(c.field.field, c.p, c.q, c.gamma, fv_grid);
    const auto r = first_variation_check(c.p, c.q, c.gamma, cf.field, 1e-3, fv_grid);
    const double gap = std::abs(r.fd_derivative - r.operator_side) / (1.0 + std::abs(r.operator_side));
    out.push_back({"first-variation", label(c.p_name, c.q_name, c.field.name + " (corrected)", c.gamma), gap, 1e-3,
                   gap < 1e-3});
  }
  return out;
}

}  // namespace gstein
