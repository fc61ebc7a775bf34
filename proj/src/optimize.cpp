#include "gstein/optimize.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multifit_nlinear.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_roots.h>

#include <cmath>
#include <limits>
#include <memory>

namespace gstein {

namespace {

struct NmContext {
  const Objective* f;
  Vec buffer;
};

double nm_trampoline(const gsl_vector* v, void* params) {
  auto* ctx = static_cast<NmContext*>(params);
  for (Eigen::Index i = 0; i < ctx->buffer.size(); ++i) ctx->buffer(i) = gsl_vector_get(v, static_cast<size_t>(i));
  const double val = (*ctx->f)(ctx->buffer);
  return std::isfinite(val) ? val : std::numeric_limits<double>::max();
}

struct VecDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
struct MinDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};

struct ScalarContext {
  const std::function<double(double)>* f;
};

double scalar_trampoline(double x, void* params) { return (*static_cast<ScalarContext*>(params)->f)(x); }

// GSL's default handler aborts; callers here inspect status codes instead.
// Installed once so concurrent solvers never race on the global handler.
void disable_gsl_abort() {
  static const bool done = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)done;
}

struct LsqContext {
  const std::function<Vec(const Vec&)>* r;
  Vec buffer;
};

Vec read(const gsl_vector* v) {
  Vec x(static_cast<Eigen::Index>(v->size));
  for (size_t i = 0; i < v->size; ++i) x(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
  return x;
}

int lsq_f(const gsl_vector* x, void* params, gsl_vector* f) {
  auto* ctx = static_cast<LsqContext*>(params);
  const Vec r = (*ctx->r)(read(x));
  if (!r.allFinite()) return GSL_EDOM;
  for (size_t i = 0; i < f->size; ++i) gsl_vector_set(f, i, r(static_cast<Eigen::Index>(i)));
  return GSL_SUCCESS;
}

int lsq_df(const gsl_vector* x, void* params, gsl_matrix* J) {
  auto* ctx = static_cast<LsqContext*>(params);
  const Mat jac = fd_jacobian(*ctx->r, read(x));
  if (!jac.allFinite()) return GSL_EDOM;
  for (size_t i = 0; i < J->size1; ++i)
    for (size_t k = 0; k < J->size2; ++k)
      gsl_matrix_set(J, i, k, jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
  return GSL_SUCCESS;
}

}  // namespace

LeastSquaresResult least_squares(const std::function<Vec(const Vec&)>& residual, const Vec& x0,
                                 const LeastSquaresConfig& cfg) {
  disable_gsl_abort();
  LeastSquaresResult out;
  out.x = x0;
  out.residual = residual(x0);
  if (!out.residual.allFinite()) throw ArgumentError("least_squares: non-finite residual at the starting point");
  out.cost = out.residual.squaredNorm();
  const auto p = static_cast<size_t>(x0.size());
  const auto m = static_cast<size_t>(out.residual.size());
  if (p == 0) {
    out.converged = true;
    return out;
  }
  if (m < p) throw ArgumentError("least_squares: fewer residuals than unknowns");
  LsqContext ctx{&residual, Vec()};
  gsl_multifit_nlinear_fdf fdf;
  fdf.f = &lsq_f;
  fdf.df = &lsq_df;
  fdf.fvv = nullptr;
  fdf.n = m;
  fdf.p = p;
  fdf.params = &ctx;
  gsl_multifit_nlinear_parameters params = gsl_multifit_nlinear_default_parameters();
  gsl_multifit_nlinear_workspace* w = gsl_multifit_nlinear_alloc(gsl_multifit_nlinear_trust, &params, m, p);
  std::unique_ptr<gsl_vector, VecDeleter> x(gsl_vector_alloc(p));
  for (size_t i = 0; i < p; ++i) gsl_vector_set(x.get(), i, x0(static_cast<Eigen::Index>(i)));
  if (gsl_multifit_nlinear_init(x.get(), &fdf, w) != GSL_SUCCESS) {
    gsl_multifit_nlinear_free(w);
    return out;
  }
  int it = 0;
  while (it < cfg.max_iter) {
    ++it;
    if (gsl_multifit_nlinear_iterate(w) != GSL_SUCCESS) break;
    int info = 0;
    if (gsl_multifit_nlinear_test(cfg.xtol, cfg.gtol, cfg.ftol, &info, w) == GSL_SUCCESS) {
      out.converged = true;
      break;
    }
  }
  const Vec xb = read(gsl_multifit_nlinear_position(w));
  gsl_multifit_nlinear_free(w);
  const Vec rb = residual(xb);
  if (rb.allFinite() && rb.squaredNorm() <= out.cost) {
    out.x = xb;
    out.residual = rb;
    out.cost = rb.squaredNorm();
  }
  out.iterations = it;
  return out;
}

NelderMeadResult nelder_mead(const Objective& f, const Vec& x0, const NelderMeadConfig& cfg) {
  disable_gsl_abort();
  const auto n = static_cast<size_t>(x0.size());
  NelderMeadResult out;
  out.x = x0;
  if (n == 0) {
    out.value = f(x0);
    out.converged = true;
    return out;
  }
  NmContext ctx{&f, Vec(x0.size())};
  gsl_multimin_function fn{&nm_trampoline, n, &ctx};
  std::unique_ptr<gsl_vector, VecDeleter> x(gsl_vector_alloc(n));
  std::unique_ptr<gsl_vector, VecDeleter> step(gsl_vector_alloc(n));
  for (size_t i = 0; i < n; ++i) {
    gsl_vector_set(x.get(), i, x0(static_cast<Eigen::Index>(i)));
    gsl_vector_set(step.get(), i, cfg.initial_step);
  }
  std::unique_ptr<gsl_multimin_fminimizer, MinDeleter> s(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n));
  gsl_multimin_fminimizer_set(s.get(), &fn, x.get(), step.get());
  int it = 0;
  int status = GSL_CONTINUE;
  while (it < cfg.max_iter) {
    ++it;
    if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s.get()), cfg.size_tol);
    if (status == GSL_SUCCESS) break;
  }
  for (size_t i = 0; i < n; ++i) out.x(static_cast<Eigen::Index>(i)) = gsl_vector_get(s->x, i);
  out.value = s->fval;
  out.iterations = it;
  out.converged = status == GSL_SUCCESS;
  return out;
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& map, const Vec& x, double rel_step) {
  const Vec f0 = map(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel_step * std::max(1.0, std::abs(x(k)));
    Vec a = x, b = x;
    a(k) += h;
    b(k) -= h;
    J.col(k) = (map(a) - map(b)) / (2.0 * h);
  }
  return J;
}

double brent_root(const std::function<double(double)>& f, double lo, double hi, double tol) {
  disable_gsl_abort();
  ScalarContext ctx{&f};
  gsl_function fn{&scalar_trampoline, &ctx};
  gsl_root_fsolver* s = gsl_root_fsolver_alloc(gsl_root_fsolver_brent);
  if (gsl_root_fsolver_set(s, &fn, lo, hi) != GSL_SUCCESS) {
    gsl_root_fsolver_free(s);
    throw ArgumentError("brent_root: interval does not bracket a root");
  }
  double r = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    gsl_root_fsolver_iterate(s);
    r = gsl_root_fsolver_root(s);
    const double a = gsl_root_fsolver_x_lower(s);
    const double b = gsl_root_fsolver_x_upper(s);
    if (gsl_root_test_interval(a, b, tol, 0.0) == GSL_SUCCESS) break;
  }
  gsl_root_fsolver_free(s);
  return r;
}

}  // namespace gstein
