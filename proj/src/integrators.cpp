#include "avalanche/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace avalanche {

namespace {

struct ArnoldiBasis {
  Mat v;       // n x (m+1)
  Mat h;       // (m+1) x m
  int m = 0;   // usable dimension
  bool exact = false;  // invariant subspace found
};

ArnoldiBasis arnoldi(const LinearMap& apply, const Vec& x, double beta, int max_dim, PropagationStats* stats) {
  const Eigen::Index n = x.size();
  const int m_max = static_cast<int>(std::min<Eigen::Index>(max_dim, n));
  ArnoldiBasis basis;
  basis.v = Mat::Zero(n, m_max + 1);
  basis.h = Mat::Zero(m_max + 1, m_max);
  basis.v.col(0) = x / beta;
  Vec w(n);
  for (int j = 0; j < m_max; ++j) {
    apply(basis.v.col(j), w);
    if (stats) ++stats->matvecs;
    const double w_norm = w.norm();
    // Modified Gram-Schmidt with one reorthogonalization pass.
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i <= j; ++i) {
        const cplx c = basis.v.col(i).dot(w);
        basis.h(i, j) += c;
        w -= c * basis.v.col(i);
      }
    }
    const double h_next = w.norm();
    basis.h(j + 1, j) = h_next;
    basis.m = j + 1;
    if (h_next <= 1e-12 * std::max(w_norm, 1e-300) || j + 1 == n) {
      basis.exact = true;
      break;
    }
    basis.v.col(j + 1) = w / h_next;
  }
  return basis;
}

}  // namespace

Vec krylov_propagate(const LinearMap& apply, const Vec& x, double tau, const KrylovOptions& opts,
                     PropagationStats* stats) {
  if (tau < 0.0) throw ParameterError("krylov_propagate: negative time step");
  Vec y = x;
  double t = 0.0;
  double step = tau;
  while (t < tau) {
    const double beta = y.norm();
    if (beta == 0.0) return y;
    const double remaining = tau - t;
    step = std::min(step, remaining);
    // Guard against leaving a sliver at the end.
    if (remaining - step < 1e-12 * tau) step = remaining;

    ArnoldiBasis basis = arnoldi(apply, y, beta, opts.max_dim, stats);
    const int m = basis.m;
    const Mat hm = basis.h.topLeftCorner(m, m);
    const double h_next = basis.exact ? 0.0 : std::abs(basis.h(m, m - 1));
    const double tol_rate = std::max(opts.abs_tol, opts.rel_tol * beta);

    Mat expm;
    for (int attempt = 0;; ++attempt) {
      expm = (hm * step).exp();
      const double err = beta * h_next * step * std::abs(expm(m - 1, 0));
      if (err <= tol_rate * step || basis.exact) break;
      if (stats) ++stats->rejected;
      // err ~ step^(m+1); shrink with a safety factor.
      const double ratio = std::pow(tol_rate * step / err, 1.0 / m);
      step *= std::clamp(0.9 * ratio, 0.1, 0.7);
      if (step < 1e-14 * std::max(tau, 1.0))
        throw NumericalError("krylov_propagate: step-size underflow at t=" + std::to_string(t));
      (void)attempt;
    }
    y = beta * (basis.v.leftCols(m) * expm.col(0));
    t += step;
    if (stats) ++stats->steps;
    step = basis.exact ? remaining : step * 1.5;
  }
  return y;
}

Vec rk45_propagate(const LinearMap& apply, const Vec& x, double t0, double t1, const RkOptions& opts,
                   double& step_hint, PropagationStats* stats) {
  if (t1 < t0) throw ParameterError("rk45_propagate: t1 < t0");
  if (t1 == t0) return x;

  // Dormand-Prince tableau.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2; (void)c3; (void)c4; (void)c5;

  const Eigen::Index n = x.size();
  Vec y = x, k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), y_new(n), err(n);
  double t = t0;
  double h = step_hint > 0.0 ? step_hint : std::min(opts.max_step, (t1 - t0) / 100.0);
  auto f = [&](const Vec& in, Vec& out) {
    apply(in, out);
    if (stats) ++stats->matvecs;
  };
  f(y, k1);
  const double snap = 1e-12 * std::max(1.0, std::abs(t1));
  while (t < t1) {
    const double free_step = std::min(h, opts.max_step);
    h = std::min(free_step, t1 - t);
    if (h < 1e-14 * std::max(1.0, std::abs(t)))
      throw NumericalError("rk45_propagate: step-size underflow at t=" + std::to_string(t));
    tmp = y + h * (a21 * k1);
    f(tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    f(tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(tmp, k6);
    y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(y_new, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err_norm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double scale = opts.abs_tol + opts.rel_tol * std::max(std::abs(y(i)), std::abs(y_new(i)));
      err_norm = std::max(err_norm, std::abs(err(i)) / scale);
    }
    if (err_norm <= 1.0) {
      // Landing within rounding of t1 counts as reaching it.
      t = t1 - (t + h) <= snap ? t1 : t + h;
      y.swap(y_new);
      k1.swap(k7);
      if (stats) ++stats->steps;
      const double grow = err_norm == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(err_norm, -0.2));
      // A step clipped at t1 should not shrink the hint for the next call.
      step_hint = std::max(h, free_step);
      h *= grow;
    } else {
      if (stats) ++stats->rejected;
      h *= std::max(0.1, 0.9 * std::pow(err_norm, -0.2));
    }
  }
  return y;
}

}  // namespace avalanche
