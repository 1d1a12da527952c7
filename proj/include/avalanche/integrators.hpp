#pragma once

#include <functional>
#include <limits>

#include "avalanche/hilbert.hpp"

namespace avalanche {

/// y = A x for a linear, time-independent generator A.
using LinearMap = std::function<void(const Vec& x, Vec& y)>;

struct KrylovOptions {
  int max_dim = 30;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
};

/// Counts for diagnostics and performance tests.
struct PropagationStats {
  long long matvecs = 0;
  long long steps = 0;
  long long rejected = 0;
};

/// exp(tau A) x by Arnoldi projection with adaptive sub-stepping. The local
/// error per sub-step is held below max(abs_tol, rel_tol |x|) times its length.
Vec krylov_propagate(const LinearMap& apply, const Vec& x, double tau, const KrylovOptions& opts,
                     PropagationStats* stats = nullptr);

struct RkOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
};

/// Dormand-Prince 5(4) integration of dx/dt = A x from t0 to t1. `step_hint`
/// carries the last accepted step size between calls (0 on first use).
/// Throws NumericalError on step-size underflow.
Vec rk45_propagate(const LinearMap& apply, const Vec& x, double t0, double t1, const RkOptions& opts,
                   double& step_hint, PropagationStats* stats = nullptr);

}  // namespace avalanche
