#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "avalanche/hilbert.hpp"
#include "avalanche/integrators.hpp"

namespace avalanche {

enum class IntegratorMethod { AdaptiveRK, KrylovExpm };

struct IntegratorConfig {
  IntegratorMethod method = IntegratorMethod::KrylovExpm;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  /// Upper bound on adaptive RK steps.
  double max_step = std::numeric_limits<double>::infinity();
  int krylov_dim = 30;
  /// Strictly increasing, starting at 0.
  std::vector<double> output_grid;

  void validate() const;
};

/// Uniform grid 0, dt, ..., t_final (n_points points).
std::vector<double> uniform_grid(double t_final, int n_points);

struct TimedState {
  double time;
  PureState state;
};

struct TimedDensity {
  double time;
  DensityMatrix rho;
};

using PureObserver = std::function<void(double time, const Vec& psi)>;
using DensityObserver = std::function<void(double time, const Mat& rho)>;

/// Solves d psi/dt = -i H psi; `observer` sees the state at every grid time.
/// Non-Hermitian H is integrated as is, without renormalization.
void evolve_pure(const PureState& state, const Operator& h, const IntegratorConfig& cfg,
                 const PureObserver& observer);
std::vector<TimedState> evolve_pure(const PureState& state, const Operator& h, const IntegratorConfig& cfg);

struct LindbladDiagnostics {
  double max_trace_drift = 0.0;
  double min_eigenvalue = 0.0;
  bool positivity_checked = false;
  std::vector<std::string> warnings;
};

/// Master equation d rho/dt = -i[H, rho] + sum_j D[L_j] rho. The density
/// matrix is re-symmetrized at every output time. Trace drift above
/// 100 rel_tol throws NumericalError.
void evolve_lindblad(const DensityMatrix& rho, const Operator& h, std::span<const Operator> jumps,
                     const IntegratorConfig& cfg, const DensityObserver& observer,
                     LindbladDiagnostics* diagnostics = nullptr);
std::vector<TimedDensity> evolve_lindblad(const DensityMatrix& rho, const Operator& h,
                                          std::span<const Operator> jumps, const IntegratorConfig& cfg,
                                          LindbladDiagnostics* diagnostics = nullptr);

struct TrajectoryConfig {
  int n_trajectories = 1;
  std::uint64_t master_seed = 0;
  /// Bisection tolerance on the jump time.
  double jump_resolution = 1e-6;
  /// Worker threads; results do not depend on this.
  int n_threads = 1;

  void validate() const;
};

struct JumpEvent {
  double time;
  int channel;
  bool operator==(const JumpEvent&) const = default;
};

struct TrajectoryRecord {
  std::vector<JumpEvent> jumps;
  bool aborted = false;
  std::string diagnostic;
};

struct EnsembleResult {
  std::vector<double> times;
  /// n_observables x n_times.
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std_error;
  std::vector<TrajectoryRecord> records;
  int n_completed = 0;
};

/// Monte-Carlo wavefunction unraveling: no-jump evolution under
/// H - (i/2) sum L^dagger L, jumps at pre-drawn norm thresholds located by
/// bisection, channel chosen with weight |L_i psi|^2. Observables are
/// evaluated on the normalized conditioned state. Aborted trajectories are
/// excluded from the averages.
EnsembleResult run_trajectories(const PureState& initial, const Operator& h, std::span<const Operator> jumps,
                                std::span<const Operator> observables, const IntegratorConfig& cfg,
                                const TrajectoryConfig& tcfg);

/// -i H as a LinearMap.
LinearMap schrodinger_generator(const Operator& h);
/// Vectorized (column-major) Lindbladian as a LinearMap on d*d vectors.
LinearMap lindblad_generator(const Operator& h, std::span<const Operator> jumps);

}  // namespace avalanche
