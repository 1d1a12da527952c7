#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avalanche/dynamics.hpp"
#include "avalanche/hilbert.hpp"
#include "avalanche/model.hpp"
#include "avalanche/random.hpp"
#include "avalanche/tebd.hpp"

namespace avalanche {

/// Raised by analyze() when the trace never turns over.
class HorizonError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

enum class AbsorptionKind { LocalAtSite, LocalSampled, Collective, MixedAverage };
enum class Backend { Dense, Tebd };
enum class DephasingMethod { Lindblad, Trajectories };

struct Absorption {
  AbsorptionKind kind = AbsorptionKind::LocalAtSite;
  /// Site for LocalAtSite; -1 picks the central site.
  int site = -1;

  static Absorption local_at(int k) { return {AbsorptionKind::LocalAtSite, k}; }
  static Absorption local_sampled() { return {AbsorptionKind::LocalSampled, -1}; }
  static Absorption collective() { return {AbsorptionKind::Collective, -1}; }
  static Absorption mixed_average() { return {AbsorptionKind::MixedAverage, -1}; }
};

struct ProtocolConfig {
  ModelParams model;
  std::optional<PhononParams> phonons;
  double t_sense = 1.0;
  double t_amp = 10.0;
  /// Points of the uniform amplification grid when integrator.output_grid is empty.
  int n_output = 201;
  Absorption absorption;
  Backend backend = Backend::Dense;
  DephasingMethod dephasing = DephasingMethod::Lindblad;
  IntegratorConfig integrator;
  TrajectoryConfig trajectories;
  TruncationPolicy truncation;
  std::uint64_t seed = 0;

  void validate() const;
  /// Non-fatal remarks, e.g. leaving the single-photon regime.
  std::vector<std::string> warnings() const;
  std::vector<double> output_grid() const;
  /// Resolved LocalAtSite index (central site for -1).
  int absorption_site() const;
};

struct AbsorptionRecord {
  bool absorbed = false;
  /// Time within the sensing window; 0 for deterministic absorption.
  double time = 0.0;
  /// Absorbing site, -1 for collective or none.
  int site = -1;
  bool collective = false;
  bool mixed = false;
};

struct TraceMetadata {
  std::string backend;
  std::uint64_t seed = 0;
  std::string preset;
  double discarded_weight = 0.0;
  int max_bond = 0;
  bool truncation_flagged = false;
  double max_phonon_occupation = 0.0;
  double max_cutoff_population = 0.0;
  std::optional<double> lindblad_min_eigenvalue;
  int trajectories_completed = 0;
  std::vector<std::string> warnings;
};

struct SignalTrace {
  std::vector<double> times;
  std::vector<double> s_total;
  /// Standard error of S, trajectory runs only.
  std::vector<double> s_total_stderr;
  /// n_sites x n_times.
  Eigen::MatrixXd s_site;
  TraceMetadata metadata;

  int n_sites() const { return static_cast<int>(s_site.rows()); }
};

struct AmplificationSummary {
  double t_a = 0.0;
  double s_max = 0.0;
  double velocity = 0.0;
  double omega_ref = 1.0;
  /// Grid time at which the post-peak decrease was detected.
  double turnover_time = 0.0;
  /// Log-log slopes of S - S(0) over [T_a/20, T_a/10] and [0.4 T_a, 0.8 T_a].
  double early_slope = 0.0;
  double mid_slope = 0.0;
  /// First time the sliding log-log slope falls below 1.5; NaN if never.
  double crossover_time = 0.0;
};

struct SenseResult {
  PureState state;
  AbsorptionRecord record;
  /// MixedAverage only: (weight, post-jump state) per site.
  std::vector<std::pair<double, PureState>> ensemble;
};

struct ProtocolResult {
  SignalTrace trace;
  std::optional<AmplificationSummary> summary;
  /// Why the summary is missing.
  std::string summary_error;
  AbsorptionRecord record;
};

/// Real swap |from> <-> |to> on every site; the third level is untouched.
PureState pi_pulse(const PureState& state, Level from, Level to);
/// Drops |e> from a GER state; throws if |e> carries more than 1e-9.
PureState restrict_to_gr(const PureState& state);
/// GR atoms without phonons -> same atoms with every oscillator in vacuum.
PureState attach_phonon_vacuum(const PureState& state, int cutoff);

/// Ground state |g...g> and sensing state |e...e> of the atomic GER chain.
PureState ground_state(int n_sites);
PureState sensing_state(int n_sites);

/// Draws or fixes where the photon is absorbed, without touching any state.
AbsorptionRecord sample_absorption(const ProtocolConfig& cfg, StreamRng& rng);
SenseResult sense(const PureState& state, const ProtocolConfig& cfg, StreamRng& rng);

/// Amplification on the dense or tebd backend. GER input is restricted to GR
/// first; phonon vacuum is attached when the config has phonons.
SignalTrace amplify(const PureState& state, const ProtocolConfig& cfg);
/// Tebd amplification starting from a given MPS.
SignalTrace amplify(const MatrixProductState& psi, const ProtocolConfig& cfg);

AmplificationSummary analyze(const SignalTrace& trace, double omega_ref);
/// Least-squares slope of log(S - S(0)) vs log t on [t_lo, t_hi].
double loglog_slope(const SignalTrace& trace, double t_lo, double t_hi);

SignalTrace mixed_average_trace(const std::vector<std::pair<double, SignalTrace>>& traces);

/// |Psi_g> -> pi(g,e) -> sense -> pi(e,g) -> amplify -> analyze.
ProtocolResult run_protocol(const ProtocolConfig& cfg);

}  // namespace avalanche
