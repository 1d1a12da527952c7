#pragma once

#include <optional>
#include <span>
#include <vector>

#include "avalanche/hilbert.hpp"

namespace avalanche {

/// Physical parameters of the atom chain. Energies and rates are in units of
/// the ground-Rydberg Rabi frequency unless a caller chooses otherwise.
struct ModelParams {
  double omega_gr = 1.0;
  double delta_gr = -500.0;
  double v_rr = 500.0;
  double gamma_thz = 0.0;
  double gamma_deph = 0.0;
  int n_sites = 11;

  void validate() const;
  /// |delta_gr + v_rr|; zero at the facilitation condition.
  double facilitation_residual() const;

  bool operator==(const ModelParams&) const = default;
};

/// Trap phonons: frequency, spin-phonon coupling and Fock cutoff. `mass` and
/// `dv_dx` only feed compute_kappa().
struct PhononParams {
  double nu = 8.0;
  double kappa = 0.0;
  int cutoff = 7;
  double mass = 1.0;
  double dv_dx = 0.0;

  void validate() const;

  bool operator==(const PhononParams&) const = default;
};

enum class HamiltonianKind {
  Amplification,
  AmplificationPhonon,
  /// Amplification terms minus i Gamma/2 sum_j n_j^(e).
  EffectiveLocal,
  /// Amplification terms minus i Gamma/2 (sum_j |e><r|_j)(sum_k |r><e|_k).
  EffectiveCollective,
  Zero,
};

struct JumpKind {
  enum class Type { ThzLocal, ThzCollective, Dephasing };
  Type type;
  int site = -1;

  static JumpKind thz_local(int k) { return {Type::ThzLocal, k}; }
  static JumpKind thz_collective() { return {Type::ThzCollective, -1}; }
  static JumpKind dephasing(int j) { return {Type::Dephasing, j}; }
};

Operator build_hamiltonian(const HilbertSpace& space, const ModelParams& params,
                           const std::optional<PhononParams>& phonons, HamiltonianKind kind);

Operator build_jump(const HilbertSpace& space, const ModelParams& params, JumpKind kind);

/// Convenience sets: one local THz jump per site, and one dephasing jump per site.
std::vector<Operator> local_thz_jumps(const HilbertSpace& space, const ModelParams& params);
std::vector<Operator> dephasing_jumps(const HilbertSpace& space, const ModelParams& params);

/// n_j^(r) for every site.
std::vector<Operator> rydberg_number_ops(const HilbertSpace& space);
Operator total_rydberg_number(const HilbertSpace& space);

/// sum_i <psi| L_i^dagger L_i |psi>.
double absorption_rate(const PureState& state, std::span<const Operator> jumps);

/// kappa = dv_dx / sqrt(2 m nu).
double compute_kappa(const PhononParams& phonons);

}  // namespace avalanche
