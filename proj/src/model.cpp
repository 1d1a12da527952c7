#include "avalanche/model.hpp"

#include <cmath>
#include <string>

namespace avalanche {

namespace {

bool finite(double x) { return std::isfinite(x); }

// Sum of on-site terms A_j over all sites.
Operator sum_over_sites(const HilbertSpace& space, const Mat& local_op) {
  Operator acc = Operator::zero(space);
  for (int j = 0; j < space.n_sites(); ++j) acc = acc + embed_site_operator(space, j, local_op);
  return acc;
}

Operator amplification_terms(const HilbertSpace& space, const ModelParams& p) {
  const auto& layout = space.layout();
  const Mat flip = local::transition(layout, Level::r, Level::g) + local::transition(layout, Level::g, Level::r);
  const Mat nr = local::projector(layout, Level::r);

  Operator h = Operator::zero(space);
  std::vector<Operator> n_r;
  n_r.reserve(space.n_sites());
  for (int j = 0; j < space.n_sites(); ++j) {
    n_r.push_back(embed_site_operator(space, j, nr));
    h = h + embed_site_operator(space, j, flip) * p.omega_gr + n_r.back() * p.delta_gr;
  }
  for (int j = 0; j + 1 < space.n_sites(); ++j) h = h + (n_r[j] * n_r[j + 1]) * p.v_rr;
  return h;
}

}  // namespace

void ModelParams::validate() const {
  if (!finite(omega_gr) || !finite(delta_gr) || !finite(v_rr) || !finite(gamma_thz) || !finite(gamma_deph))
    throw ParameterError("ModelParams: non-finite value");
  if (gamma_thz < 0.0) throw ParameterError("ModelParams: gamma_thz must be non-negative");
  if (gamma_deph < 0.0) throw ParameterError("ModelParams: gamma_deph must be non-negative");
  if (n_sites < 1) throw ParameterError("ModelParams: n_sites must be positive");
}

double ModelParams::facilitation_residual() const { return std::abs(delta_gr + v_rr); }

void PhononParams::validate() const {
  if (!finite(nu) || !finite(kappa) || !finite(mass) || !finite(dv_dx))
    throw ParameterError("PhononParams: non-finite value");
  if (!(nu > 0.0)) throw ParameterError("PhononParams: nu must be positive");
  if (cutoff < 1) throw ParameterError("PhononParams: cutoff must be >= 1 when phonons are enabled");
}

Operator build_hamiltonian(const HilbertSpace& space, const ModelParams& params,
                           const std::optional<PhononParams>& phonons, HamiltonianKind kind) {
  params.validate();
  if (params.n_sites != space.n_sites()) throw DimensionError("build_hamiltonian: n_sites differs from space");
  const auto& layout = space.layout();

  switch (kind) {
    case HamiltonianKind::Zero: return Operator::zero(space);

    case HamiltonianKind::Amplification:
      if (layout.has_phonons()) throw DimensionError("Amplification: space carries phonons; use AmplificationPhonon");
      return amplification_terms(space, params);

    case HamiltonianKind::AmplificationPhonon: {
      if (!phonons) throw ParameterError("AmplificationPhonon: phonon parameters missing");
      phonons->validate();
      if (layout.phonon_cutoff() != phonons->cutoff)
        throw DimensionError("AmplificationPhonon: space phonon cutoff differs from PhononParams.cutoff");
      Operator h = amplification_terms(space, params) + sum_over_sites(space, local::number(layout)) * phonons->nu;
      const Mat nr = local::projector(layout, Level::r);
      const Mat x = local::displacement(layout);
      for (int j = 0; j + 1 < space.n_sites(); ++j) {
        Operator pair = embed_site_operator(space, j, nr) * embed_site_operator(space, j + 1, nr);
        Operator dx = embed_site_operator(space, j, x) - embed_site_operator(space, j + 1, x);
        h = h + (pair * dx) * phonons->kappa;
      }
      return h;
    }

    case HamiltonianKind::EffectiveLocal: {
      if (layout.levels() != AtomLevels::GER) throw DimensionError("EffectiveLocal requires GER levels");
      if (layout.has_phonons()) throw DimensionError("EffectiveLocal: phonons not supported");
      Operator decay = sum_over_sites(space, local::projector(layout, Level::e));
      return amplification_terms(space, params) + decay * cplx(0.0, -0.5 * params.gamma_thz);
    }

    case HamiltonianKind::EffectiveCollective: {
      if (layout.levels() != AtomLevels::GER) throw DimensionError("EffectiveCollective requires GER levels");
      if (layout.has_phonons()) throw DimensionError("EffectiveCollective: phonons not supported");
      Operator raise = sum_over_sites(space, local::transition(layout, Level::r, Level::e));
      return amplification_terms(space, params) + (raise.adjoint() * raise) * cplx(0.0, -0.5 * params.gamma_thz);
    }
  }
  throw ParameterError("build_hamiltonian: unknown kind");
}

Operator build_jump(const HilbertSpace& space, const ModelParams& params, JumpKind kind) {
  params.validate();
  const auto& layout = space.layout();
  auto check_site = [&](int j) {
    if (j < 0 || j >= space.n_sites()) throw DimensionError("build_jump: site out of range");
  };
  switch (kind.type) {
    case JumpKind::Type::ThzLocal:
      if (layout.levels() != AtomLevels::GER) throw DimensionError("ThzLocal requires GER levels");
      check_site(kind.site);
      return embed_site_operator(space, kind.site, local::transition(layout, Level::r, Level::e)) *
             std::sqrt(params.gamma_thz);
    case JumpKind::Type::ThzCollective: {
      if (layout.levels() != AtomLevels::GER) throw DimensionError("ThzCollective requires GER levels");
      return sum_over_sites(space, local::transition(layout, Level::r, Level::e)) * std::sqrt(params.gamma_thz);
    }
    case JumpKind::Type::Dephasing:
      check_site(kind.site);
      return embed_site_operator(space, kind.site, local::projector(layout, Level::r)) * std::sqrt(params.gamma_deph);
  }
  throw ParameterError("build_jump: unknown kind");
}

std::vector<Operator> local_thz_jumps(const HilbertSpace& space, const ModelParams& params) {
  std::vector<Operator> out;
  for (int k = 0; k < space.n_sites(); ++k) out.push_back(build_jump(space, params, JumpKind::thz_local(k)));
  return out;
}

std::vector<Operator> dephasing_jumps(const HilbertSpace& space, const ModelParams& params) {
  std::vector<Operator> out;
  for (int j = 0; j < space.n_sites(); ++j) out.push_back(build_jump(space, params, JumpKind::dephasing(j)));
  return out;
}

std::vector<Operator> rydberg_number_ops(const HilbertSpace& space) {
  const Mat nr = local::projector(space.layout(), Level::r);
  std::vector<Operator> out;
  for (int j = 0; j < space.n_sites(); ++j) out.push_back(embed_site_operator(space, j, nr));
  return out;
}

Operator total_rydberg_number(const HilbertSpace& space) {
  return sum_over_sites(space, local::projector(space.layout(), Level::r));
}

double absorption_rate(const PureState& state, std::span<const Operator> jumps) {
  double rate = 0.0;
  for (const auto& jump : jumps) {
    if (!(jump.space() == state.space())) throw DimensionError("absorption_rate: space mismatch");
    rate += jump.apply(state.amplitudes()).squaredNorm();
  }
  return rate;
}

double compute_kappa(const PhononParams& phonons) {
  if (!(phonons.mass > 0.0)) throw ParameterError("compute_kappa: mass must be positive");
  if (!(phonons.nu > 0.0)) throw ParameterError("compute_kappa: nu must be positive");
  return phonons.dv_dx / std::sqrt(2.0 * phonons.mass * phonons.nu);
}

}  // namespace avalanche
