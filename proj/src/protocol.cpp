#include "avalanche/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avalanche/parallel.hpp"

namespace avalanche {

namespace {

constexpr double kSingleExcitationTol = 1e-9;
constexpr double kSinglePhotonWarn = 0.1;
constexpr double kTurnoverDrop = 0.02;
// Stream id reserved for photon sampling; trajectories use 0, 1, 2, ...
constexpr std::uint64_t kSenseStream = 0xA5A5A5A5A5A5A5A5ULL;

int swap_atom(int atom, int a, int b) {
  if (atom == a) return b;
  if (atom == b) return a;
  return atom;
}

// Applies `map` to the atom part of every site and permutes amplitudes.
template <typename F>
std::size_t remap_index(const HilbertSpace& from, const HilbertSpace& to, std::size_t idx, F&& map) {
  std::size_t out = 0;
  const int da = from.atom_dim();
  for (int j = 0; j < from.n_sites(); ++j) {
    const int loc = from.local_at(idx, j);
    const int atom = map(loc % da);
    out += static_cast<std::size_t>(to.layout().local_index(atom, loc / da)) * to.stride(j);
  }
  return out;
}

// P(site j in |r>) from basis probabilities; n^(r) is diagonal.
Eigen::VectorXd site_populations(const HilbertSpace& space, const Eigen::VectorXd& probs) {
  const int n = space.n_sites();
  const int da = space.atom_dim();
  const int r = space.layout().atom_index(Level::r);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < space.dim(); ++i) {
    const double p = probs(static_cast<Eigen::Index>(i));
    if (p == 0.0) continue;
    for (int j = 0; j < n; ++j)
      if (space.local_at(i, j) % da == r) out(j) += p;
  }
  return out;
}

PureState apply_normalized_jump(const PureState& state, const ModelParams& params, JumpKind kind) {
  ModelParams unit = params;
  unit.gamma_thz = 1.0;  // the normalized post-jump state does not depend on the rate
  const Operator jump = build_jump(state.space(), unit, kind);
  return norm_and_normalize(PureState(state.space(), jump.apply(state.amplitudes()))).second;
}

SignalTrace make_trace(const std::vector<double>& times, std::vector<Eigen::VectorXd> columns) {
  SignalTrace trace;
  trace.times = times;
  const int n = columns.empty() ? 0 : static_cast<int>(columns.front().size());
  trace.s_site.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t t = 0; t < columns.size(); ++t) {
    trace.s_site.col(static_cast<Eigen::Index>(t)) = columns[t];
    trace.s_total.push_back(columns[t].sum());
  }
  return trace;
}

double interpolate(const std::vector<double>& x, const std::vector<double>& y, double t) {
  auto it = std::upper_bound(x.begin(), x.end(), t);
  if (it == x.begin()) return y.front();
  if (it == x.end()) return y.back();
  const auto i = static_cast<std::size_t>(it - x.begin());
  const double w = (t - x[i - 1]) / (x[i] - x[i - 1]);
  return (1.0 - w) * y[i - 1] + w * y[i];
}

std::vector<std::pair<double, MatrixProductState>> mps_ensemble(const AbsorptionRecord& record,
                                                               const ProtocolConfig& cfg) {
  const int n = cfg.model.n_sites;
  const SiteLayout layout(n, AtomLevels::GR, cfg.phonons ? cfg.phonons->cutoff : 0);
  auto product_with_r = [&](int k) {
    std::vector<Vec> kets(n, layout.basis_ket(Level::g));
    if (k >= 0) kets[k] = layout.basis_ket(Level::r);
    return mps_from_product(layout, kets);
  };
  std::vector<std::pair<double, MatrixProductState>> out;
  if (record.mixed) {
    for (int k = 0; k < n; ++k) out.emplace_back(1.0 / n, product_with_r(k));
  } else if (record.collective) {
    std::vector<cplx> coeffs(n, cplx(1.0 / std::sqrt(static_cast<double>(n)), 0.0));
    out.emplace_back(1.0, mps_single_excitation(layout, coeffs));
  } else {
    out.emplace_back(1.0, product_with_r(record.absorbed ? record.site : -1));
  }
  return out;
}

}  // namespace

void ProtocolConfig::validate() const {
  model.validate();
  if (phonons) phonons->validate();
  if (model.n_sites < 1) throw ParameterError("ProtocolConfig: n_sites must be >= 1");
  if (!(t_amp > 0.0) || !std::isfinite(t_amp)) throw ParameterError("ProtocolConfig: t_amp must be positive");
  if (!(t_sense >= 0.0) || !std::isfinite(t_sense)) throw ParameterError("ProtocolConfig: t_sense must be >= 0");
  if (integrator.output_grid.empty() && n_output < 2) throw ParameterError("ProtocolConfig: n_output must be >= 2");
  if (absorption.kind == AbsorptionKind::LocalAtSite && absorption.site >= model.n_sites)
    throw ParameterError("ProtocolConfig: absorption site out of range");
  if (absorption.kind == AbsorptionKind::LocalAtSite && absorption.site < -1)
    throw ParameterError("ProtocolConfig: absorption site out of range");
  if (backend == Backend::Tebd && model.gamma_deph > 0.0)
    throw ParameterError("ProtocolConfig: dephasing needs the dense backend");
  trajectories.validate();
  truncation.validate();
  if (!integrator.output_grid.empty()) {
    integrator.validate();
    if (std::abs(integrator.output_grid.back() - t_amp) > 1e-12)
      throw ParameterError("ProtocolConfig: output grid must end at t_amp");
  }
}

std::vector<std::string> ProtocolConfig::warnings() const {
  std::vector<std::string> out;
  if (model.gamma_thz * t_sense > kSinglePhotonWarn)
    out.push_back("gamma_thz * t_sense = " + std::to_string(model.gamma_thz * t_sense) +
                  " exceeds 0.1; more than one absorption per window becomes likely");
  return out;
}

std::vector<double> ProtocolConfig::output_grid() const {
  return integrator.output_grid.empty() ? uniform_grid(t_amp, n_output) : integrator.output_grid;
}

int ProtocolConfig::absorption_site() const {
  return absorption.site >= 0 ? absorption.site : model.n_sites / 2;
}

PureState pi_pulse(const PureState& state, Level from, Level to) {
  if (from == to) throw ParameterError("pi_pulse: levels must differ");
  const auto& space = state.space();
  if (space.levels() != AtomLevels::GER) throw DimensionError("pi_pulse: needs GER atoms");
  const int a = space.layout().atom_index(from), b = space.layout().atom_index(to);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(space.dim()));
  const auto& amp = state.amplitudes();
  for (std::size_t i = 0; i < space.dim(); ++i) {
    if (amp(static_cast<Eigen::Index>(i)) == cplx(0.0)) continue;
    out(static_cast<Eigen::Index>(remap_index(space, space, i, [&](int x) { return swap_atom(x, a, b); }))) =
        amp(static_cast<Eigen::Index>(i));
  }
  return {space, std::move(out)};
}

PureState restrict_to_gr(const PureState& state) {
  const auto& from = state.space();
  if (from.levels() != AtomLevels::GER) throw DimensionError("restrict_to_gr: needs GER atoms");
  HilbertSpace to(SiteLayout(from.n_sites(), AtomLevels::GR, from.phonon_cutoff()));
  const int e = from.layout().atom_index(Level::e);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(to.dim()));
  double e_population = 0.0;
  const auto& amp = state.amplitudes();
  for (std::size_t i = 0; i < from.dim(); ++i) {
    const cplx c = amp(static_cast<Eigen::Index>(i));
    if (c == cplx(0.0)) continue;
    bool has_e = false;
    for (int j = 0; j < from.n_sites() && !has_e; ++j) has_e = from.local_at(i, j) % from.atom_dim() == e;
    if (has_e) {
      e_population += std::norm(c);
      continue;
    }
    out(static_cast<Eigen::Index>(remap_index(from, to, i, [](int x) { return x == 0 ? 0 : 1; }))) = c;
  }
  if (e_population > kSingleExcitationTol)
    throw ParameterError("restrict_to_gr: |e> population " + std::to_string(e_population) + " is not negligible");
  return {to, std::move(out)};
}

PureState attach_phonon_vacuum(const PureState& state, int cutoff) {
  const auto& from = state.space();
  if (from.phonon_cutoff() != 0) throw DimensionError("attach_phonon_vacuum: state already has phonons");
  if (cutoff < 1) throw ParameterError("attach_phonon_vacuum: cutoff must be >= 1");
  HilbertSpace to(SiteLayout(from.n_sites(), from.levels(), cutoff));
  Vec out = Vec::Zero(static_cast<Eigen::Index>(to.dim()));
  for (std::size_t i = 0; i < from.dim(); ++i)
    out(static_cast<Eigen::Index>(remap_index(from, to, i, [](int x) { return x; }))) =
        state.amplitudes()(static_cast<Eigen::Index>(i));
  return {to, std::move(out)};
}

PureState ground_state(int n_sites) {
  HilbertSpace space(n_sites, AtomLevels::GER);
  return uniform_product_state(space, space.layout().basis_ket(Level::g));
}

PureState sensing_state(int n_sites) {
  HilbertSpace space(n_sites, AtomLevels::GER);
  return uniform_product_state(space, space.layout().basis_ket(Level::e));
}

AbsorptionRecord sample_absorption(const ProtocolConfig& cfg, StreamRng& rng) {
  AbsorptionRecord rec;
  switch (cfg.absorption.kind) {
    case AbsorptionKind::LocalAtSite:
      rec.absorbed = true;
      rec.site = cfg.absorption_site();
      break;
    case AbsorptionKind::Collective:
      rec.absorbed = true;
      rec.collective = true;
      break;
    case AbsorptionKind::MixedAverage:
      rec.absorbed = true;
      rec.mixed = true;
      break;
    case AbsorptionKind::LocalSampled: {
      const int n = cfg.model.n_sites;
      const double rate = n * cfg.model.gamma_thz;
      if (rate <= 0.0) break;
      const double wait = rng.exponential(rate);
      if (wait > cfg.t_sense) break;
      rec.absorbed = true;
      rec.time = wait;
      rec.site = std::min(n - 1, static_cast<int>(rng.uniform() * n));
      break;
    }
  }
  return rec;
}

SenseResult sense(const PureState& state, const ProtocolConfig& cfg, StreamRng& rng) {
  const auto& space = state.space();
  if (space.levels() != AtomLevels::GER) throw DimensionError("sense: needs GER atoms");
  if (space.n_sites() != cfg.model.n_sites) throw DimensionError("sense: n_sites differs from the model");
  const auto e_ops = [&] {
    std::vector<double> pops(space.n_sites());
    const Mat ne = local::projector(space.layout(), Level::e);
    for (int j = 0; j < space.n_sites(); ++j) pops[j] = expectation_real(state, embed_site_operator(space, j, ne));
    return pops;
  }();
  for (int j = 0; j < space.n_sites(); ++j)
    if (1.0 - e_ops[j] > kSingleExcitationTol)
      throw ParameterError("sense: site " + std::to_string(j) + " is not in |e>");

  SenseResult out{state, sample_absorption(cfg, rng), {}};
  const auto& rec = out.record;
  if (rec.mixed) {
    for (int k = 0; k < space.n_sites(); ++k)
      out.ensemble.emplace_back(1.0 / space.n_sites(), apply_normalized_jump(state, cfg.model, JumpKind::thz_local(k)));
  } else if (rec.collective) {
    out.state = apply_normalized_jump(state, cfg.model, JumpKind::thz_collective());
  } else if (rec.absorbed) {
    out.state = apply_normalized_jump(state, cfg.model, JumpKind::thz_local(rec.site));
  }
  return out;
}

SignalTrace amplify(const PureState& state, const ProtocolConfig& cfg) {
  cfg.validate();
  PureState psi = state.space().levels() == AtomLevels::GER ? restrict_to_gr(state) : state;
  if (psi.space().n_sites() != cfg.model.n_sites) throw DimensionError("amplify: n_sites differs from the model");
  if (cfg.phonons && psi.space().phonon_cutoff() == 0) psi = attach_phonon_vacuum(psi, cfg.phonons->cutoff);
  if (!cfg.phonons && psi.space().phonon_cutoff() != 0)
    throw DimensionError("amplify: state has phonons but the config does not");
  if (cfg.backend == Backend::Tebd) return amplify(mps_from_dense(psi), cfg);

  const auto& space = psi.space();
  const auto grid = cfg.output_grid();
  IntegratorConfig ic = cfg.integrator;
  ic.output_grid = grid;
  if (ic.method == IntegratorMethod::AdaptiveRK && std::isinf(ic.max_step) && cfg.model.delta_gr != 0.0)
    ic.max_step = 0.05 / std::abs(cfg.model.delta_gr);
  const Operator h = build_hamiltonian(space, cfg.model, cfg.phonons,
                                       cfg.phonons ? HamiltonianKind::AmplificationPhonon : HamiltonianKind::Amplification);
  std::vector<Eigen::VectorXd> columns;
  TraceMetadata meta;
  meta.seed = cfg.seed;

  if (cfg.model.gamma_deph > 0.0 && cfg.dephasing == DephasingMethod::Lindblad) {
    const auto jumps = dephasing_jumps(space, cfg.model);
    LindbladDiagnostics diag;
    evolve_lindblad(
        DensityMatrix::from_pure(psi), h, jumps, ic,
        [&](double, const Mat& rho) { columns.push_back(site_populations(space, rho.diagonal().real())); }, &diag);
    meta.backend = "dense-lindblad";
    if (diag.positivity_checked) meta.lindblad_min_eigenvalue = diag.min_eigenvalue;
    meta.warnings = diag.warnings;
    auto trace = make_trace(grid, std::move(columns));
    trace.metadata = std::move(meta);
    return trace;
  }
  if (cfg.model.gamma_deph > 0.0) {
    const auto jumps = dephasing_jumps(space, cfg.model);
    auto observables = rydberg_number_ops(space);
    observables.push_back(total_rydberg_number(space));
    TrajectoryConfig tcfg = cfg.trajectories;
    tcfg.master_seed = cfg.seed;
    const auto ens = run_trajectories(psi, h, jumps, observables, ic, tcfg);
    const int n = space.n_sites();
    for (std::size_t t = 0; t < grid.size(); ++t)
      columns.push_back(ens.mean.col(static_cast<Eigen::Index>(t)).head(n));
    auto trace = make_trace(grid, std::move(columns));
    for (std::size_t t = 0; t < grid.size(); ++t)
      trace.s_total_stderr.push_back(ens.std_error(n, static_cast<Eigen::Index>(t)));
    meta.backend = "dense-trajectories";
    meta.trajectories_completed = ens.n_completed;
    for (const auto& rec : ens.records)
      if (rec.aborted) meta.warnings.push_back("trajectory aborted: " + rec.diagnostic);
    trace.metadata = std::move(meta);
    return trace;
  }

  evolve_pure(psi, h, ic, [&](double, const Vec& v) {
    columns.push_back(site_populations(space, v.cwiseAbs2()) / v.squaredNorm());
  });
  meta.backend = "dense-pure";
  auto trace = make_trace(grid, std::move(columns));
  trace.metadata = std::move(meta);
  return trace;
}

SignalTrace amplify(const MatrixProductState& psi, const ProtocolConfig& cfg) {
  cfg.validate();
  if (cfg.model.gamma_deph > 0.0) throw ParameterError("amplify: dephasing needs the dense backend");
  if (psi.n_sites() != cfg.model.n_sites) throw DimensionError("amplify: n_sites differs from the model");
  if (psi.layout().phonon_cutoff() != (cfg.phonons ? cfg.phonons->cutoff : 0))
    throw DimensionError("amplify: MPS phonon cutoff differs from the config");
  const auto grid = cfg.output_grid();
  const auto res = tebd_evolve(psi, cfg.model, cfg.phonons, cfg.truncation, grid);
  std::vector<Eigen::VectorXd> columns;
  for (const auto& row : res.s_site) columns.push_back(Eigen::Map<const Eigen::VectorXd>(row.data(), row.size()));
  auto trace = make_trace(res.times, std::move(columns));
  auto& meta = trace.metadata;
  meta.backend = "tebd";
  meta.seed = cfg.seed;
  meta.discarded_weight = res.discarded_weight;
  meta.max_bond = res.max_bond;
  meta.truncation_flagged = res.truncation_flagged;
  meta.max_cutoff_population = res.max_cutoff_population;
  for (double occ : res.max_phonon_occupation) meta.max_phonon_occupation = std::max(meta.max_phonon_occupation, occ);
  meta.warnings = res.warnings;
  return trace;
}

double loglog_slope(const SignalTrace& trace, double t_lo, double t_hi) {
  if (!(t_lo > 0.0 && t_hi > t_lo)) throw ParameterError("loglog_slope: need 0 < t_lo < t_hi");
  if (t_hi > trace.times.back() + 1e-12) throw ParameterError("loglog_slope: window exceeds the trace");
  constexpr int kSamples = 16;
  const double s0 = trace.s_total.front();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < kSamples; ++i) {
    const double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(i) / (kSamples - 1));
    const double ds = interpolate(trace.times, trace.s_total, t) - s0;
    if (!(ds > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double x = std::log(t), y = std::log(ds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (kSamples * sxy - sx * sy) / (kSamples * sxx - sx * sx);
}

AmplificationSummary analyze(const SignalTrace& trace, double omega_ref) {
  if (!(omega_ref > 0.0)) throw ParameterError("analyze: omega_ref must be positive");
  const auto& t = trace.times;
  const auto& s = trace.s_total;
  if (t.size() < 3 || s.size() != t.size()) throw DimensionError("analyze: trace needs at least 3 points");

  std::size_t peak = 0, end = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] > s[peak]) peak = i;
    if (s[i] < (1.0 - kTurnoverDrop) * s[peak]) {
      end = i;
      break;
    }
  }
  if (end == 0) throw HorizonError("analyze: horizon too short, no turnover of S within the window");

  AmplificationSummary out;
  out.omega_ref = omega_ref;
  out.turnover_time = t[end];
  out.t_a = t[peak];
  out.s_max = s[peak];
  if (peak > 0) {
    // Vertex of the parabola through the three points around the grid maximum.
    const double x0 = t[peak - 1], x1 = t[peak], x2 = t[peak + 1];
    const double y0 = s[peak - 1], y1 = s[peak], y2 = s[peak + 1];
    const double num = (x1 - x0) * (x1 - x0) * (y1 - y2) - (x1 - x2) * (x1 - x2) * (y1 - y0);
    const double den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
    if (den != 0.0) {
      const double xv = x1 - 0.5 * num / den;
      if (xv > x0 && xv < x2) {
        const double yv = y0 * (xv - x1) * (xv - x2) / ((x0 - x1) * (x0 - x2)) +
                          y1 * (xv - x0) * (xv - x2) / ((x1 - x0) * (x1 - x2)) +
                          y2 * (xv - x0) * (xv - x1) / ((x2 - x0) * (x2 - x1));
        out.t_a = xv;
        out.s_max = std::max(yv, y1);
      }
    }
  }
  if (!(out.t_a > 0.0)) throw HorizonError("analyze: maximum at t = 0, no growth stage");
  out.velocity = out.s_max / (omega_ref * out.t_a);

  out.early_slope = loglog_slope(trace, out.t_a / 20.0, out.t_a / 10.0);
  out.mid_slope = loglog_slope(trace, 0.4 * out.t_a, 0.8 * out.t_a);
  out.crossover_time = std::numeric_limits<double>::quiet_NaN();
  constexpr int kProbes = 40;
  for (int i = 0; i < kProbes; ++i) {
    const double lo = out.t_a / 20.0 * std::pow(10.0, static_cast<double>(i) / kProbes);
    const double slope = loglog_slope(trace, lo, 2.0 * lo);
    if (slope < 1.5) {
      out.crossover_time = lo * std::sqrt(2.0);
      break;
    }
  }
  return out;
}

SignalTrace mixed_average_trace(const std::vector<std::pair<double, SignalTrace>>& traces) {
  if (traces.empty()) throw ParameterError("mixed_average_trace: no traces");
  const auto& first = traces.front().second;
  double wsum = 0.0;
  for (const auto& [w, tr] : traces) {
    if (!(w >= 0.0)) throw ParameterError("mixed_average_trace: negative weight");
    wsum += w;
    if (tr.times.size() != first.times.size() || tr.s_site.rows() != first.s_site.rows())
      throw DimensionError("mixed_average_trace: grid mismatch");
    for (std::size_t i = 0; i < tr.times.size(); ++i)
      if (std::abs(tr.times[i] - first.times[i]) > 1e-12) throw DimensionError("mixed_average_trace: grid mismatch");
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ParameterError("mixed_average_trace: weights must sum to 1");

  SignalTrace out;
  out.times = first.times;
  out.s_site = Eigen::MatrixXd::Zero(first.s_site.rows(), first.s_site.cols());
  for (const auto& [w, tr] : traces) out.s_site += w * tr.s_site;
  for (Eigen::Index t = 0; t < out.s_site.cols(); ++t) out.s_total.push_back(out.s_site.col(t).sum());
  out.metadata = first.metadata;
  out.metadata.warnings.clear();
  for (const auto& [w, tr] : traces) {
    const auto& m = tr.metadata;
    out.metadata.discarded_weight = std::max(out.metadata.discarded_weight, m.discarded_weight);
    out.metadata.max_bond = std::max(out.metadata.max_bond, m.max_bond);
    out.metadata.truncation_flagged |= m.truncation_flagged;
    out.metadata.max_phonon_occupation = std::max(out.metadata.max_phonon_occupation, m.max_phonon_occupation);
    out.metadata.max_cutoff_population = std::max(out.metadata.max_cutoff_population, m.max_cutoff_population);
    for (const auto& msg : m.warnings) out.metadata.warnings.push_back(msg);
  }
  return out;
}

ProtocolResult run_protocol(const ProtocolConfig& cfg) {
  cfg.validate();
  StreamRng rng(cfg.seed, kSenseStream);
  ProtocolResult out;
  std::vector<std::pair<double, SignalTrace>> traces;

  if (cfg.backend == Backend::Tebd) {
    out.record = sample_absorption(cfg, rng);
    auto ensemble = mps_ensemble(out.record, cfg);
    traces.resize(ensemble.size());
    parallel_for(static_cast<int>(ensemble.size()), cfg.trajectories.n_threads, [&](int i) {
      traces[i] = {ensemble[i].first, amplify(ensemble[i].second, cfg)};
    });
  } else {
    const PureState excited = pi_pulse(ground_state(cfg.model.n_sites), Level::g, Level::e);
    SenseResult sensed = sense(excited, cfg, rng);
    out.record = sensed.record;
    if (sensed.ensemble.empty()) sensed.ensemble.emplace_back(1.0, sensed.state);
    traces.resize(sensed.ensemble.size());
    parallel_for(static_cast<int>(sensed.ensemble.size()), cfg.trajectories.n_threads, [&](int i) {
      const PureState ready = pi_pulse(sensed.ensemble[i].second, Level::e, Level::g);
      traces[i] = {sensed.ensemble[i].first, amplify(ready, cfg)};
    });
  }
  out.trace = traces.size() == 1 ? std::move(traces.front().second) : mixed_average_trace(traces);
  for (const auto& w : cfg.warnings()) out.trace.metadata.warnings.push_back(w);
  try {
    out.summary = analyze(out.trace, 1.0);
  } catch (const HorizonError& e) {
    out.summary_error = e.what();
  }
  return out;
}

}  // namespace avalanche
