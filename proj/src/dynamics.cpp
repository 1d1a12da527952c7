#include "avalanche/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <thread>

#include "avalanche/random.hpp"

namespace avalanche {

namespace {

constexpr double kPositivityWarn = -1e-6;
constexpr std::size_t kPositivityCheckMaxDim = 1024;

/// Propagates a linear ODE by either method, remembering RK step sizes.
class Propagator {
 public:
  Propagator(LinearMap apply, const IntegratorConfig& cfg) : apply_(std::move(apply)), cfg_(cfg) {}

  Vec operator()(const Vec& x, double tau) {
    if (tau == 0.0) return x;
    if (cfg_.method == IntegratorMethod::KrylovExpm) {
      KrylovOptions opts{cfg_.krylov_dim, cfg_.rel_tol, cfg_.abs_tol};
      return krylov_propagate(apply_, x, tau, opts, &stats_);
    }
    RkOptions opts{cfg_.rel_tol, cfg_.abs_tol, cfg_.max_step};
    return rk45_propagate(apply_, x, 0.0, tau, opts, step_hint_, &stats_);
  }

  const PropagationStats& stats() const { return stats_; }

 private:
  LinearMap apply_;
  IntegratorConfig cfg_;
  double step_hint_ = 0.0;
  PropagationStats stats_;
};

}  // namespace

void IntegratorConfig::validate() const {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ParameterError("IntegratorConfig: tolerances must be positive");
  if (!(max_step > 0.0)) throw ParameterError("IntegratorConfig: max_step must be positive");
  if (krylov_dim < 2) throw ParameterError("IntegratorConfig: krylov_dim must be >= 2");
  if (output_grid.empty() || output_grid.front() != 0.0)
    throw ParameterError("IntegratorConfig: output grid must start at 0");
  for (std::size_t i = 1; i < output_grid.size(); ++i)
    if (!(output_grid[i] > output_grid[i - 1]))
      throw ParameterError("IntegratorConfig: output grid must be strictly increasing");
}

std::vector<double> uniform_grid(double t_final, int n_points) {
  if (n_points < 2 || !(t_final > 0.0)) throw ParameterError("uniform_grid: need t_final > 0 and >= 2 points");
  std::vector<double> grid(n_points);
  for (int i = 0; i < n_points; ++i) grid[i] = t_final * static_cast<double>(i) / (n_points - 1);
  return grid;
}

void TrajectoryConfig::validate() const {
  if (n_trajectories < 1) throw ParameterError("TrajectoryConfig: n_trajectories must be >= 1");
  if (!(jump_resolution > 0.0)) throw ParameterError("TrajectoryConfig: jump_resolution must be positive");
  if (n_threads < 1) throw ParameterError("TrajectoryConfig: n_threads must be >= 1");
}

LinearMap schrodinger_generator(const Operator& h) {
  const SparseMat* m = &h.matrix();
  return [m](const Vec& x, Vec& y) { y.noalias() = cplx(0.0, -1.0) * ((*m) * x); };
}

LinearMap lindblad_generator(const Operator& h, std::span<const Operator> jumps) {
  const auto d = static_cast<Eigen::Index>(h.space().dim());
  SparseMat heff = h.matrix();
  auto jump_mats = std::make_shared<std::vector<SparseMat>>();
  for (const auto& l : jumps) {
    if (!(l.space() == h.space())) throw DimensionError("lindblad_generator: jump space mismatch");
    if (l.matrix().nonZeros() == 0) continue;
    heff -= cplx(0.0, 0.5) * SparseMat(l.matrix().adjoint() * l.matrix());
    jump_mats->push_back(l.matrix());
  }
  auto heff_ptr = std::make_shared<SparseMat>(std::move(heff));
  auto heff_dag = std::make_shared<SparseMat>(heff_ptr->adjoint());
  auto jump_dags = std::make_shared<std::vector<SparseMat>>();
  for (const auto& l : *jump_mats) jump_dags->push_back(l.adjoint());

  return [d, heff_ptr, heff_dag, jump_mats, jump_dags](const Vec& x, Vec& y) {
    Eigen::Map<const Mat> rho(x.data(), d, d);
    y.resize(d * d);
    Eigen::Map<Mat> out(y.data(), d, d);
    Mat left = (*heff_ptr) * rho;
    Mat right = rho * (*heff_dag);
    out = cplx(0.0, -1.0) * (left - right);
    for (std::size_t k = 0; k < jump_mats->size(); ++k) {
      Mat lr = (*jump_mats)[k] * rho;
      out += lr * (*jump_dags)[k];
    }
  };
}

void evolve_pure(const PureState& state, const Operator& h, const IntegratorConfig& cfg,
                 const PureObserver& observer) {
  cfg.validate();
  if (!(state.space() == h.space())) throw DimensionError("evolve_pure: space mismatch");
  Propagator propagate(schrodinger_generator(h), cfg);
  Vec psi = state.amplitudes();
  observer(cfg.output_grid.front(), psi);
  for (std::size_t i = 1; i < cfg.output_grid.size(); ++i) {
    psi = propagate(psi, cfg.output_grid[i] - cfg.output_grid[i - 1]);
    observer(cfg.output_grid[i], psi);
  }
}

std::vector<TimedState> evolve_pure(const PureState& state, const Operator& h, const IntegratorConfig& cfg) {
  std::vector<TimedState> out;
  out.reserve(cfg.output_grid.size());
  evolve_pure(state, h, cfg,
              [&](double t, const Vec& psi) { out.push_back({t, PureState(state.space(), psi)}); });
  return out;
}

void evolve_lindblad(const DensityMatrix& rho0, const Operator& h, std::span<const Operator> jumps,
                     const IntegratorConfig& cfg, const DensityObserver& observer,
                     LindbladDiagnostics* diagnostics) {
  cfg.validate();
  if (!(rho0.space() == h.space())) throw DimensionError("evolve_lindblad: space mismatch");
  if (!h.is_hermitian()) throw ParameterError("evolve_lindblad: Hamiltonian must be Hermitian");

  const auto d = static_cast<Eigen::Index>(rho0.space().dim());
  const bool check_positivity = rho0.space().dim() <= kPositivityCheckMaxDim;
  LindbladDiagnostics diag;
  diag.positivity_checked = check_positivity;
  diag.min_eigenvalue = check_positivity ? rho0.min_eigenvalue() : 0.0;

  Propagator propagate(lindblad_generator(h, jumps), cfg);
  const double trace0 = rho0.trace().real();
  Mat rho = rho0.matrix();
  observer(cfg.output_grid.front(), rho);
  for (std::size_t i = 1; i < cfg.output_grid.size(); ++i) {
    Vec x = Eigen::Map<const Vec>(rho.data(), d * d);
    x = propagate(x, cfg.output_grid[i] - cfg.output_grid[i - 1]);
    rho = Eigen::Map<const Mat>(x.data(), d, d);
    rho = 0.5 * (rho + rho.adjoint()).eval();

    const double drift = std::abs(rho.trace().real() - trace0);
    diag.max_trace_drift = std::max(diag.max_trace_drift, drift);
    if (drift > 100.0 * cfg.rel_tol)
      throw NumericalError("evolve_lindblad: trace drift " + std::to_string(drift) + " at t=" +
                           std::to_string(cfg.output_grid[i]));
    if (check_positivity) {
      const double ev = DensityMatrix(rho0.space(), rho).min_eigenvalue();
      diag.min_eigenvalue = std::min(diag.min_eigenvalue, ev);
      if (ev < kPositivityWarn)
        diag.warnings.push_back("negative eigenvalue " + std::to_string(ev) + " at t=" +
                                std::to_string(cfg.output_grid[i]));
    }
    observer(cfg.output_grid[i], rho);
  }
  if (diagnostics) *diagnostics = std::move(diag);
}

std::vector<TimedDensity> evolve_lindblad(const DensityMatrix& rho, const Operator& h,
                                          std::span<const Operator> jumps, const IntegratorConfig& cfg,
                                          LindbladDiagnostics* diagnostics) {
  std::vector<TimedDensity> out;
  out.reserve(cfg.output_grid.size());
  evolve_lindblad(
      rho, h, jumps, cfg, [&](double t, const Mat& m) { out.push_back({t, DensityMatrix(rho.space(), m)}); },
      diagnostics);
  return out;
}

namespace {

struct TrajectoryOutput {
  Eigen::MatrixXd values;  // n_obs x n_times
  TrajectoryRecord record;
};

TrajectoryOutput run_single(const Vec& initial, const SparseMat& heff, std::span<const Operator> jumps,
                            std::span<const Operator> observables, const IntegratorConfig& cfg,
                            const TrajectoryConfig& tcfg, std::uint64_t index) {
  const auto& grid = cfg.output_grid;
  TrajectoryOutput out;
  out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(observables.size()),
                                     static_cast<Eigen::Index>(grid.size()));
  StreamRng rng(tcfg.master_seed, index);
  Propagator propagate(
      [&heff](const Vec& x, Vec& y) { y.noalias() = cplx(0.0, -1.0) * (heff * x); }, cfg);

  auto record = [&](std::size_t k, const Vec& psi) {
    const Vec unit = psi / psi.norm();
    for (std::size_t o = 0; o < observables.size(); ++o)
      out.values(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(k)) =
          unit.dot(observables[o].matrix() * unit).real();
  };

  Vec psi = initial;
  double t = grid.front();
  double threshold = rng.uniform();
  record(0, psi);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    while (true) {
      const double span = grid[k] - t;
      Vec end = propagate(psi, span);
      if (end.squaredNorm() > threshold) {
        psi = std::move(end);
        t = grid[k];
        break;
      }
      // Bracket the threshold crossing: norm^2(lo) > threshold >= norm^2(hi).
      double lo = 0.0, hi = span;
      Vec at_hi = std::move(end);
      while (hi - lo > tcfg.jump_resolution) {
        const double mid = 0.5 * (lo + hi);
        Vec at_mid = propagate(psi, mid);
        if (at_mid.squaredNorm() > threshold) {
          lo = mid;
        } else {
          hi = mid;
          at_hi = std::move(at_mid);
        }
      }
      t += hi;
      std::vector<double> weights(jumps.size());
      double total = 0.0;
      std::vector<Vec> candidates(jumps.size());
      for (std::size_t i = 0; i < jumps.size(); ++i) {
        candidates[i] = jumps[i].matrix() * at_hi;
        weights[i] = candidates[i].squaredNorm();
        total += weights[i];
      }
      if (!(total > 0.0)) {
        out.record.aborted = true;
        out.record.diagnostic = "zero-norm jump at t=" + std::to_string(t);
        return out;
      }
      double u = rng.uniform() * total;
      std::size_t channel = 0;
      for (; channel + 1 < jumps.size(); ++channel) {
        if (u < weights[channel]) break;
        u -= weights[channel];
      }
      while (weights[channel] == 0.0) --channel;  // u landed on a rounding edge
      psi = candidates[channel] / std::sqrt(weights[channel]);
      out.record.jumps.push_back({t, static_cast<int>(channel)});
      threshold = rng.uniform();
      if (t >= grid[k]) {
        t = grid[k];
        break;
      }
    }
    record(k, psi);
  }
  return out;
}

}  // namespace

EnsembleResult run_trajectories(const PureState& initial, const Operator& h, std::span<const Operator> jumps,
                                std::span<const Operator> observables, const IntegratorConfig& cfg,
                                const TrajectoryConfig& tcfg) {
  cfg.validate();
  tcfg.validate();
  if (!(initial.space() == h.space())) throw DimensionError("run_trajectories: space mismatch");
  if (std::abs(initial.norm() - 1.0) > 1e-9) throw ParameterError("run_trajectories: initial state not normalized");
  for (const auto& o : observables)
    if (!o.is_hermitian()) throw ParameterError("run_trajectories: observables must be Hermitian");

  SparseMat heff = h.matrix();
  for (const auto& l : jumps) {
    if (!(l.space() == h.space())) throw DimensionError("run_trajectories: jump space mismatch");
    heff -= cplx(0.0, 0.5) * SparseMat(l.matrix().adjoint() * l.matrix());
  }

  const auto n = static_cast<std::size_t>(tcfg.n_trajectories);
  std::vector<TrajectoryOutput> slots(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++)
      slots[i] = run_single(initial.amplitudes(), heff, jumps, observables, cfg, tcfg, i);
  };
  const int n_threads = std::min<int>(tcfg.n_threads, tcfg.n_trajectories);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }

  EnsembleResult result;
  result.times = cfg.output_grid;
  const auto n_obs = static_cast<Eigen::Index>(observables.size());
  const auto n_t = static_cast<Eigen::Index>(cfg.output_grid.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_obs, n_t);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n_obs, n_t);
  // Reduction in index order keeps results independent of thread scheduling.
  for (auto& slot : slots) {
    if (!slot.record.aborted) {
      sum += slot.values;
      sum_sq += slot.values.cwiseProduct(slot.values);
      ++result.n_completed;
    }
    result.records.push_back(std::move(slot.record));
  }
  const double m = result.n_completed;
  result.mean = m > 0 ? Eigen::MatrixXd(sum / m) : Eigen::MatrixXd::Zero(n_obs, n_t);
  result.std_error = Eigen::MatrixXd::Zero(n_obs, n_t);
  if (m > 1) {
    Eigen::MatrixXd var = (sum_sq - sum.cwiseProduct(sum) / m) / (m - 1.0);
    result.std_error = (var.cwiseMax(0.0) / m).cwiseSqrt();
  }
  return result;
}

}  // namespace avalanche
