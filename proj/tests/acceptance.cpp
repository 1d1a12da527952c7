// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "avalanche/scenario.hpp"

using namespace avalanche;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path workdir(const std::string& name) {
  const fs::path dir = fs::path(AVALANCHE_WORKDIR) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string out_override(const fs::path& dir) { return "output_dir=" + ordered_json(dir.string()).dump(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double trace_max(const SignalTrace& tr) { return *std::max_element(tr.s_total.begin(), tr.s_total.end()); }

const JobOutcome& single_job(const RunOutcome& out) { return out.jobs.at(0); }

// 1. S_max/(Omega0 T_a) = 1.85 Omega/Omega0 within 10%; T_a halves when Omega doubles.
Verdict velocity_law() {
  const auto dir = workdir("c1");
  const auto out = run_scenario(load_run_config("figS1-rabi-scan", {out_override(dir)}), false, 1);
  Verdict v{true, ""};
  double ta_1 = NAN, ta_2 = NAN;
  for (const auto& job : out.jobs) {
    const double ratio = job.value.get<double>();
    if (!job.result.summary) {
      v.pass = false;
      v.detail += fmt("Omega=%g: %s; ", ratio, job.result.summary_error.c_str());
      continue;
    }
    const auto& s = *job.result.summary;
    const double target = 1.85 * ratio;
    const bool ok = std::abs(s.velocity / target - 1.0) <= 0.10;
    v.pass = v.pass && ok;
    v.detail += fmt("Omega=%g: v=%.4f (target %.4f) T_a=%.4f S_max=%.4f; ", ratio, s.velocity, target, s.t_a, s.s_max);
    if (ratio == 1.0) ta_1 = s.t_a;
    if (ratio == 2.0) ta_2 = s.t_a;
  }
  const double halving = ta_2 / ta_1;
  v.pass = v.pass && std::abs(halving - 0.5) <= 0.05;
  v.detail += fmt("T_a(2)/T_a(1)=%.4f", halving);
  return v;
}

// 2. Final-quarter mean of S at gamma_deph = 10 within N/2 +- 5%.
Verdict dephasing_steady_state() {
  const auto dir = workdir("c2");
  const auto base = load_run_config("figS2-dephasing", {out_override(dir)});
  const auto out = run_scenario(with_value(base, "gamma_deph", 10.0), false, 1);
  const auto& tr = single_job(out).result.trace;
  const double mean = final_quarter_mean(tr);
  const double half = tr.n_sites() / 2.0;
  return {mean >= 0.95 * half && mean <= 1.05 * half,
          fmt("mean S over final quarter = %.5f, window [%.4f, %.4f]", mean, 0.95 * half, 1.05 * half)};
}

// 3. Early log-log slope 2 +- 0.3, mid slope 1 +- 0.3, and S decreases after T_a.
Verdict three_stages() {
  const auto dir = workdir("c3");
  const auto out = run_scenario(load_run_config("fig2-local", {out_override(dir)}), false, 1);
  const auto& r = single_job(out).result;
  if (!r.summary) return {false, r.summary_error};
  const auto& s = *r.summary;
  double after = s.s_max;
  for (std::size_t i = 0; i < r.trace.times.size(); ++i)
    if (r.trace.times[i] > s.t_a) after = std::min(after, r.trace.s_total[i]);
  const bool ok = std::abs(s.early_slope - 2.0) <= 0.3 && std::abs(s.mid_slope - 1.0) <= 0.3 && after < s.s_max;
  return {ok, fmt("early slope %.4f, mid slope %.4f, T_a=%.4f, S_max=%.4f, min S after T_a=%.4f", s.early_slope,
                  s.mid_slope, s.t_a, s.s_max, after)};
}

// 4. collective >= mixed - 1e-6 up to T_a(collective); mixed <= local(central) + 1e-6 up to T_a(local).
Verdict collective_enhancement() {
  const auto dir = workdir("c4");
  auto run = [&](const char* preset) {
    return single_job(run_scenario(load_run_config(preset, {out_override(dir / preset)}), false, 1)).result;
  };
  const auto coll = run("fig2-collective");
  const auto mixed = run("fig2-mixed");
  const auto local = run("fig2-local");
  if (!coll.summary || !local.summary) return {false, "missing turnover: " + coll.summary_error + local.summary_error};
  double worst_cm = INFINITY, worst_ml = INFINITY;
  for (std::size_t i = 0; i < coll.trace.times.size(); ++i) {
    const double t = coll.trace.times[i];
    if (t <= coll.summary->t_a) worst_cm = std::min(worst_cm, coll.trace.s_total[i] - mixed.trace.s_total[i]);
    if (t <= local.summary->t_a) worst_ml = std::min(worst_ml, local.trace.s_total[i] - mixed.trace.s_total[i]);
  }
  return {worst_cm >= -1e-6 && worst_ml >= -1e-6,
          fmt("min(S_coll - S_mixed) = %.3e up to T_a=%.3f; min(S_local - S_mixed) = %.3e up to T_a=%.3f", worst_cm,
              coll.summary->t_a, worst_ml, local.summary->t_a)};
}

// 5. Sum of local absorption rates equals the collective rate equals N Gamma.
Verdict absorption_identity() {
  double worst = 0.0;
  const double gamma = 0.37;
  for (int n = 2; n <= 6; ++n) {
    ModelParams p;
    p.n_sites = n;
    p.gamma_thz = gamma;
    const auto psi = sensing_state(n);
    const auto& space = psi.space();
    const auto locals = local_thz_jumps(space, p);
    const std::vector<Operator> coll{build_jump(space, p, JumpKind::thz_collective())};
    worst = std::max({worst, std::abs(absorption_rate(psi, locals) - n * gamma),
                      std::abs(absorption_rate(psi, coll) - n * gamma)});
  }
  return {worst <= 1e-12, fmt("max deviation %.3e over N = 2..6", worst)};
}

// 6. 2000 trajectories agree with Lindblad within 3 standard errors.
Verdict unraveling() {
  ProtocolConfig cfg;
  cfg.model.n_sites = 3;
  cfg.model.omega_gr = 1.0;
  cfg.model.delta_gr = -500.0;
  cfg.model.v_rr = 500.0;
  cfg.model.gamma_deph = 1.0;
  cfg.t_amp = 5.0;
  cfg.n_output = 11;
  cfg.integrator.rel_tol = 1e-9;
  cfg.integrator.abs_tol = 1e-11;
  cfg.seed = 20240611;
  HilbertSpace space(3, AtomLevels::GR);
  std::vector<Vec> kets(3, space.layout().basis_ket(Level::g));
  kets[1] = space.layout().basis_ket(Level::r);
  const auto psi = product_state(space, kets);
  const auto lind = amplify(psi, cfg);
  cfg.dephasing = DephasingMethod::Trajectories;
  cfg.trajectories.n_trajectories = 2000;
  const auto traj = amplify(psi, cfg);
  double worst = 0.0;
  bool ok = traj.metadata.trajectories_completed == 2000;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    const double diff = std::abs(traj.s_total[i] - lind.s_total[i]);
    // S(0) is deterministic, so its standard error vanishes; 1e-6 is the integrator floor.
    ok = ok && diff <= 3.0 * traj.s_total_stderr[i] + 1e-6;
    if (traj.s_total_stderr[i] > 0.0) worst = std::max(worst, diff / traj.s_total_stderr[i]);
  }
  return {ok, fmt("max |difference| / standard error = %.3f over %zu times", worst, traj.times.size())};
}

// 7. TEBD vs dense for N=4 to 1e-3 on [0, 4], Trotter exponent in [1.7, 2.3].
Verdict tebd_dense() {
  struct Case {
    int n_max;
    double kappa;
  };
  Verdict v{true, ""};
  for (const Case c : {Case{0, 0.0}, Case{2, 0.0}, Case{2, 1.5}}) {
    const int n = 4;
    ModelParams p;
    p.n_sites = n;
    p.omega_gr = 1.0;
    p.delta_gr = -500.0;
    p.v_rr = 500.0;
    std::optional<PhononParams> ph;
    if (c.n_max > 0) {
      ph = PhononParams{};
      ph->cutoff = c.n_max;
      ph->kappa = c.kappa;
    }
    const SiteLayout lay(n, AtomLevels::GR, c.n_max);
    std::vector<Vec> kets(n, lay.basis_ket(Level::g));
    kets[1] = lay.basis_ket(Level::r);
    const auto grid = uniform_grid(4.0, 41);

    HilbertSpace space(lay);
    const auto h = build_hamiltonian(space, p, ph, ph ? HamiltonianKind::AmplificationPhonon : HamiltonianKind::Amplification);
    IntegratorConfig ic;
    ic.output_grid = grid;
    ic.rel_tol = 1e-11;
    ic.abs_tol = 1e-13;
    const auto ops = rydberg_number_ops(space);
    std::vector<std::vector<double>> ref;
    evolve_pure(product_state(space, kets), h, ic, [&](double, const Vec& x) {
      const PureState st(space, x);
      std::vector<double> row;
      for (const auto& op : ops) row.push_back(expectation_real(st, op));
      ref.push_back(row);
    });

    auto error_at = [&](double dt) {
      TruncationPolicy pol;
      pol.chi_max = 1 << 20;  // unbounded for this size
      pol.svd_cutoff = 1e-14;
      pol.trotter_dt = dt;
      const auto res = tebd_evolve(mps_from_product(lay, kets), p, ph, pol, grid);
      double e = 0.0;
      for (std::size_t t = 0; t < grid.size(); ++t)
        for (int j = 0; j < n; ++j) e = std::max(e, std::abs(res.s_site[t][j] - ref[t][j]));
      return e;
    };
    const double e1 = error_at(5e-4), e2 = error_at(2.5e-4);
    const double order = std::log2(e1 / e2);
    const bool ok = e2 <= 1e-3 && order >= 1.7 && order <= 2.3;
    v.pass = v.pass && ok;
    v.detail += fmt("n_max=%d kappa=%g: err(dt=2.5e-4)=%.3e exponent=%.3f; ", c.n_max, c.kappa, e2, order);
  }
  return v;
}

// 8. S_max(0) > S_max(1.5) > S_max(3) with margins above twice the discarded weight.
Verdict kappa_monotonicity() {
  const auto dir = workdir("c8");
  const auto out = run_scenario(load_run_config("fig4-phonon", {out_override(dir)}), false, 1);
  std::vector<double> smax;
  double bound = 0.0;
  std::string detail;
  for (const auto& job : out.jobs) {
    const auto& m = job.result.trace.metadata;
    smax.push_back(trace_max(job.result.trace));
    bound = std::max(bound, m.discarded_weight);
    detail += fmt("kappa=%g: S_max=%.5f discarded=%.2e max_bond=%d%s; ", job.value.get<double>(), smax.back(),
                  m.discarded_weight, m.max_bond, m.truncation_flagged ? " (flagged)" : "");
  }
  if (smax.size() != 3) return {false, "expected three kappa values"};
  const double m1 = smax[0] - smax[1], m2 = smax[1] - smax[2];
  detail += fmt("margins %.5f, %.5f vs 2x bound %.2e", m1, m2, 2.0 * bound);
  return {m1 > 2.0 * bound && m2 > 2.0 * bound, detail};
}

// 9. Single-atom Rabi formula, two-site facilitation formula, H_eff norm decay.
Verdict micro_oracles() {
  std::string detail;
  bool ok = true;
  {
    const double omega = 1.0, delta = 3.0;
    HilbertSpace s(1, AtomLevels::GR);
    ModelParams p;
    p.n_sites = 1;
    p.omega_gr = omega;
    p.delta_gr = delta;
    IntegratorConfig ic;
    ic.output_grid = uniform_grid(10.0, 201);
    ic.rel_tol = 1e-12;
    ic.abs_tol = 1e-14;
    const auto nr = rydberg_number_ops(s).front();
    const double w2 = omega * omega + delta * delta / 4.0;
    double worst = 0.0;
    evolve_pure(uniform_product_state(s, s.layout().basis_ket(Level::g)),
                build_hamiltonian(s, p, std::nullopt, HamiltonianKind::Amplification), ic, [&](double t, const Vec& x) {
                  const double pr = omega * omega / w2 * std::pow(std::sin(std::sqrt(w2) * t), 2);
                  worst = std::max(worst, std::abs(expectation_real(PureState(s, x), nr) - pr));
                });
    ok = ok && worst <= 1e-6;
    detail += fmt("Rabi max dev %.3e (<= 1e-6); ", worst);
  }
  {
    const double delta = 500.0;
    HilbertSpace s(2, AtomLevels::GR);
    ModelParams p;
    p.n_sites = 2;
    p.omega_gr = 1.0;
    p.delta_gr = -delta;
    p.v_rr = delta;
    IntegratorConfig ic;
    ic.output_grid = uniform_grid(3.0, 61);
    ic.rel_tol = 1e-12;
    ic.abs_tol = 1e-14;
    const auto total = total_rydberg_number(s);
    const std::vector<Vec> kets{s.layout().basis_ket(Level::g), s.layout().basis_ket(Level::r)};
    double worst = 0.0;
    evolve_pure(product_state(s, kets), build_hamiltonian(s, p, std::nullopt, HamiltonianKind::Amplification), ic,
                [&](double t, const Vec& x) {
                  const double expected = 1.0 + std::pow(std::sin(t), 2);
                  worst = std::max(worst, std::abs(expectation_real(PureState(s, x), total) - expected));
                });
    const double tol = 5.0 / (delta * delta);
    ok = ok && worst <= tol;
    detail += fmt("two-site max dev %.3e (<= %.1e); ", worst, tol);
  }
  {
    double worst = 0.0;
    const double gamma = 0.2;
    for (int n = 1; n <= 4; ++n) {
      const auto psi = sensing_state(n);
      ModelParams p;
      p.n_sites = n;
      p.gamma_thz = gamma;
      IntegratorConfig ic;
      ic.output_grid = uniform_grid(5.0, 51);
      ic.rel_tol = 1e-12;
      ic.abs_tol = 1e-14;
      evolve_pure(psi, build_hamiltonian(psi.space(), p, std::nullopt, HamiltonianKind::EffectiveLocal), ic,
                  [&](double t, const Vec& x) {
                    worst = std::max(worst, std::abs(x.squaredNorm() - std::exp(-n * gamma * t)));
                  });
    }
    ok = ok && worst <= 1e-8;
    detail += fmt("H_eff norm decay max dev %.3e (<= 1e-8)", worst);
  }
  return {ok, detail};
}

// 10. Byte-identical trace.csv for 1 and 4 threads and for a repeated run.
Verdict determinism() {
  auto run = [](const std::string& name, int threads) {
    const auto dir = workdir(name);
    auto cfg = load_run_config("figS2-dephasing",
                               {out_override(dir), "dephasing_method=trajectories", "n_trajectories=32", "t_amp=1",
                                "n_output=21", "seed=987654321", "threads=" + std::to_string(threads)});
    run_scenario(cfg, false, threads);
    std::string all;
    for (const auto& v : cfg.sweep->values) all += slurp(dir / ("gamma_deph=" + v.dump()) / "trace.csv");
    return all;
  };
  const auto a = run("c10_t1", 1), b = run("c10_t4", 4), c = run("c10_t1_again", 1);
  const bool ok = !a.empty() && a == b && a == c;
  return {ok, fmt("%zu bytes of trace.csv compared across 1/4/1 threads", a.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"velocity law", velocity_law},
      {"dephasing steady state", dephasing_steady_state},
      {"three-stage growth", three_stages},
      {"collective enhancement", collective_enhancement},
      {"absorption-rate identity", absorption_identity},
      {"unraveling equivalence", unraveling},
      {"TEBD-dense equivalence", tebd_dense},
      {"kappa monotonicity", kappa_monotonicity},
      {"analytic micro-oracles", micro_oracles},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first,
                v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
