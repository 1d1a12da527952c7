#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "avalanche/model.hpp"
#include "oracle.hpp"

using namespace avalanche;

namespace {

Mat dense(const Operator& op) { return Mat(op.matrix()); }

ModelParams chain(int n, double omega = 1.0, double delta = -500.0, double v = 500.0) {
  ModelParams p;
  p.n_sites = n;
  p.omega_gr = omega;
  p.delta_gr = delta;
  p.v_rr = v;
  return p;
}

// Site-reversal permutation matrix.
Mat reversal(const HilbertSpace& s) {
  Mat p = Mat::Zero(static_cast<Eigen::Index>(s.dim()), static_cast<Eigen::Index>(s.dim()));
  for (std::size_t i = 0; i < s.dim(); ++i) {
    auto cfg = s.decode(i);
    std::reverse(cfg.begin(), cfg.end());
    p(static_cast<Eigen::Index>(s.encode(cfg)), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("parameter validation") {
  ModelParams p;
  CHECK_NOTHROW(p.validate());
  CHECK(p.facilitation_residual() == 0.0);
  p.gamma_thz = -1.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = ModelParams{};
  p.gamma_deph = -0.1;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = ModelParams{};
  p.v_rr = std::nan("");
  CHECK_THROWS_AS(p.validate(), ParameterError);
  PhononParams ph;
  CHECK_NOTHROW(ph.validate());
  ph.nu = 0.0;
  CHECK_THROWS_AS(ph.validate(), ParameterError);
  ph = PhononParams{};
  ph.cutoff = 0;
  CHECK_THROWS_AS(ph.validate(), ParameterError);
}

TEST_CASE("amplification Hamiltonian") {
  SUBCASE("single site") {
    HilbertSpace s(1, AtomLevels::GR);
    const Mat h = dense(build_hamiltonian(s, chain(1, 1.0, 0.0, 123.0), std::nullopt, HamiltonianKind::Amplification));
    Mat expected(2, 2);
    expected << 0, 1, 1, 0;
    CHECK((h - expected).norm() == 0.0);
  }
  SUBCASE("two sites at the facilitation condition") {
    HilbertSpace s(2, AtomLevels::GR);
    const auto op = build_hamiltonian(s, chain(2), std::nullopt, HamiltonianKind::Amplification);
    CHECK(op.is_hermitian());
    const Mat h = dense(op);
    const std::vector<int> rr{1, 1}, gr{0, 1};
    const auto irr = static_cast<Eigen::Index>(s.encode(rr)), igr = static_cast<Eigen::Index>(s.encode(gr));
    CHECK(h(irr, irr).real() == doctest::Approx(-500.0));
    CHECK(h(igr, igr).real() == doctest::Approx(-500.0));
    oracle::Chain c{2, 2};
    CHECK((h - oracle::amplification(c, 1.0, -500.0, 500.0)).norm() < 1e-12);
  }
  SUBCASE("brute-force comparison, GR and GER, several sizes") {
    for (int n = 1; n <= 4; ++n) {
      const auto p = chain(n, 0.7, -3.0, 2.5);
      HilbertSpace gr(n, AtomLevels::GR), ger(n, AtomLevels::GER);
      CHECK((dense(build_hamiltonian(gr, p, std::nullopt, HamiltonianKind::Amplification)) -
             oracle::amplification({n, 2}, 0.7, -3.0, 2.5))
                .norm() < 1e-12);
      CHECK((dense(build_hamiltonian(ger, p, std::nullopt, HamiltonianKind::Amplification)) -
             oracle::amplification({n, 3}, 0.7, -3.0, 2.5))
                .norm() < 1e-12);
    }
  }
  SUBCASE("reflection symmetry") {
    HilbertSpace s(5, AtomLevels::GR);
    const Mat h = dense(build_hamiltonian(s, chain(5, 1.3, -2.0, 7.0), std::nullopt, HamiltonianKind::Amplification));
    const Mat p = reversal(s);
    CHECK((p * h * p.transpose() - h).norm() < 1e-12);
  }
  SUBCASE("no interaction: uncoupled detuned atoms") {
    HilbertSpace s(2, AtomLevels::GR);
    const Mat h = dense(build_hamiltonian(s, chain(2, 1.0, 0.4, 0.0), std::nullopt, HamiltonianKind::Amplification));
    Mat single(2, 2);
    single << 0, 1, 1, 0.4;
    const Mat expected = oracle::kron(oracle::eye(2), single) + oracle::kron(single, oracle::eye(2));
    CHECK((h - expected).norm() < 1e-14);
  }
}

TEST_CASE("phonon Hamiltonian") {
  PhononParams ph;
  ph.nu = 8.0;
  ph.kappa = 1.5;
  ph.cutoff = 2;
  for (int n = 2; n <= 3; ++n) {
    HilbertSpace s(n, AtomLevels::GR, 2);
    const auto op = build_hamiltonian(s, chain(n, 1.0, -20.0, 20.0), ph, HamiltonianKind::AmplificationPhonon);
    CHECK(op.is_hermitian());
    oracle::Chain c{n, 2, 3};
    const Mat expected = oracle::amplification(c, 1.0, -20.0, 20.0) + oracle::phonon_terms(c, 8.0, 1.5);
    CHECK((dense(op) - expected).norm() < 1e-12);
  }
  HilbertSpace s(2, AtomLevels::GR, 2);
  CHECK_THROWS(build_hamiltonian(s, chain(2), std::nullopt, HamiltonianKind::AmplificationPhonon));
  ph.cutoff = 3;
  CHECK_THROWS(build_hamiltonian(s, chain(2), ph, HamiltonianKind::AmplificationPhonon));
}

TEST_CASE("effective Hamiltonians") {
  HilbertSpace s(2, AtomLevels::GER);
  auto p = chain(2);
  p.gamma_thz = 0.1;
  const auto heff = build_hamiltonian(s, p, std::nullopt, HamiltonianKind::EffectiveLocal);
  CHECK_FALSE(heff.is_hermitian());
  const auto ee = uniform_product_state(s, s.layout().basis_ket(Level::e));
  const cplx value = expectation(ee, heff);
  CHECK(std::abs(value - cplx(0.0, -0.1)) < 1e-14);

  // anti-Hermitian part is exactly -i Gamma/2 sum_j n_j^(e)
  oracle::Chain c{2, 3};
  const Mat anti = 0.5 * (dense(heff) - dense(heff).adjoint());
  const Mat ne = oracle::site_projector(c, 0, 1) + oracle::site_projector(c, 1, 1);
  CHECK((anti - cplx(0.0, -0.05) * ne).norm() < 1e-15);

  const auto hc = build_hamiltonian(s, p, std::nullopt, HamiltonianKind::EffectiveCollective);
  const Mat raise = c.on_site(0, oracle::ket_bra(3, 2, 1)) + c.on_site(1, oracle::ket_bra(3, 2, 1));
  const Mat anti_c = 0.5 * (dense(hc) - dense(hc).adjoint());
  CHECK((anti_c - cplx(0.0, -0.05) * raise.adjoint() * raise).norm() < 1e-15);

  HilbertSpace gr(2, AtomLevels::GR);
  CHECK_THROWS(build_hamiltonian(gr, p, std::nullopt, HamiltonianKind::EffectiveLocal));
  CHECK(build_hamiltonian(s, p, std::nullopt, HamiltonianKind::Zero).matrix().nonZeros() == 0);
  CHECK(build_hamiltonian(s, p, std::nullopt, HamiltonianKind::Zero).is_hermitian());
}

TEST_CASE("jump operators") {
  const int n = 4;
  HilbertSpace s(n, AtomLevels::GER);
  auto p = chain(n);
  p.gamma_thz = 0.3;
  p.gamma_deph = 2.0;
  const auto& lay = s.layout();
  const auto psi_s = uniform_product_state(s, lay.basis_ket(Level::e));

  SUBCASE("local absorption puts r at site k") {
    for (int k = 0; k < n; ++k) {
      const auto l = build_jump(s, p, JumpKind::thz_local(k));
      auto [norm, post] = norm_and_normalize(PureState(s, l.apply(psi_s.amplitudes())));
      CHECK(norm == doctest::Approx(std::sqrt(0.3)));
      std::vector<int> cfg(n, 1);
      cfg[k] = 2;
      CHECK(std::abs(post.amplitudes()(static_cast<Eigen::Index>(s.encode(cfg))) - 1.0) < 1e-14);
    }
  }
  SUBCASE("collective absorption makes the symmetric superposition") {
    const auto l = build_jump(s, p, JumpKind::thz_collective());
    auto [norm, post] = norm_and_normalize(PureState(s, l.apply(psi_s.amplitudes())));
    CHECK(norm == doctest::Approx(std::sqrt(0.3 * n)));
    for (int k = 0; k < n; ++k) {
      std::vector<int> cfg(n, 1);
      cfg[k] = 2;
      CHECK(std::abs(post.amplitudes()(static_cast<Eigen::Index>(s.encode(cfg))) - 0.5) < 1e-14);
    }
    Mat sum = Mat::Zero(static_cast<Eigen::Index>(s.dim()), static_cast<Eigen::Index>(s.dim()));
    for (int k = 0; k < n; ++k) sum += dense(build_jump(s, p, JumpKind::thz_local(k)));
    CHECK((dense(l) - sum).norm() == 0.0);
  }
  SUBCASE("dephasing annihilates states without r at site j") {
    const auto l = build_jump(s, p, JumpKind::dephasing(2));
    CHECK(l.apply(psi_s.amplitudes()).norm() == 0.0);
    HilbertSpace gr(2, AtomLevels::GR);
    CHECK_NOTHROW(build_jump(gr, p, JumpKind::dephasing(0)));
    CHECK_THROWS(build_jump(gr, p, JumpKind::thz_local(0)));
    CHECK_THROWS(build_jump(gr, p, JumpKind::thz_collective()));
  }
  SUBCASE("absorption rates") {
    const auto locals = local_thz_jumps(s, p);
    const std::vector<Operator> coll{build_jump(s, p, JumpKind::thz_collective())};
    CHECK(absorption_rate(psi_s, locals) == doctest::Approx(n * 0.3).epsilon(1e-14));
    CHECK(absorption_rate(psi_s, coll) == doctest::Approx(n * 0.3).epsilon(1e-14));
    // |Psi^c_er>: the collective channel is enhanced relative to the local sum
    auto post = norm_and_normalize(PureState(s, coll.front().apply(psi_s.amplitudes()))).second;
    CHECK(absorption_rate(post, coll) >= absorption_rate(post, locals));
  }
}

TEST_CASE("kappa from microscopic parameters") {
  PhononParams ph;
  ph.dv_dx = 0.0;
  CHECK(compute_kappa(ph) == 0.0);
  ph.mass = 2.0;
  ph.nu = 2.0;
  ph.dv_dx = 4.0;
  CHECK(compute_kappa(ph) == doctest::Approx(4.0 / std::sqrt(8.0)));
  const double k1 = compute_kappa(ph);
  ph.nu = 8.0;
  CHECK(compute_kappa(ph) == doctest::Approx(k1 / 2.0));
  ph.mass = 0.0;
  CHECK_THROWS_AS(compute_kappa(ph), ParameterError);
  ph.mass = 1.0;
  ph.nu = -1.0;
  CHECK_THROWS_AS(compute_kappa(ph), ParameterError);
}
