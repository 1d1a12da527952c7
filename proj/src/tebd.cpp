#include "avalanche/tebd.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace avalanche {

namespace {

constexpr double kTruncationFlagWeight = 1e-4;
constexpr double kCutoffPopulationWarn = 1e-3;

// M(p', p) = A(s1', s1) B(s2', s2) with p = s1 + d s2.
Mat two_site(const Mat& a, const Mat& b) {
  const int d = static_cast<int>(a.rows());
  Mat m(d * d, d * d);
  for (int i2 = 0; i2 < d; ++i2)
    for (int j2 = 0; j2 < d; ++j2) m.block(i2 * d, j2 * d, d, d) = b(i2, j2) * a;
  return m;
}

// sum_{l,s,s',r} conj(A(l,s,r)) O(s,s') A(l,s',r)
cplx contract_center(const SiteTensor& a, const Mat& op) {
  const int d = a.phys(), r = a.right();
  auto flat = a.right_grouped();
  cplx acc{0.0, 0.0};
  for (int k = 0; k < r; ++k) {
    auto slice = flat.middleCols(k * d, d);  // l x d
    Mat applied = slice * op.transpose();
    acc += (slice.conjugate().cwiseProduct(applied)).sum();
  }
  return acc;
}

std::vector<std::vector<double>> sweep_expectations(MatrixProductState psi, const std::vector<Mat>& ops) {
  std::vector<std::vector<double>> out(ops.size(), std::vector<double>(psi.n_sites()));
  psi.move_center(0);
  for (int j = 0; j < psi.n_sites(); ++j) {
    if (j > 0) psi.move_center(j);
    const auto& a = psi.tensor(j);
    const double norm2 = a.left_grouped().squaredNorm();
    for (std::size_t o = 0; o < ops.size(); ++o) out[o][j] = contract_center(a, ops[o]).real() / norm2;
  }
  return out;
}

struct Spectral {
  Mat vectors;
  Eigen::VectorXd values;
  Mat gate(double dt) const {
    Eigen::VectorXcd phases(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) phases(i) = std::polar(1.0, -values(i) * dt);
    return vectors * phases.asDiagonal() * vectors.adjoint();
  }
};

Spectral diagonalize(const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(0.5 * (h + h.adjoint()));
  return {solver.eigenvectors(), solver.eigenvalues()};
}

}  // namespace

SiteTensor::SiteTensor(int left, int phys, int right)
    : left_(left), phys_(phys), right_(right), data_(static_cast<std::size_t>(left) * phys * right) {
  if (left < 1 || phys < 1 || right < 1) throw DimensionError("SiteTensor: dimensions must be positive");
}

SiteTensor SiteTensor::from_left_grouped(const Mat& m, int phys) {
  if (m.rows() % phys != 0) throw DimensionError("SiteTensor: rows not divisible by phys");
  SiteTensor t(static_cast<int>(m.rows() / phys), phys, static_cast<int>(m.cols()));
  t.left_grouped() = m;
  return t;
}

SiteTensor SiteTensor::from_right_grouped(const Mat& m, int phys) {
  if (m.cols() % phys != 0) throw DimensionError("SiteTensor: cols not divisible by phys");
  SiteTensor t(static_cast<int>(m.rows()), phys, static_cast<int>(m.cols() / phys));
  t.right_grouped() = m;
  return t;
}

MatrixProductState::MatrixProductState(SiteLayout layout, std::vector<SiteTensor> tensors)
    : layout_(layout), tensors_(std::move(tensors)) {
  const int n = layout_.n_sites();
  if (static_cast<int>(tensors_.size()) != n) throw DimensionError("MPS: need one tensor per site");
  for (int j = 0; j < n; ++j) {
    if (tensors_[j].phys() != layout_.local_dim()) throw DimensionError("MPS: physical dimension mismatch");
    if (j > 0 && tensors_[j].left() != tensors_[j - 1].right()) throw DimensionError("MPS: bond dimension mismatch");
  }
  if (tensors_.front().left() != 1 || tensors_.back().right() != 1)
    throw DimensionError("MPS: boundary bonds must have dimension 1");
  center_ = n - 1;
  move_center(0);
}

std::vector<int> MatrixProductState::bond_dims() const {
  std::vector<int> dims;
  for (int j = 0; j + 1 < n_sites(); ++j) dims.push_back(tensors_[j].right());
  return dims;
}

int MatrixProductState::max_bond() const {
  int m = 1;
  for (int d : bond_dims()) m = std::max(m, d);
  return m;
}

double MatrixProductState::norm() const { return tensors_[center_].left_grouped().norm(); }

void MatrixProductState::move_center(int site) {
  if (site < 0 || site >= n_sites()) throw DimensionError("MPS::move_center: site out of range");
  const int d = layout_.local_dim();
  while (center_ < site) {
    auto& a = tensors_[center_];
    Mat m = a.left_grouped();
    Eigen::HouseholderQR<Mat> qr(m);
    const auto k = std::min(m.rows(), m.cols());
    Mat q = qr.householderQ() * Mat::Identity(m.rows(), k);
    Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    a = SiteTensor::from_left_grouped(q, d);
    auto& b = tensors_[center_ + 1];
    b = SiteTensor::from_right_grouped(r * b.right_grouped(), d);
    ++center_;
  }
  while (center_ > site) {
    auto& a = tensors_[center_];
    Mat m = a.right_grouped().adjoint();
    Eigen::HouseholderQR<Mat> qr(m);
    const auto k = std::min(m.rows(), m.cols());
    Mat q = qr.householderQ() * Mat::Identity(m.rows(), k);
    Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    a = SiteTensor::from_right_grouped(q.adjoint(), d);
    auto& b = tensors_[center_ - 1];
    b = SiteTensor::from_left_grouped(b.left_grouped() * r.adjoint(), d);
    --center_;
  }
}

double MatrixProductState::canonical_residual() const {
  double res = 0.0;
  for (int j = 0; j < center_; ++j) {
    auto m = tensors_[j].left_grouped();
    res = std::max(res, (m.adjoint() * m - Mat::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff());
  }
  for (int j = center_ + 1; j < n_sites(); ++j) {
    auto m = tensors_[j].right_grouped();
    res = std::max(res, (m * m.adjoint() - Mat::Identity(m.rows(), m.rows())).cwiseAbs().maxCoeff());
  }
  return res;
}

double MatrixProductState::apply_two_site(int bond, const Mat& gate, int chi_max, double svd_cutoff,
                                          bool center_right, bool* hit_chi_max) {
  if (bond < 0 || bond + 1 >= n_sites()) throw DimensionError("apply_two_site: bond out of range");
  const int d = layout_.local_dim();
  if (gate.rows() != d * d || gate.cols() != d * d) throw DimensionError("apply_two_site: gate has wrong size");
  if (center_ != bond && center_ != bond + 1) move_center(center_ < bond ? bond : bond + 1);

  auto& a = tensors_[bond];
  auto& b = tensors_[bond + 1];
  const int l = a.left(), r = b.right();
  // theta(l, s1 + d s2, r), stored with l fastest.
  Mat theta = a.left_grouped() * b.right_grouped();  // (l d) x (d r)
  Eigen::Map<Mat> slices(theta.data(), l, d * d * r);
  const Mat gate_t = gate.transpose();
  for (int k = 0; k < r; ++k) {
    auto block = slices.middleCols(static_cast<Eigen::Index>(k) * d * d, d * d);
    block = (block * gate_t).eval();
  }

  Eigen::BDCSVD<Mat> svd(theta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double total = s.squaredNorm();
  int keep = 0;
  const double floor = svd_cutoff * s(0);
  while (keep < s.size() && s(keep) > floor && s(keep) > 0.0) ++keep;
  if (keep > chi_max) {
    if (hit_chi_max) *hit_chi_max = true;
    keep = chi_max;
  }
  keep = std::max(keep, 1);
  const double kept = s.head(keep).squaredNorm();
  const double discarded = total > 0.0 ? std::max(0.0, (total - kept) / total) : 0.0;
  const Eigen::VectorXd sv = s.head(keep) * std::sqrt(total / kept);

  Mat u = svd.matrixU().leftCols(keep);
  Mat vh = svd.matrixV().leftCols(keep).adjoint();
  if (center_right) {
    a = SiteTensor::from_left_grouped(u, d);
    b = SiteTensor::from_right_grouped(sv.asDiagonal() * vh, d);
    center_ = bond + 1;
  } else {
    a = SiteTensor::from_left_grouped(u * sv.asDiagonal(), d);
    b = SiteTensor::from_right_grouped(vh, d);
    center_ = bond;
  }
  return discarded;
}

void MatrixProductState::apply_one_site(int site, const Mat& gate) {
  const int d = layout_.local_dim();
  if (gate.rows() != d || gate.cols() != d) throw DimensionError("apply_one_site: gate has wrong size");
  auto& a = tensors_.at(site);
  auto flat = a.right_grouped();
  for (int k = 0; k < a.right(); ++k) {
    auto block = flat.middleCols(static_cast<Eigen::Index>(k) * d, d);
    block = (block * gate.transpose()).eval();
  }
}

MatrixProductState mps_from_product(const SiteLayout& layout, std::span<const Vec> site_kets) {
  if (static_cast<int>(site_kets.size()) != layout.n_sites())
    throw DimensionError("mps_from_product: need one local ket per site");
  std::vector<SiteTensor> tensors;
  for (const auto& ket : site_kets) {
    if (ket.size() != layout.local_dim()) throw DimensionError("mps_from_product: local ket has wrong dimension");
    if (std::abs(ket.norm() - 1.0) > 1e-9) throw ParameterError("mps_from_product: local ket is not normalized");
    SiteTensor t(1, layout.local_dim(), 1);
    for (int s = 0; s < layout.local_dim(); ++s) t(0, s, 0) = ket(s);
    tensors.push_back(std::move(t));
  }
  return {layout, std::move(tensors)};
}

MatrixProductState mps_single_excitation(const SiteLayout& layout, std::span<const cplx> coeffs) {
  const int n = layout.n_sites();
  if (static_cast<int>(coeffs.size()) != n) throw DimensionError("mps_single_excitation: need one coefficient per site");
  const int d = layout.local_dim();
  const int g = layout.local_index(Level::g, 0);
  const int rr = layout.local_index(Level::r, 0);
  if (n == 1) {
    SiteTensor t(1, d, 1);
    t(0, rr, 0) = coeffs[0];
    return {layout, {t}};
  }
  // Bond state 0: no excitation placed yet; 1: excitation placed.
  std::vector<SiteTensor> tensors;
  for (int j = 0; j < n; ++j) {
    const int left = j == 0 ? 1 : 2;
    const int right = j == n - 1 ? 1 : 2;
    SiteTensor t(left, d, right);
    if (j == 0) {
      t(0, g, 0) = 1.0;
      t(0, rr, 1) = coeffs[j];
    } else if (j == n - 1) {
      t(0, rr, 0) = coeffs[j];
      t(1, g, 0) = 1.0;
    } else {
      t(0, g, 0) = 1.0;
      t(0, rr, 1) = coeffs[j];
      t(1, g, 1) = 1.0;
    }
    tensors.push_back(std::move(t));
  }
  return {layout, std::move(tensors)};
}

MatrixProductState mps_from_dense(const PureState& state, double svd_cutoff) {
  const auto& space = state.space();
  const int n = space.n_sites();
  const int d = space.local_dim();
  std::vector<SiteTensor> tensors;
  // rest: (left * d) x (remaining), with the current site index fastest after left.
  Mat rest = Eigen::Map<const Mat>(state.amplitudes().data(), d, static_cast<Eigen::Index>(space.dim() / d));
  int left = 1;
  for (int j = 0; j + 1 < n; ++j) {
    Eigen::BDCSVD<Mat> svd(rest, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    int keep = 0;
    while (keep < s.size() && s(keep) > svd_cutoff * s(0) && s(keep) > 0.0) ++keep;
    keep = std::max(keep, 1);
    tensors.push_back(SiteTensor::from_left_grouped(svd.matrixU().leftCols(keep), d));
    Mat carry = s.head(keep).asDiagonal() * svd.matrixV().leftCols(keep).adjoint();  // keep x remaining
    // Regroup (keep, s_{j+1} + d * rest) into (keep * d) x rest.
    const Eigen::Index remaining = carry.cols() / d;
    Mat next(keep * d, remaining);
    for (Eigen::Index c = 0; c < remaining; ++c)
      for (int s1 = 0; s1 < d; ++s1) next.block(static_cast<Eigen::Index>(s1) * keep, c, keep, 1) = carry.col(c * d + s1);
    rest = std::move(next);
    left = keep;
  }
  tensors.push_back(SiteTensor::from_left_grouped(rest, d));
  (void)left;
  return {space.layout(), std::move(tensors)};
}

PureState mps_to_dense(const MatrixProductState& psi, std::size_t dense_cap) {
  HilbertSpace space(psi.layout(), dense_cap);
  const int d = psi.layout().local_dim();
  Mat cur = psi.tensor(0).left_grouped();  // (d) x r
  for (int j = 1; j < psi.n_sites(); ++j) {
    Mat prod = cur * psi.tensor(j).right_grouped();  // D x (d r')
    const int r = psi.tensor(j).right();
    cur = Eigen::Map<Mat>(prod.data(), prod.rows() * d, r);
  }
  return {space, Vec(Eigen::Map<Vec>(cur.data(), cur.size()))};
}

cplx mps_local_expectation(const MatrixProductState& psi, int site, const Mat& local_op) {
  if (site < 0 || site >= psi.n_sites()) throw DimensionError("mps_local_expectation: site out of range");
  const int d = psi.layout().local_dim();
  if (local_op.rows() != d || local_op.cols() != d)
    throw DimensionError("mps_local_expectation: operator has wrong dimension");
  MatrixProductState copy = psi;
  copy.move_center(site);
  const auto& a = copy.tensor(site);
  return contract_center(a, local_op) / a.left_grouped().squaredNorm();
}

std::vector<double> mps_local_expectations(const MatrixProductState& psi, const Mat& local_op) {
  const int d = psi.layout().local_dim();
  if (local_op.rows() != d || local_op.cols() != d)
    throw DimensionError("mps_local_expectations: operator has wrong dimension");
  return sweep_expectations(psi, {local_op}).front();
}

void TruncationPolicy::validate() const {
  if (chi_max < 1) throw ParameterError("TruncationPolicy: chi_max must be >= 1");
  if (!(svd_cutoff > 0.0 && svd_cutoff < 1e-2)) throw ParameterError("TruncationPolicy: svd_cutoff must be in (0, 1e-2)");
  if (!(trotter_dt > 0.0)) throw ParameterError("TruncationPolicy: trotter_dt must be positive");
}

Mat onsite_hamiltonian(const SiteLayout& layout, const ModelParams& params,
                       const std::optional<PhononParams>& phonons) {
  Mat h = params.omega_gr * (local::transition(layout, Level::r, Level::g) + local::transition(layout, Level::g, Level::r)) +
          params.delta_gr * local::projector(layout, Level::r);
  if (layout.has_phonons()) {
    if (!phonons) throw ParameterError("onsite_hamiltonian: layout has phonons but no PhononParams");
    h += phonons->nu * local::number(layout);
  }
  return h;
}

Mat bond_hamiltonian(const SiteLayout& layout, const ModelParams& params, const std::optional<PhononParams>& phonons,
                     int bond) {
  const int n = layout.n_sites();
  if (bond < 0 || bond + 1 >= n) throw DimensionError("bond_hamiltonian: bond out of range");
  const Mat id = local::identity(layout);
  const Mat nr = local::projector(layout, Level::r);
  const Mat onsite = onsite_hamiltonian(layout, params, phonons);
  const double w_left = bond == 0 ? 1.0 : 0.5;
  const double w_right = bond + 1 == n - 1 ? 1.0 : 0.5;
  Mat h = params.v_rr * two_site(nr, nr) + w_left * two_site(onsite, id) + w_right * two_site(id, onsite);
  if (layout.has_phonons() && phonons->kappa != 0.0) {
    const Mat nx = nr * local::displacement(layout);
    h += phonons->kappa * (two_site(nx, nr) - two_site(nr, nx));
  }
  return h;
}

TebdResult tebd_evolve(MatrixProductState psi, const ModelParams& params, const std::optional<PhononParams>& phonons,
                       const TruncationPolicy& policy, std::span<const double> output_grid) {
  params.validate();
  policy.validate();
  const auto& layout = psi.layout();
  if (layout.levels() != AtomLevels::GR) throw DimensionError("tebd_evolve: TEBD runs on two-level (GR) atoms");
  if (layout.n_sites() != params.n_sites) throw DimensionError("tebd_evolve: n_sites differs from layout");
  if (layout.has_phonons()) {
    if (!phonons) throw ParameterError("tebd_evolve: phonon parameters missing");
    phonons->validate();
    if (phonons->cutoff != layout.phonon_cutoff()) throw DimensionError("tebd_evolve: phonon cutoff mismatch");
  }
  if (output_grid.empty() || output_grid.front() != 0.0) throw ParameterError("tebd_evolve: output grid must start at 0");
  for (std::size_t i = 1; i < output_grid.size(); ++i)
    if (!(output_grid[i] > output_grid[i - 1])) throw ParameterError("tebd_evolve: output grid must increase");

  const int n = layout.n_sites();
  const std::optional<PhononParams> ph = layout.has_phonons() ? phonons : std::nullopt;

  std::vector<Spectral> spectra;
  for (int b = 0; b + 1 < n; ++b) spectra.push_back(diagonalize(bond_hamiltonian(layout, params, ph, b)));
  const Spectral onsite = diagonalize(onsite_hamiltonian(layout, params, ph));

  std::vector<int> odd_bonds, even_bonds;
  for (int b = 0; b + 1 < n; ++b) (b % 2 == 0 ? odd_bonds : even_bonds).push_back(b);

  std::map<double, std::vector<Mat>> gate_cache;
  auto gates_for = [&](double dt) -> const std::vector<Mat>& {
    auto it = gate_cache.find(dt);
    if (it != gate_cache.end()) return it->second;
    std::vector<Mat> g;
    for (const auto& sp : spectra) g.push_back(sp.gate(dt));
    return gate_cache.emplace(dt, std::move(g)).first->second;
  };

  TebdResult result;
  auto apply_layer = [&](const std::vector<int>& bonds, double dt) {
    if (bonds.empty()) return;
    const auto& gates = gates_for(dt);
    const bool ascending = psi.center() <= bonds.front() + 1 ||
                           std::abs(psi.center() - bonds.front()) <= std::abs(psi.center() - bonds.back());
    if (ascending) {
      for (int b : bonds) {
        bool hit = false;
        result.discarded_weight += psi.apply_two_site(b, gates[b], policy.chi_max, policy.svd_cutoff, true, &hit);
        result.chi_saturated |= hit;
      }
    } else {
      for (auto it = bonds.rbegin(); it != bonds.rend(); ++it) {
        bool hit = false;
        result.discarded_weight += psi.apply_two_site(*it, gates[*it], policy.chi_max, policy.svd_cutoff, false, &hit);
        result.chi_saturated |= hit;
      }
    }
  };

  std::vector<Mat> ops{local::projector(layout, Level::r)};
  Mat top_level = Mat::Zero(layout.local_dim(), layout.local_dim());
  if (layout.has_phonons()) {
    ops.push_back(local::number(layout));
    for (int a = 0; a < layout.atom_dim(); ++a) {
      const int idx = layout.local_index(a, layout.phonon_cutoff());
      top_level(idx, idx) = 1.0;
    }
    ops.push_back(top_level);
  }
  auto record = [&](double t) {
    auto values = sweep_expectations(psi, ops);
    result.times.push_back(t);
    result.s_site.push_back(values[0]);
    if (layout.has_phonons()) {
      result.max_phonon_occupation.push_back(*std::max_element(values[1].begin(), values[1].end()));
      result.max_cutoff_population =
          std::max(result.max_cutoff_population, *std::max_element(values[2].begin(), values[2].end()));
    } else {
      result.max_phonon_occupation.push_back(0.0);
    }
    result.max_bond = std::max(result.max_bond, psi.max_bond());
  };

  record(output_grid.front());
  for (std::size_t k = 1; k < output_grid.size(); ++k) {
    const double span = output_grid[k] - output_grid[k - 1];
    if (n == 1) {
      psi.apply_one_site(0, onsite.gate(span));
    } else {
      const int steps = std::max(1, static_cast<int>(std::ceil(span / policy.trotter_dt - 1e-9)));
      const double dt = span / steps;
      apply_layer(odd_bonds, 0.5 * dt);
      for (int s = 0; s < steps; ++s) {
        apply_layer(even_bonds, dt);
        apply_layer(odd_bonds, s + 1 < steps ? dt : 0.5 * dt);
      }
    }
    record(output_grid[k]);
  }

  result.truncation_flagged = result.chi_saturated && result.discarded_weight > kTruncationFlagWeight;
  if (result.truncation_flagged)
    result.warnings.push_back("chi_max saturated with discarded weight " + std::to_string(result.discarded_weight));
  if (result.max_cutoff_population > kCutoffPopulationWarn)
    result.warnings.push_back("phonon population at the Fock cutoff reached " +
                              std::to_string(result.max_cutoff_population));
  result.final_state = std::move(psi);
  return result;
}

}  // namespace avalanche
