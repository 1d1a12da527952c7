#include "avalanche/hilbert.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace avalanche {

namespace {

constexpr double kHermitianTol = 1e-12;
constexpr double kNormTol = 1e-9;

double max_abs_entry(const SparseMat& m) {
  double out = 0.0;
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMat::InnerIterator it(m, k); it; ++it) out = std::max(out, std::abs(it.value()));
  return out;
}

void require_same_space(const HilbertSpace& a, const HilbertSpace& b, const char* what) {
  if (!(a == b)) throw DimensionError(std::string(what) + ": Hilbert space mismatch");
}

}  // namespace

SiteLayout::SiteLayout(int n_sites, AtomLevels levels, int phonon_cutoff)
    : n_sites_(n_sites), levels_(levels), phonon_cutoff_(phonon_cutoff) {
  if (n_sites < 1) throw ParameterError("SiteLayout: n_sites must be positive");
  if (phonon_cutoff < 0) throw ParameterError("SiteLayout: phonon cutoff must be non-negative");
}

int SiteLayout::atom_index(Level level) const {
  switch (level) {
    case Level::g: return 0;
    case Level::e:
      if (levels_ == AtomLevels::GR) throw DimensionError("level |e> does not exist in GR mode");
      return 1;
    case Level::r: return levels_ == AtomLevels::GR ? 1 : 2;
  }
  throw ParameterError("unknown level");
}

Vec SiteLayout::basis_ket(Level level, int phonon) const {
  if (phonon < 0 || phonon > phonon_cutoff_) throw DimensionError("phonon index out of range");
  Vec ket = Vec::Zero(local_dim());
  ket(local_index(level, phonon)) = 1.0;
  return ket;
}

HilbertSpace::HilbertSpace(int n_sites, AtomLevels levels, int phonon_cutoff, std::size_t dense_cap)
    : HilbertSpace(SiteLayout(n_sites, levels, phonon_cutoff), dense_cap) {}

HilbertSpace::HilbertSpace(const SiteLayout& layout, std::size_t dense_cap) : layout_(layout), dim_(1) {
  const auto d = static_cast<std::size_t>(layout.local_dim());
  strides_.reserve(layout.n_sites());
  for (int j = 0; j < layout.n_sites(); ++j) {
    strides_.push_back(dim_);
    if (dim_ > dense_cap / d)
      throw DimensionError("HilbertSpace: dimension " + std::to_string(d) + "^" +
                           std::to_string(layout.n_sites()) + " exceeds the dense cap of " +
                           std::to_string(dense_cap) + " amplitudes");
    dim_ *= d;
  }
}

std::size_t HilbertSpace::encode(std::span<const int> local_config) const {
  if (static_cast<int>(local_config.size()) != n_sites())
    throw DimensionError("encode: configuration length differs from n_sites");
  std::size_t index = 0;
  for (int j = 0; j < n_sites(); ++j) {
    if (local_config[j] < 0 || local_config[j] >= local_dim())
      throw DimensionError("encode: local index out of range");
    index += static_cast<std::size_t>(local_config[j]) * strides_[j];
  }
  return index;
}

std::vector<int> HilbertSpace::decode(std::size_t index) const {
  if (index >= dim_) throw DimensionError("decode: index out of range");
  std::vector<int> config(n_sites());
  for (int j = 0; j < n_sites(); ++j) config[j] = local_at(index, j);
  return config;
}

PureState::PureState(HilbertSpace space, Vec amplitudes)
    : space_(std::move(space)), amplitudes_(std::move(amplitudes)) {
  if (static_cast<std::size_t>(amplitudes_.size()) != space_.dim())
    throw DimensionError("PureState: amplitude vector length differs from space dimension");
  if (!amplitudes_.allFinite()) throw NumericalError("PureState: non-finite amplitude");
}

DensityMatrix::DensityMatrix(HilbertSpace space, Mat matrix)
    : space_(std::move(space)), matrix_(std::move(matrix)) {
  const auto d = static_cast<Eigen::Index>(space_.dim());
  if (matrix_.rows() != d || matrix_.cols() != d)
    throw DimensionError("DensityMatrix: matrix shape differs from space dimension");
  if (!matrix_.allFinite()) throw NumericalError("DensityMatrix: non-finite entry");
}

DensityMatrix DensityMatrix::from_pure(const PureState& psi) {
  return {psi.space(), psi.amplitudes() * psi.amplitudes().adjoint()};
}

DensityMatrix DensityMatrix::maximally_mixed(const HilbertSpace& space) {
  const auto d = static_cast<Eigen::Index>(space.dim());
  return {space, Mat::Identity(d, d) / static_cast<double>(d)};
}

double DensityMatrix::hermiticity_residual() const {
  return (matrix_ - matrix_.adjoint()).cwiseAbs().maxCoeff();
}

double DensityMatrix::min_eigenvalue() const {
  Mat herm = 0.5 * (matrix_ + matrix_.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> solver(herm, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

Operator::Operator(HilbertSpace space, SparseMat matrix) : space_(std::move(space)), matrix_(std::move(matrix)) {
  const auto d = static_cast<Eigen::Index>(space_.dim());
  if (matrix_.rows() != d || matrix_.cols() != d)
    throw DimensionError("Operator: matrix shape differs from space dimension");
  matrix_.prune(cplx{0.0, 0.0});
  matrix_.makeCompressed();
  hermitian_ = hermiticity_residual() <= kHermitianTol;
}

Operator Operator::zero(const HilbertSpace& space) {
  const auto d = static_cast<Eigen::Index>(space.dim());
  return {space, SparseMat(d, d)};
}

Operator Operator::identity(const HilbertSpace& space) {
  const auto d = static_cast<Eigen::Index>(space.dim());
  SparseMat id(d, d);
  id.setIdentity();
  return {space, std::move(id)};
}

double Operator::hermiticity_residual() const {
  SparseMat diff = matrix_ - SparseMat(matrix_.adjoint());
  return max_abs_entry(diff);
}

Vec Operator::apply(const Vec& v) const {
  if (static_cast<std::size_t>(v.size()) != space_.dim()) throw DimensionError("Operator::apply: length mismatch");
  return matrix_ * v;
}

Operator Operator::adjoint() const { return {space_, SparseMat(matrix_.adjoint())}; }

Operator Operator::operator+(const Operator& other) const {
  require_same_space(space_, other.space_, "Operator::+");
  return {space_, SparseMat(matrix_ + other.matrix_)};
}

Operator Operator::operator-(const Operator& other) const {
  require_same_space(space_, other.space_, "Operator::-");
  return {space_, SparseMat(matrix_ - other.matrix_)};
}

Operator Operator::operator*(const Operator& other) const {
  require_same_space(space_, other.space_, "Operator::*");
  return {space_, SparseMat(matrix_ * other.matrix_)};
}

Operator Operator::operator*(cplx scale) const { return {space_, SparseMat(matrix_ * scale)}; }

PureState product_state(const HilbertSpace& space, std::span<const Vec> site_kets) {
  if (static_cast<int>(site_kets.size()) != space.n_sites())
    throw DimensionError("product_state: need one local ket per site");
  for (const auto& ket : site_kets) {
    if (ket.size() != space.local_dim()) throw DimensionError("product_state: local ket has wrong dimension");
    if (std::abs(ket.norm() - 1.0) > kNormTol) throw ParameterError("product_state: local ket is not normalized");
  }
  // Kronecker build, site 0 varies fastest.
  Vec amps = site_kets[0];
  for (int j = 1; j < space.n_sites(); ++j) {
    const Vec& ket = site_kets[j];
    Vec next(amps.size() * ket.size());
    for (Eigen::Index s = 0; s < ket.size(); ++s) next.segment(s * amps.size(), amps.size()) = ket(s) * amps;
    amps = std::move(next);
  }
  return {space, std::move(amps)};
}

PureState uniform_product_state(const HilbertSpace& space, const Vec& site_ket) {
  std::vector<Vec> kets(space.n_sites(), site_ket);
  return product_state(space, kets);
}

Operator embed_site_operator(const HilbertSpace& space, int site, const Mat& local_op) {
  if (site < 0 || site >= space.n_sites()) throw DimensionError("embed_site_operator: site out of range");
  const int d = space.local_dim();
  if (local_op.rows() != d || local_op.cols() != d)
    throw DimensionError("embed_site_operator: local operator has wrong dimension");

  // Column lists of local nonzeros.
  std::vector<std::vector<std::pair<int, cplx>>> cols(d);
  for (int to = 0; to < d; ++to)
    for (int from = 0; from < d; ++from)
      if (local_op(to, from) != cplx{0.0, 0.0}) cols[from].emplace_back(to, local_op(to, from));

  const auto dim = space.dim();
  const auto stride = static_cast<long long>(space.stride(site));
  std::vector<Eigen::Triplet<cplx>> triplets;
  for (std::size_t i = 0; i < dim; ++i) {
    const int s = space.local_at(i, site);
    for (const auto& [to, value] : cols[s]) {
      const auto j = static_cast<long long>(i) + (to - s) * stride;
      triplets.emplace_back(static_cast<int>(j), static_cast<int>(i), value);
    }
  }
  SparseMat m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return {space, std::move(m)};
}

cplx expectation(const PureState& state, const Operator& op) {
  require_same_space(state.space(), op.space(), "expectation");
  return state.amplitudes().dot(op.matrix() * state.amplitudes());
}

cplx expectation(const DensityMatrix& rho, const Operator& op) {
  require_same_space(rho.space(), op.space(), "expectation");
  // Tr(rho A) = sum_{ij} rho_ji A_ij
  cplx acc{0.0, 0.0};
  const auto& a = op.matrix();
  for (int i = 0; i < a.outerSize(); ++i)
    for (SparseMat::InnerIterator it(a, i); it; ++it) acc += rho.matrix()(it.col(), i) * it.value();
  return acc;
}

double expectation_real(const PureState& state, const Operator& op) {
  if (!op.is_hermitian()) throw ParameterError("expectation_real: operator is not Hermitian");
  return expectation(state, op).real();
}

double expectation_real(const DensityMatrix& rho, const Operator& op) {
  if (!op.is_hermitian()) throw ParameterError("expectation_real: operator is not Hermitian");
  return expectation(rho, op).real();
}

std::pair<double, PureState> norm_and_normalize(const PureState& state) {
  const double n = state.norm();
  if (!(n > std::numeric_limits<double>::min()))
    throw NumericalError("norm_and_normalize: zero-norm state (impossible jump)");
  return {n, PureState(state.space(), state.amplitudes() / n)};
}

double fidelity(const PureState& a, const PureState& b) {
  require_same_space(a.space(), b.space(), "fidelity");
  return std::norm(a.amplitudes().dot(b.amplitudes()));
}

namespace local {

Mat identity(const SiteLayout& layout) { return Mat::Identity(layout.local_dim(), layout.local_dim()); }

Mat transition(const SiteLayout& layout, Level to, Level from) {
  Mat m = Mat::Zero(layout.local_dim(), layout.local_dim());
  const int a_to = layout.atom_index(to);
  const int a_from = layout.atom_index(from);
  for (int p = 0; p < layout.phonon_dim(); ++p) m(layout.local_index(a_to, p), layout.local_index(a_from, p)) = 1.0;
  return m;
}

Mat projector(const SiteLayout& layout, Level level) { return transition(layout, level, level); }

Mat annihilation(const SiteLayout& layout) {
  Mat m = Mat::Zero(layout.local_dim(), layout.local_dim());
  for (int a = 0; a < layout.atom_dim(); ++a)
    for (int p = 1; p < layout.phonon_dim(); ++p)
      m(layout.local_index(a, p - 1), layout.local_index(a, p)) = std::sqrt(static_cast<double>(p));
  return m;
}

Mat number(const SiteLayout& layout) {
  Mat a = annihilation(layout);
  return a.adjoint() * a;
}

Mat displacement(const SiteLayout& layout) {
  Mat a = annihilation(layout);
  return a + a.adjoint();
}

}  // namespace local

}  // namespace avalanche
