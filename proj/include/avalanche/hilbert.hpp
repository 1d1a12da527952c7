#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace avalanche {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;
using SparseMat = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or index mismatch between containers, spaces and operators.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid physical or numerical parameter.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A numerically meaningful failure: impossible jump, integrator underflow,
/// trace drift, truncation quality.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class AtomLevels { GR, GER };

/// Atomic levels. Local indices follow g=0, e=1, r=2 with e dropped in GR mode.
enum class Level { g, e, r };

inline constexpr std::size_t kDefaultDenseCap = std::size_t{1} << 22;

/// Structure of the chain without any size restriction: the tensor-network
/// backend uses this for systems far beyond dense reach.
class SiteLayout {
 public:
  SiteLayout(int n_sites, AtomLevels levels, int phonon_cutoff = 0);

  int n_sites() const { return n_sites_; }
  AtomLevels levels() const { return levels_; }
  int phonon_cutoff() const { return phonon_cutoff_; }
  bool has_phonons() const { return phonon_cutoff_ > 0; }
  int atom_dim() const { return levels_ == AtomLevels::GR ? 2 : 3; }
  int phonon_dim() const { return phonon_cutoff_ + 1; }
  int local_dim() const { return atom_dim() * phonon_dim(); }

  /// Atom index of a level; throws for |e> in GR mode.
  int atom_index(Level level) const;
  /// Local index inside one site: atom varies fastest.
  int local_index(int atom, int phonon) const { return atom + atom_dim() * phonon; }
  int local_index(Level level, int phonon = 0) const {
    return local_index(atom_index(level), phonon);
  }

  /// Local ket with unit amplitude on (level, phonon).
  Vec basis_ket(Level level, int phonon = 0) const;

  bool operator==(const SiteLayout&) const = default;

 private:
  int n_sites_;
  AtomLevels levels_;
  int phonon_cutoff_;
};

/// Dense Hilbert space of an open chain. Basis indices are little-endian over
/// sites: index = sum_j local_j * local_dim^j.
class HilbertSpace {
 public:
  HilbertSpace(int n_sites, AtomLevels levels, int phonon_cutoff = 0,
               std::size_t dense_cap = kDefaultDenseCap);
  explicit HilbertSpace(const SiteLayout& layout, std::size_t dense_cap = kDefaultDenseCap);

  const SiteLayout& layout() const { return layout_; }
  int n_sites() const { return layout_.n_sites(); }
  AtomLevels levels() const { return layout_.levels(); }
  int phonon_cutoff() const { return layout_.phonon_cutoff(); }
  int atom_dim() const { return layout_.atom_dim(); }
  int local_dim() const { return layout_.local_dim(); }
  std::size_t dim() const { return dim_; }

  std::size_t encode(std::span<const int> local_config) const;
  std::vector<int> decode(std::size_t index) const;
  /// Local index of `site` within basis state `index`.
  int local_at(std::size_t index, int site) const {
    return static_cast<int>((index / strides_[site]) % static_cast<std::size_t>(local_dim()));
  }
  std::size_t stride(int site) const { return strides_[site]; }

  bool operator==(const HilbertSpace& other) const { return layout_ == other.layout_; }

 private:
  SiteLayout layout_;
  std::size_t dim_;
  std::vector<std::size_t> strides_;
};

class PureState {
 public:
  PureState(HilbertSpace space, Vec amplitudes);

  const HilbertSpace& space() const { return space_; }
  const Vec& amplitudes() const { return amplitudes_; }
  double norm() const { return amplitudes_.norm(); }

 private:
  HilbertSpace space_;
  Vec amplitudes_;
};

class DensityMatrix {
 public:
  DensityMatrix(HilbertSpace space, Mat matrix);
  static DensityMatrix from_pure(const PureState& psi);
  static DensityMatrix maximally_mixed(const HilbertSpace& space);

  const HilbertSpace& space() const { return space_; }
  const Mat& matrix() const { return matrix_; }
  cplx trace() const { return matrix_.trace(); }
  double hermiticity_residual() const;
  double min_eigenvalue() const;

 private:
  HilbertSpace space_;
  Mat matrix_;
};

/// Immutable sparse operator bound to a Hilbert space.
class Operator {
 public:
  Operator(HilbertSpace space, SparseMat matrix);
  static Operator zero(const HilbertSpace& space);
  static Operator identity(const HilbertSpace& space);

  const HilbertSpace& space() const { return space_; }
  const SparseMat& matrix() const { return matrix_; }
  bool is_hermitian() const { return hermitian_; }
  /// max |A - A^dagger| over entries.
  double hermiticity_residual() const;

  Vec apply(const Vec& v) const;
  Operator adjoint() const;

  Operator operator+(const Operator& other) const;
  Operator operator-(const Operator& other) const;
  Operator operator*(const Operator& other) const;
  Operator operator*(cplx scale) const;

 private:
  HilbertSpace space_;
  SparseMat matrix_;
  bool hermitian_;
};

inline Operator operator*(cplx scale, const Operator& op) { return op * scale; }

PureState product_state(const HilbertSpace& space, std::span<const Vec> site_kets);
/// Same local ket on every site.
PureState uniform_product_state(const HilbertSpace& space, const Vec& site_ket);

Operator embed_site_operator(const HilbertSpace& space, int site, const Mat& local_op);

cplx expectation(const PureState& state, const Operator& op);
cplx expectation(const DensityMatrix& rho, const Operator& op);
/// Real expectation of a Hermitian operator; rejects non-Hermitian input.
double expectation_real(const PureState& state, const Operator& op);
double expectation_real(const DensityMatrix& rho, const Operator& op);

std::pair<double, PureState> norm_and_normalize(const PureState& state);

double fidelity(const PureState& a, const PureState& b);

namespace local {
// Single-site operators on the full local space (atom (x) oscillator).
Mat identity(const SiteLayout& layout);
/// |to><from| on the atom, identity on the oscillator.
Mat transition(const SiteLayout& layout, Level to, Level from);
Mat projector(const SiteLayout& layout, Level level);
/// Oscillator lowering operator a, identity on the atom.
Mat annihilation(const SiteLayout& layout);
Mat number(const SiteLayout& layout);
/// x = a + a^dagger.
Mat displacement(const SiteLayout& layout);
}  // namespace local

}  // namespace avalanche
