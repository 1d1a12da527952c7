#pragma once

#include <optional>
#include <string>
#include <span>
#include <vector>

#include "avalanche/hilbert.hpp"
#include "avalanche/model.hpp"

namespace avalanche {

/// Rank-3 site tensor T(l, s, r) stored column-major with l fastest, so the
/// same buffer reads as a (left*phys x right) or a (left x phys*right) matrix.
class SiteTensor {
 public:
  SiteTensor() = default;
  SiteTensor(int left, int phys, int right);

  int left() const { return left_; }
  int phys() const { return phys_; }
  int right() const { return right_; }

  cplx& operator()(int l, int s, int r) { return data_[l + left_ * (s + phys_ * r)]; }
  cplx operator()(int l, int s, int r) const { return data_[l + left_ * (s + phys_ * r)]; }

  Eigen::Map<Mat> left_grouped() { return {data_.data(), left_ * phys_, right_}; }
  Eigen::Map<const Mat> left_grouped() const { return {data_.data(), left_ * phys_, right_}; }
  Eigen::Map<Mat> right_grouped() { return {data_.data(), left_, phys_ * right_}; }
  Eigen::Map<const Mat> right_grouped() const { return {data_.data(), left_, phys_ * right_}; }

  static SiteTensor from_left_grouped(const Mat& m, int phys);
  static SiteTensor from_right_grouped(const Mat& m, int phys);

 private:
  int left_ = 0, phys_ = 0, right_ = 0;
  std::vector<cplx> data_;
};

/// Open-boundary MPS in mixed canonical form around `center()`.
class MatrixProductState {
 public:
  /// Takes arbitrary tensors and brings them into canonical form.
  MatrixProductState(SiteLayout layout, std::vector<SiteTensor> tensors);

  const SiteLayout& layout() const { return layout_; }
  int n_sites() const { return layout_.n_sites(); }
  int center() const { return center_; }
  const SiteTensor& tensor(int site) const { return tensors_.at(site); }
  std::vector<int> bond_dims() const;
  int max_bond() const;
  double norm() const;

  /// Moves the orthogonality center by QR sweeps.
  void move_center(int site);
  /// Largest deviation from the isometry conditions of the canonical form.
  double canonical_residual() const;

  /// Two-site update on bond (b, b+1): theta' = gate * theta, truncated SVD.
  /// `gate` acts on the pair index s_b + d s_{b+1}. Returns discarded weight.
  double apply_two_site(int bond, const Mat& gate, int chi_max, double svd_cutoff, bool center_right,
                        bool* hit_chi_max = nullptr);
  void apply_one_site(int site, const Mat& gate);

 private:
  SiteLayout layout_;
  std::vector<SiteTensor> tensors_;
  int center_ = 0;
};

MatrixProductState mps_from_product(const SiteLayout& layout, std::span<const Vec> site_kets);
/// sum_k coeffs[k] |g..g r_k g..g> with every oscillator in vacuum; bond dim 2.
MatrixProductState mps_single_excitation(const SiteLayout& layout, std::span<const cplx> coeffs);
/// Exact (cutoff 0) or truncated decomposition of a dense state.
MatrixProductState mps_from_dense(const PureState& state, double svd_cutoff = 0.0);
PureState mps_to_dense(const MatrixProductState& psi, std::size_t dense_cap = kDefaultDenseCap);

cplx mps_local_expectation(const MatrixProductState& psi, int site, const Mat& local_op);
/// <op_j> for every site j in one sweep.
std::vector<double> mps_local_expectations(const MatrixProductState& psi, const Mat& local_op);

struct TruncationPolicy {
  int chi_max = 64;
  double svd_cutoff = 1e-10;
  double trotter_dt = 1e-3;

  void validate() const;
};

struct TebdResult {
  std::vector<double> times;
  /// s_site[t][j] = <n_j^(r)>(t).
  std::vector<std::vector<double>> s_site;
  /// Max over sites of <a^dagger a> at each output time (zero without phonons).
  std::vector<double> max_phonon_occupation;
  /// Highest-Fock-level population seen on any site.
  double max_cutoff_population = 0.0;
  double discarded_weight = 0.0;
  int max_bond = 1;
  bool chi_saturated = false;
  /// chi_max saturated and discarded weight above 1e-4.
  bool truncation_flagged = false;
  std::vector<std::string> warnings;
  std::optional<MatrixProductState> final_state;
};

/// Two-site Hamiltonian on bond (b, b+1) as used by the Trotter gates:
/// pair terms plus on-site terms weighted 1/2 on interior sites and 1 on the
/// chain ends. Acts on the pair index s_b + d s_{b+1}.
Mat bond_hamiltonian(const SiteLayout& layout, const ModelParams& params,
                     const std::optional<PhononParams>& phonons, int bond);
Mat onsite_hamiltonian(const SiteLayout& layout, const ModelParams& params,
                       const std::optional<PhononParams>& phonons);

/// Second-order Trotter TEBD of the amplification Hamiltonian (with phonons
/// when given) on the output grid.
TebdResult tebd_evolve(MatrixProductState psi, const ModelParams& params, const std::optional<PhononParams>& phonons,
                       const TruncationPolicy& policy, std::span<const double> output_grid);

}  // namespace avalanche
