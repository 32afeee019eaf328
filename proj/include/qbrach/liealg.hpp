#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qbrach {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;

/// Orthonormal basis of the traceless Hermitian operators on an
/// n-dimensional Hilbert space: Tr(C_a C_b) = delta_ab, Tr(C_a) = 0.
struct OperatorBasis {
  int dim = 0;                    ///< Hilbert-space dimension n
  std::vector<Matrix> elements;   ///< n^2 - 1 matrices
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(elements.size()); }
};

/// Normalized non-identity Pauli strings on `num_qubits` qubits, in
/// lexicographic order over {I,X,Y,Z} with the all-identity string removed.
/// Each string is divided by sqrt(2^k) so that Tr(C^2) = 1.
OperatorBasis build_pauli_basis(int num_qubits);

/// Decomposition of the traceless Hermitian space into an allowed
/// (controllable) subspace A and its orthogonal complement B, with the
/// structure constants of the reordered basis precomputed:
///   [C_a, C_b] = i sum_c f_abc C_c,  f real and antisymmetric.
///
/// The split's own basis lists the d_A allowed elements first, then the
/// d_B forbidden ones, so the projectors act by masking coefficients.
class SubspaceSplit {
 public:
  /// Orthonormalizes `allowed` (coefficient vectors over `basis`) by
  /// Gram-Schmidt and completes the forbidden complement from the
  /// remaining basis directions. Throws std::invalid_argument naming the
  /// offending index if the allowed vectors are linearly dependent.
  static SubspaceSplit build(const OperatorBasis& basis,
                             const std::vector<Vector>& allowed);

  /// Named split: "two_qubit_heisenberg" is the six local Paulis plus the
  /// normalized Heisenberg direction (XX+YY+ZZ)/(2 sqrt 3), d_A = 7.
  static SubspaceSplit preset(const std::string& name);

  int hilbert_dim() const { return basis_.dim; }
  int dim() const { return basis_.size(); }
  int dim_allowed() const { return d_allowed_; }
  int dim_forbidden() const { return basis_.size() - d_allowed_; }
  const OperatorBasis& basis() const { return basis_; }

  /// f_{abc}; indices over the reordered basis.
  double structure(int a, int b, int c) const {
    return f_[(a * basis_.size() + b) * basis_.size() + c];
  }

  Vector project_allowed(const Vector& x) const;    // P_A
  Vector project_forbidden(const Vector& x) const;  // P_B

  /// G_q scales forbidden coefficients by q; F_q = G_q^{-1} by 1/q.
  Vector apply_Gq(const Vector& x, double q) const;
  Vector apply_Fq(const Vector& x, double q) const;

  /// <X,Y>_q = sum_j a_j a'_j + q sum_k b_k b'_k.
  double q_inner(const Vector& x, const Vector& y, double q) const;

  /// Coefficients of -i[X, Y]: w_c = sum_ab f_abc x_a y_b.
  Vector commutator_coeffs(const Vector& x, const Vector& y) const;

  Matrix to_matrix(const Vector& coeffs) const;
  Vector to_coeffs(const Matrix& H) const;

 private:
  OperatorBasis basis_;    // reordered: allowed block first
  int d_allowed_ = 0;
  std::vector<double> f_;  // flattened dim^3 structure table
};

/// One branch of -i log(alpha U_tg): a constant Hamiltonian reaching the
/// target (up to global phase alpha) at T = 1.
struct BranchSeed {
  Vector coeffs;           ///< H-bar over the split basis
  double hs_norm = 0.0;
  Complex phase_sector;    ///< alpha with alpha^n = 1
  int sector_index = 0;    ///< s in alpha = exp(2 pi i s / n)
  std::vector<int> shifts; ///< 2-pi winding per eigenvalue
  int index = 0;           ///< 1-based position after sorting (the paper's m)
};

/// Enumerates matrix-log branches of U_tg over all global-phase sectors
/// alpha^n = 1 and eigenphase shift vectors |m_i| <= max_shift, keeping
/// branches with HS norm <= max_norm. Sorted by norm ascending, ties by
/// sector index then lexicographic shift vector. U_tg must satisfy
/// |det(U_tg) - 1| < 1e-10.
std::vector<BranchSeed> log_branches(const Matrix& U_tg,
                                     const SubspaceSplit& split,
                                     double max_norm, int max_shift = 2);

/// Divides U by the principal n-th root of det(U); returns the SU(n)
/// representative and the extracted phase (arg taken in [-pi, pi)).
std::pair<Matrix, double> to_special_unitary(const Matrix& U);

/// exp(-iH) of a Hermitian matrix via eigendecomposition.
Matrix expi_hermitian(const Matrix& H);

/// Principal Hermitian logarithm: V = exp(iR) with eigenphases of V in
/// (-pi, pi]. Eigenvector blocks of degenerate clusters are orthonormalized
/// deterministically. `max_phase`, when given, receives max_i |theta_i|.
Matrix principal_log_hermitian(const Matrix& V, double* max_phase = nullptr);

/// Max-entry deviation of U from unitarity, max |(U^dag U - I)_ij|.
double unitarity_defect(const Matrix& U);

}  // namespace qbrach
