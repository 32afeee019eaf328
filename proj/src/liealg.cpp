#include "qbrach/liealg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qbrach {

namespace {

constexpr double kPi = std::numbers::pi;

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

const Matrix& pauli(int which) {
  static const std::array<Matrix, 4> table = [] {
    std::array<Matrix, 4> p;
    for (auto& m : p) m = Matrix::Zero(2, 2);
    p[0](0, 0) = 1; p[0](1, 1) = 1;                       // I
    p[1](0, 1) = 1; p[1](1, 0) = 1;                       // X
    p[2](0, 1) = Complex(0, -1); p[2](1, 0) = Complex(0, 1);  // Y
    p[3](0, 0) = 1; p[3](1, 1) = -1;                      // Z
    return p;
  }();
  return table[which];
}

// Wraps an angle to the principal interval (-pi, pi].
double principal_phase(Complex z) {
  double t = std::arg(z);
  if (t <= -kPi) t += 2 * kPi;
  return t;
}

struct EigenSystem {
  Matrix vectors;              // columns orthonormalized per cluster
  std::vector<double> phases;  // principal eigenphases, ascending
  std::vector<int> cluster_of; // cluster id per eigenvalue
  int num_clusters = 0;
};

// Eigentriple of a unitary matrix with deterministic handling of
// degenerate eigenvalues: phases sorted ascending, clusters of nearby
// eigenvalues orthonormalized by QR with positive diagonal.
EigenSystem unitary_eigensystem(const Matrix& U, double cluster_tol = 1e-9) {
  Eigen::ComplexEigenSolver<Matrix> es(U);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  const int n = static_cast<int>(U.rows());

  std::vector<int> order(n);
  std::vector<double> phases(n);
  for (int i = 0; i < n; ++i) {
    order[i] = i;
    phases[i] = principal_phase(es.eigenvalues()(i));
  }
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return phases[a] < phases[b]; });

  EigenSystem sys;
  sys.vectors = Matrix(n, n);
  sys.phases.resize(n);
  sys.cluster_of.resize(n);
  for (int i = 0; i < n; ++i) {
    sys.vectors.col(i) = es.eigenvectors().col(order[i]);
    sys.phases[i] = phases[order[i]];
  }

  // Cluster by eigenvalue distance (handles the +-pi wrap transparently).
  int cluster = -1;
  Complex prev(0, 0);
  for (int i = 0; i < n; ++i) {
    Complex val = std::polar(1.0, sys.phases[i]);
    if (cluster < 0 || std::abs(val - prev) > cluster_tol) ++cluster;
    sys.cluster_of[i] = cluster;
    prev = val;
  }
  // Wrap case: first and last clusters both hug -1.
  if (cluster > 0) {
    Complex lo = std::polar(1.0, sys.phases[0]);
    Complex hi = std::polar(1.0, sys.phases[n - 1]);
    if (std::abs(lo - hi) <= cluster_tol) {
      int last = sys.cluster_of[n - 1];
      for (int i = 0; i < n; ++i)
        if (sys.cluster_of[i] == last) sys.cluster_of[i] = 0;
    }
  }
  sys.num_clusters = 1 + *std::max_element(sys.cluster_of.begin(), sys.cluster_of.end());

  // Orthonormalize each cluster block: QR with positive diagonal.
  for (int c = 0; c < sys.num_clusters; ++c) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (sys.cluster_of[i] == c) members.push_back(i);
    if (members.size() < 2) continue;
    Matrix block(n, members.size());
    for (size_t k = 0; k < members.size(); ++k)
      block.col(k) = sys.vectors.col(members[k]);
    Eigen::HouseholderQR<Matrix> qr(block);
    Matrix q = qr.householderQ() * Matrix::Identity(n, members.size());
    Matrix r = q.adjoint() * block;
    for (size_t k = 0; k < members.size(); ++k) {
      Complex d = r(k, k);
      if (std::abs(d) > 0) q.col(k) *= d / std::abs(d);
    }
    for (size_t k = 0; k < members.size(); ++k)
      sys.vectors.col(members[k]) = q.col(k);
  }
  return sys;
}

}  // namespace

OperatorBasis build_pauli_basis(int num_qubits) {
  if (num_qubits < 1) throw std::invalid_argument("num_qubits must be >= 1");
  const int n = 1 << num_qubits;
  if (n > 16) throw std::invalid_argument("dimension cap exceeded (n <= 16)");

  static const char* names = "IXYZ";
  OperatorBasis basis;
  basis.dim = n;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  const int total = 1 << (2 * num_qubits);  // 4^k strings
  for (int code = 1; code < total; ++code) {
    Matrix m = Matrix::Identity(1, 1);
    std::string label;
    // Most significant base-4 digit = first tensor factor.
    for (int pos = num_qubits - 1; pos >= 0; --pos) {
      int digit = (code >> (2 * pos)) & 3;
      m = kron(m, pauli(digit));
      label += names[digit];
    }
    basis.elements.push_back(scale * m);
    basis.labels.push_back(label);
  }
  return basis;
}

SubspaceSplit SubspaceSplit::build(const OperatorBasis& basis,
                                   const std::vector<Vector>& allowed) {
  const int dim = basis.size();
  if (allowed.empty() || static_cast<int>(allowed.size()) > dim)
    throw std::invalid_argument("allowed subspace dimension out of range");

  // Gram-Schmidt over coefficient space (coefficients are HS coordinates).
  std::vector<Vector> ortho;
  for (size_t i = 0; i < allowed.size(); ++i) {
    Vector v = allowed[i];
    if (v.size() != dim) throw std::invalid_argument("allowed vector has wrong length");
    for (const Vector& u : ortho) v -= u.dot(v) * u;
    double norm = v.norm();
    if (norm < 1e-10)
      throw std::invalid_argument("allowed vectors linearly dependent at index " +
                                  std::to_string(i));
    ortho.push_back(v / norm);
  }
  const int d_a = static_cast<int>(ortho.size());

  // Complete the complement from canonical basis directions.
  std::vector<Vector> full = ortho;
  for (int i = 0; i < dim && static_cast<int>(full.size()) < dim; ++i) {
    Vector v = Vector::Unit(dim, i);
    for (const Vector& u : full) v -= u.dot(v) * u;
    double norm = v.norm();
    if (norm < 1e-10) continue;
    full.push_back(v / norm);
  }
  if (static_cast<int>(full.size()) != dim)
    throw std::runtime_error("failed to complete forbidden complement");

  SubspaceSplit split;
  split.d_allowed_ = d_a;
  split.basis_.dim = basis.dim;
  for (int i = 0; i < dim; ++i) {
    Matrix m = Matrix::Zero(basis.dim, basis.dim);
    for (int j = 0; j < dim; ++j)
      if (full[i](j) != 0.0) m += full[i](j) * basis.elements[j];
    split.basis_.elements.push_back(m);
    split.basis_.labels.push_back(i < d_a ? "A" + std::to_string(i + 1)
                                          : "B" + std::to_string(i - d_a + 1));
  }

  // Structure table: f_abc = Re Tr(-i [C_a, C_b] C_c).
  split.f_.assign(static_cast<size_t>(dim) * dim * dim, 0.0);
  for (int a = 0; a < dim; ++a) {
    for (int b = a + 1; b < dim; ++b) {
      const Matrix comm = split.basis_.elements[a] * split.basis_.elements[b] -
                          split.basis_.elements[b] * split.basis_.elements[a];
      for (int c = 0; c < dim; ++c) {
        double f = (Complex(0, -1) * (comm * split.basis_.elements[c]).trace()).real();
        if (std::abs(f) < 1e-14) f = 0.0;
        split.f_[(static_cast<size_t>(a) * dim + b) * dim + c] = f;
        split.f_[(static_cast<size_t>(b) * dim + a) * dim + c] = -f;
      }
    }
  }
  return split;
}

SubspaceSplit SubspaceSplit::preset(const std::string& name) {
  if (name == "two_qubit_heisenberg") {
    OperatorBasis basis = build_pauli_basis(2);
    auto index_of = [&](const std::string& label) {
      for (int i = 0; i < basis.size(); ++i)
        if (basis.labels[i] == label) return i;
      throw std::logic_error("missing basis label " + label);
    };
    std::vector<Vector> allowed;
    for (const char* label : {"XI", "YI", "ZI", "IX", "IY", "IZ"})
      allowed.push_back(Vector::Unit(basis.size(), index_of(label)));
    Vector heis = Vector::Zero(basis.size());
    heis(index_of("XX")) = 1;
    heis(index_of("YY")) = 1;
    heis(index_of("ZZ")) = 1;
    allowed.push_back(heis / std::sqrt(3.0));
    return build(basis, allowed);
  }
  throw std::invalid_argument("unknown subspace preset: " + name);
}

Vector SubspaceSplit::project_allowed(const Vector& x) const {
  Vector out = x;
  out.tail(dim_forbidden()).setZero();
  return out;
}

Vector SubspaceSplit::project_forbidden(const Vector& x) const {
  Vector out = x;
  out.head(d_allowed_).setZero();
  return out;
}

Vector SubspaceSplit::apply_Gq(const Vector& x, double q) const {
  if (q <= 0) throw std::invalid_argument("q must be positive");
  Vector out = x;
  out.tail(dim_forbidden()) *= q;
  return out;
}

Vector SubspaceSplit::apply_Fq(const Vector& x, double q) const {
  if (q <= 0) throw std::invalid_argument("q must be positive");
  Vector out = x;
  out.tail(dim_forbidden()) /= q;
  return out;
}

double SubspaceSplit::q_inner(const Vector& x, const Vector& y, double q) const {
  return x.head(d_allowed_).dot(y.head(d_allowed_)) +
         q * x.tail(dim_forbidden()).dot(y.tail(dim_forbidden()));
}

Vector SubspaceSplit::commutator_coeffs(const Vector& x, const Vector& y) const {
  const int n = dim();
  Vector out = Vector::Zero(n);
  for (int a = 0; a < n; ++a) {
    const double xa = x(a);
    if (xa == 0.0) continue;
    const double* row = f_.data() + static_cast<size_t>(a) * n * n;
    for (int b = 0; b < n; ++b) {
      const double w = xa * y(b);
      if (w == 0.0) continue;
      const double* fc = row + static_cast<size_t>(b) * n;
      for (int c = 0; c < n; ++c) out(c) += w * fc[c];
    }
  }
  return out;
}

Matrix SubspaceSplit::to_matrix(const Vector& coeffs) const {
  Matrix out = Matrix::Zero(basis_.dim, basis_.dim);
  for (int i = 0; i < dim(); ++i)
    if (coeffs(i) != 0.0) out += coeffs(i) * basis_.elements[i];
  return out;
}

Vector SubspaceSplit::to_coeffs(const Matrix& H) const {
  Vector out(dim());
  for (int i = 0; i < dim(); ++i)
    out(i) = (basis_.elements[i] * H).trace().real();
  return out;
}

std::pair<Matrix, double> to_special_unitary(const Matrix& U) {
  if (unitarity_defect(U) > 1e-10)
    throw std::invalid_argument("matrix is not unitary");
  const int n = static_cast<int>(U.rows());
  double theta = std::arg(U.determinant());
  if (theta > kPi - 1e-12) theta -= 2 * kPi;  // arg in [-pi, pi)
  const double phase = theta / n;
  return {U * std::polar(1.0, -phase), phase};
}

Matrix expi_hermitian(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  Matrix d = Matrix::Zero(H.rows(), H.cols());
  for (int i = 0; i < H.rows(); ++i)
    d(i, i) = std::polar(1.0, -es.eigenvalues()(i));
  return es.eigenvectors() * d * es.eigenvectors().adjoint();
}

Matrix principal_log_hermitian(const Matrix& V, double* max_phase) {
  EigenSystem sys = unitary_eigensystem(V);
  const int n = static_cast<int>(V.rows());
  double mp = 0;
  Matrix R = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    R += sys.phases[i] * (sys.vectors.col(i) * sys.vectors.col(i).adjoint());
    mp = std::max(mp, std::abs(sys.phases[i]));
  }
  if (max_phase) *max_phase = mp;
  return 0.5 * (R + R.adjoint().eval());
}

double unitarity_defect(const Matrix& U) {
  return (U.adjoint() * U - Matrix::Identity(U.rows(), U.cols()))
      .cwiseAbs()
      .maxCoeff();
}

std::vector<BranchSeed> log_branches(const Matrix& U_tg,
                                     const SubspaceSplit& split,
                                     double max_norm, int max_shift) {
  if (unitarity_defect(U_tg) > 1e-10)
    throw std::invalid_argument("target is not unitary");
  if (std::abs(U_tg.determinant() - Complex(1, 0)) > 1e-10)
    throw std::invalid_argument("target must be in SU(n)");
  const int n = static_cast<int>(U_tg.rows());

  EigenSystem sys = unitary_eigensystem(U_tg);
  const int nc = sys.num_clusters;
  std::vector<int> cluster_size(nc, 0);
  for (int i = 0; i < n; ++i) cluster_size[sys.cluster_of[i]]++;

  std::vector<BranchSeed> seeds;
  for (int s = 0; s < n; ++s) {
    const Complex alpha = std::polar(1.0, 2 * kPi * s / n);
    // Principal eigenphases of alpha U_tg; clusters are those of U_tg.
    std::vector<double> phase(n);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      phase[i] = principal_phase(std::polar(1.0, sys.phases[i]) * alpha);
      sum += phase[i];
    }
    const double kappa_f = -sum / (2 * kPi);
    const int kappa = static_cast<int>(std::lround(kappa_f));
    if (std::abs(kappa_f - kappa) > 1e-6) continue;  // det drifted off SU(n)

    // Shift per cluster, |m| <= max_shift, sum over eigenvalues = kappa.
    std::vector<int> m(nc, -max_shift);
    while (true) {
      int total = 0;
      for (int c = 0; c < nc; ++c) total += m[c] * cluster_size[c];
      if (total == kappa) {
        Vector h_eig(n);
        for (int i = 0; i < n; ++i)
          h_eig(i) = -(phase[i] + 2 * kPi * m[sys.cluster_of[i]]);
        if (h_eig.norm() <= max_norm + 1e-9) {
          Matrix Hbar = Matrix::Zero(n, n);
          for (int i = 0; i < n; ++i)
            Hbar += h_eig(i) * (sys.vectors.col(i) * sys.vectors.col(i).adjoint());
          Hbar = 0.5 * (Hbar + Hbar.adjoint().eval());
          BranchSeed seed;
          seed.coeffs = split.to_coeffs(Hbar);
          seed.hs_norm = seed.coeffs.norm();
          seed.phase_sector = alpha;
          seed.sector_index = s;
          seed.shifts.resize(n);
          for (int i = 0; i < n; ++i) seed.shifts[i] = m[sys.cluster_of[i]];
          if ((expi_hermitian(Hbar) - alpha * U_tg).norm() < 1e-10)
            seeds.push_back(std::move(seed));
        }
      }
      int c = 0;
      while (c < nc && m[c] == max_shift) m[c++] = -max_shift;
      if (c == nc) break;
      ++m[c];
    }
  }

  std::sort(seeds.begin(), seeds.end(), [](const BranchSeed& a, const BranchSeed& b) {
    if (std::abs(a.hs_norm - b.hs_norm) > 1e-12) return a.hs_norm < b.hs_norm;
    if (a.sector_index != b.sector_index) return a.sector_index < b.sector_index;
    return a.shifts < b.shifts;
  });
  std::vector<BranchSeed> unique;
  for (auto& seed : seeds) {
    bool dup = false;
    for (const auto& kept : unique)
      if ((kept.coeffs - seed.coeffs).norm() < 1e-8) { dup = true; break; }
    if (!dup) unique.push_back(std::move(seed));
  }
  for (size_t i = 0; i < unique.size(); ++i)
    unique[i].index = static_cast<int>(i) + 1;
  return unique;
}

}  // namespace qbrach
