#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbrach/dynamics.hpp"
#include "qbrach/liealg.hpp"
#include "qbrach/shooting.hpp"

namespace qbrach {

/// The deformation operator is numerically singular (conjugate point);
/// the branch has to be abandoned at this q.
struct DerivativeUndefined : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// q=1 derivative vanishes identically because [P_A H, P_B H] = 0;
/// continuation cannot leave the seed and a bootstrap is needed.
struct SpecialCaseZero : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense representation of the linear map J_T along one geodesic:
/// J_T(K(0)) = int_0^T U^dag(t) K(t) U(t) dt with K evolved by the
/// homogeneous deformation ODE.
struct DeformationOperator {
  Eigen::MatrixXd JT;
  double condition_number = 0;
  int grid_size = 0;  ///< nodes of the accepted quadrature grid
};

/// Right-hand side of the deformation ODE in coefficients:
/// K' = -i(F_q([K, G_q H]) + F_q([H, G_q K])), plus the inhomogeneous
/// term -i F_q^2([P_A H, P_B H]) when requested.
Vector k_rhs(const SubspaceSplit& split, const Vector& k, const Vector& h,
             double q, bool include_inhomogeneous);

/// Evolves every basis direction through the homogeneous deformation ODE
/// along the stored geodesic and quadratures the conjugated integral;
/// the grid doubles until the matrix is stable to 1e-8.
DeformationOperator assemble_JT(const SubspaceSplit& split,
                                const Trajectory& geodesic, double q);

/// Integral of U^dag(t) X(t) U(t) over the trajectory's span, with X
/// given in coefficients by `field(t, h(t))`. Same refinement scheme as
/// assemble_JT; used for the q=1 inhomogeneity and momentum checks.
Vector conjugated_integral(const SubspaceSplit& split, const Trajectory& traj,
                           const std::function<Vector(double, const Vector&)>& field);

/// dH_q^0/dq via the closed forms: at q=1 the conjugated commutator
/// integral through J_T^{-1}, for q>1 the algebraic expression in
/// G_q(H^0). Throws DerivativeUndefined above condition 1e12 and
/// SpecialCaseZero when the q=1 integrand vanishes.
Vector deformation_derivative(const SubspaceSplit& split,
                              const Trajectory& geodesic, double q);

enum class PathStatus { extending, terminated, completed };

struct PathSample {
  double q = 0;
  Vector h0;
  double fidelity = 0;          ///< gate fidelity of the P_A-replayed control
  double condition_number = 0;  ///< of J_T at this sample
};

struct QPath {
  int branch_index = 0;
  std::vector<PathSample> samples;  ///< q strictly increasing
  PathStatus status = PathStatus::extending;
  double q_stop = 0;    ///< last solved q when terminated
  std::string reason;   ///< termination reason
  double q_max = 0;     ///< reached endpoint when completed
};

struct ContinuationOptions {
  double q_max = 100.0;
  double dq0 = 0.25;
  double dq_min = 1e-3;
  double dq_growth = 1.6;  ///< applied after fast corrector convergence
  double dq_cap = 4.0;
  double corrector_tol = 1e-10;
  int corrector_max_iters = 12;
  double ode_tol = 1e-11;
  double cond_limit = 1e12;
  std::vector<double> record_at;  ///< q values the path must land on exactly
};

/// Predictor-corrector homotopy from (q_start, h0) toward q_max: the
/// deformation derivative predicts each q-step, a J_T-Newton re-shoot
/// pins the boundary-value residual below corrector_tol. A terminated
/// path is a result, not an error.
QPath continue_path(const SubspaceSplit& split, const Matrix& target,
                    double q_start, const Vector& h0,
                    const ContinuationOptions& options = {});

/// Branch-seed overload: starts at q=1 from the seed coefficients with
/// the target adjusted into the seed's phase sector.
QPath continue_path(const SubspaceSplit& split, const Matrix& raw_target,
                    const BranchSeed& seed,
                    const ContinuationOptions& options = {});

/// True iff [P_A H0, P_B H0] vanishes (Frobenius norm below 1e-10).
bool detect_special_case(const SubspaceSplit& split, const Vector& h0);

/// Shooting at q' > 1 from random guesses (componentwise uniform on
/// [-3, 3]), for targets whose seeds fall into the special case.
/// Converged solutions are deduplicated (distance < 1e-6) and sorted by
/// ||H^0|| ascending; empty when nothing converges. Roots with
/// ||H^0|| > max_norm are dropped before the polish stage; high-winding
/// solutions otherwise dominate the cost of the full-tolerance solves.
std::vector<ShootingResult> bootstrap_special(
    const SubspaceSplit& split, const Matrix& target, double q_prime = 5.0,
    int num_guesses = 60, unsigned rng_seed = 12345,
    double max_norm = std::numeric_limits<double>::infinity());

/// Checkpoint round-trip so long continuations are resumable.
std::string qpath_to_json(const QPath& path);
QPath qpath_from_json(const std::string& text);

}  // namespace qbrach
