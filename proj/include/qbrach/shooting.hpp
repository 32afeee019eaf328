#pragma once

#include <stdexcept>

#include "qbrach/dynamics.hpp"
#include "qbrach/liealg.hpp"

namespace qbrach {

enum class FlowFamily { geodesic, brachistochrone };

/// Find initial data whose flow reaches `target` at T. The target is
/// expected to be sector-adjusted already (alpha U_tg). T stays pinned
/// to 1 during solves; the energy scale enters only at export.
struct ShootingProblem {
  FlowFamily family = FlowFamily::geodesic;
  double q = 1.0;  ///< geodesic family only
  const SubspaceSplit* split = nullptr;
  Matrix target;
  double T = 1.0;
  double tol = 1e-12;  ///< integrator tolerance
};

struct ShootingOptions {
  int max_iters = 100;
  double residual_tol = 1e-12;
  double step_tol = 1e-14;
  double fd_step = 1e-6;
  /// Forward instead of central differences: half the integrations per
  /// Jacobian at O(fd_step) accuracy, enough for scouting passes.
  bool fd_forward = false;
};

struct ShootingResult {
  Vector initial_data;    ///< H_q^0 coefficients, or stacked (mu0, lambda0)
  Trajectory trajectory;
  double residual_norm = 0;
  int iterations = 0;
  bool converged = false;
};

/// Iteration budget exhausted; abandon the guess or re-seed.
struct NonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Jacobian condition number above 1e14, typically a conjugate point.
struct SingularJacobian : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Endpoint mismatch in log coordinates: coefficients of
/// -i log_principal(U(T)^dag target), switching to a Frobenius-difference
/// chart when the mismatch eigenphases approach the branch cut.
Vector residual(const ShootingProblem& problem, const Vector& x0);

/// Finite differences of `residual`, column i stepped by
/// max(fd_step, fd_step |x0_i|); central by default.
Eigen::MatrixXd jacobian(const ShootingProblem& problem, const Vector& x0,
                         double fd_step = 1e-6, bool forward = false);

/// Damped Newton with Armijo backtracking, falling back to
/// Levenberg-Marquardt after two consecutive rejected steps.
ShootingResult shoot(const ShootingProblem& problem, const Vector& x0_guess,
                     const ShootingOptions& options = {});

}  // namespace qbrach
