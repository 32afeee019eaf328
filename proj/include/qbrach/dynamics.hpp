#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "qbrach/integrate.hpp"
#include "qbrach/liealg.hpp"

namespace qbrach {

enum class TrajectoryKind { geodesic, brachistochrone, replay };

/// Sampled solution of one of the three flows. `generators` holds full
/// coefficient vectors over the split basis: the geodesic generator H_q,
/// the brachistochrone F = H + sum lambda_k B_k (A block = mu, B block =
/// lambda), or the replayed control. The dense interpolant packs
/// [vec re/im U, coefficients] and covers [0, T].
struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::replay;
  double q = 1.0;      ///< geodesic kind only
  double T = 0;
  int d_allowed = 0;   ///< width of the A block in each generator vector
  std::vector<double> times;
  std::vector<Matrix> unitaries;
  std::vector<Vector> generators;

  DenseOutput dense;

  Matrix unitary_at(double t) const;
  Vector generator_at(double t) const;

  int hilbert_dim() const { return static_cast<int>(unitaries.at(0).rows()); }
  int coeff_dim() const { return static_cast<int>(generators.at(0).size()); }
};

/// Pontryagin state of the brachistochrone flow.
struct BrachistochroneState {
  Vector mu;      ///< controls, length d_A
  Vector lambda;  ///< adjoint multipliers, length d_B
};

/// Constant-speed control protocol on a uniform sample grid.
struct ControlProtocol {
  std::vector<double> times;
  std::vector<Vector> mu;
  std::vector<Vector> lambda;
  double energy_bound = 1;
  double T = 0;
  double achieved_infidelity = std::numeric_limits<double>::quiet_NaN();
  int branch_index = 0;  ///< source branch m, 0 if not applicable
  double q_final = 0;    ///< end of the q-path, 0 if not applicable
};

/// Time derivative of the geodesic generator, -i F_q([H, G_q H]).
/// Identically zero at q = 1 and for H contained in A.
Vector geodesic_rhs(const SubspaceSplit& split, const Vector& h, double q);

/// Right sides of the brachistochrone component equations. The flow
/// conserves ||mu|| and ||lambda|| separately.
BrachistochroneState brachistochrone_rhs(const SubspaceSplit& split,
                                         const BrachistochroneState& state);

/// Integrates U' = -iH(t)U for sampled or closed-form controls;
/// `controls` returns generator coefficients at a given time.
Trajectory integrate_schrodinger(const SubspaceSplit& split,
                                 const std::function<Vector(double)>& controls,
                                 double T, double tol = 1e-12,
                                 int num_samples = 512);

/// Joint (U, H) integration of the q-geodesic from H(0) = h0.
Trajectory integrate_geodesic(const SubspaceSplit& split, const Vector& h0,
                              double q, double T = 1.0, double tol = 1e-12,
                              int num_samples = 512);

/// Joint (U, mu, lambda) integration of the brachistochrone flow.
Trajectory integrate_brachistochrone(const SubspaceSplit& split,
                                     const Vector& mu0, const Vector& lambda0,
                                     double T, double tol = 1e-12,
                                     int num_samples = 512);

/// F = |Tr(U_tg^dag U)| / n, invariant under global phase on either side.
double gate_fidelity(const Matrix& U, const Matrix& U_tg);

/// Reparametrizes a trajectory to constant control speed ||mu(s)|| = E
/// with duration T = (1/E) int ||mu(t)|| dt. The traversed path, and so
/// the final unitary, is unchanged. A trajectory with mu identically
/// zero yields the trivial identity protocol with T = 0; a norm that
/// vanishes only on part of the span is rejected.
ControlProtocol normalize_protocol(const Trajectory& traj, double E);

/// Writes "t, mu_1..mu_dA, lambda_1..lambda_dB" rows.
void write_protocol_csv(const ControlProtocol& protocol, std::ostream& out);

}  // namespace qbrach
