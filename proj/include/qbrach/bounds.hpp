#pragma once

#include <iosfwd>
#include <utility>
#include <vector>

#include "qbrach/liealg.hpp"

namespace qbrach {

/// Piecewise-constant protocol over the allowed subspace: row j of
/// `controls` generates segment j of duration total_time / num_segments.
/// Every row keeps norm <= E so the reconstructed H(t) respects the
/// energy bound.
struct PiecewiseProtocol {
  int num_segments = 0;
  double total_time = 0;
  Eigen::MatrixXd controls;  ///< num_segments x d_A

  double segment_duration() const { return total_time / num_segments; }
};

/// Time-ordered product of the segment propagators.
Matrix propagate_piecewise(const SubspaceSplit& split,
                           const PiecewiseProtocol& protocol);

/// gate_fidelity of the propagated protocol together with its exact
/// derivative over the control rows. The per-segment propagator derivative
/// is evaluated in the segment eigenbasis (divided differences of exp), so
/// no finite differencing is involved. Rows need not be normalized.
double fidelity_gradient(const SubspaceSplit& split, const Matrix& target,
                         const PiecewiseProtocol& protocol,
                         Eigen::MatrixXd& grad);

/// Projected gradient ascent of gate_fidelity over piecewise-constant
/// allowed controls at fixed T. Each accepted step renormalizes every
/// segment back to ||H|| = E, so the iterate stays a constant-speed
/// protocol; the control sequence is band-limited to the lowest num_modes
/// cosine modes (num_modes outside [1, num_segments] lifts the limit).
/// Jagged unrestricted protocols can pass high fidelity thresholds below
/// the true minimum time, which would break the upper-bound role of the
/// T-scan built on this routine. Segment gradients are exact (eigenbasis
/// derivative of the propagator, no finite differences). Deterministic in
/// rng_seed; returns the best iterate even when the ascent stalls early.
std::pair<PiecewiseProtocol, double> optimize_fixed_T(
    const SubspaceSplit& split, const Matrix& target, double T, double E,
    int num_segments = 40, unsigned rng_seed = 0, int max_iters = 300,
    int num_modes = 6);

struct ScanConfig {
  double t_min = 1.0;
  double t_max = 10.0;
  double t_step = 0.1;
  double fidelity_threshold = 0.999;
  int num_segments = 40;
  int num_modes = 6;
  int num_restarts = 3;
  int max_iters = 300;
  unsigned rng_seed = 0;
  double refine_tol = 0.02;  ///< bisection stops below this T-window
};

struct TstarEstimate {
  double value = 0;       ///< smallest T found to reach the threshold
  bool reliable = false;  ///< false when the scan never reached it
  std::vector<std::pair<double, double>> scan;  ///< (T, best fidelity) rows
};

/// Walks the scan grid upward until some T reaches the fidelity threshold,
/// then bisects between the last failing and the first passing T. Every T
/// runs num_restarts optimizations (seeds rng_seed, rng_seed + 1, ...) and
/// keeps the best. An exhausted scan returns t_max with reliable = false.
TstarEstimate estimate_Tstar(const SubspaceSplit& split, const Matrix& target,
                             double E, const ScanConfig& config = {});

/// Writes "T, fidelity" rows of the scan table.
void write_scan_csv(const TstarEstimate& estimate, std::ostream& out);

}  // namespace qbrach
