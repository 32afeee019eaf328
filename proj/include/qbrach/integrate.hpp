#pragma once

#include <functional>
#include <vector>

#include "qbrach/liealg.hpp"

namespace qbrach {

/// Right-hand side f(t, y) of an autonomous-or-not real ODE system.
using OdeRhs = std::function<Vector(double, const Vector&)>;

struct IntegrateOptions {
  double rtol = 1e-9;
  double atol = 1e-9;
  double initial_step = 0.0;  ///< 0 selects the step automatically
  double max_step = 0.0;      ///< 0 means the full span
  long max_steps = 2000000;
  /// Invoked after every accepted step and may adjust the state in
  /// place (drift control). Setting it costs one extra rhs call per
  /// step because the FSAL stage must be refreshed.
  std::function<void(double, Vector&)> postprocess;
};

/// Quartic interpolant over one accepted step, valid for t in [t0, t0+h].
struct DenseSegment {
  double t0 = 0, h = 0;
  Vector r1, r2, r3, r4, r5;

  Vector eval(double t) const {
    const double s = (t - t0) / h, s1 = 1.0 - s;
    return r1 + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5)));
  }
};

/// Piecewise interpolant of a solution; evaluable anywhere in [t_begin, t_end].
class DenseOutput {
 public:
  Vector operator()(double t) const;
  double t_begin() const { return segments_.empty() ? 0 : segments_.front().t0; }
  double t_end() const {
    return segments_.empty() ? 0 : segments_.back().t0 + segments_.back().h;
  }
  const std::vector<DenseSegment>& segments() const { return segments_; }
  void append(DenseSegment seg) { segments_.push_back(std::move(seg)); }

 private:
  std::vector<DenseSegment> segments_;
};

struct IntegrationResult {
  Vector y;
  DenseOutput dense;
  long steps_accepted = 0;
  long steps_rejected = 0;
};

/// Adaptive Dormand-Prince 5(4) with PI step control and dense output.
/// Integrates y' = rhs(t, y) from t0 to t1 >= t0. Throws std::runtime_error
/// if the controller stalls (step underflow or max_steps exceeded).
IntegrationResult integrate(const OdeRhs& rhs, double t0, double t1,
                            const Vector& y0, const IntegrateOptions& opts = {});

}  // namespace qbrach
