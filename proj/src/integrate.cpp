#include "qbrach/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qbrach {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - bhat, for the embedded 4th-order error estimate.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output weights (Hairer, Norsett, Wanner).
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

double scaled_norm(const Vector& e, const Vector& y0, const Vector& y1,
                   double atol, double rtol) {
  double sum = 0;
  for (int i = 0; i < e.size(); ++i) {
    double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    double q = e(i) / sc;
    sum += q * q;
  }
  return std::sqrt(sum / e.size());
}

// Starting step size estimate (Hairer's hinit).
double initial_step(const OdeRhs& rhs, double t0, const Vector& y0,
                    const Vector& f0, double span, double atol, double rtol) {
  Vector sc(y0.size());
  for (int i = 0; i < y0.size(); ++i) sc(i) = atol + rtol * std::abs(y0(i));
  double d0 = (y0.cwiseQuotient(sc)).norm() / std::sqrt(double(y0.size()));
  double d1n = (f0.cwiseQuotient(sc)).norm() / std::sqrt(double(y0.size()));
  double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
  h0 = std::min(h0, span);
  Vector y1 = y0 + h0 * f0;
  Vector f1 = rhs(t0 + h0, y1);
  double d2 = ((f1 - f0).cwiseQuotient(sc)).norm() /
              std::sqrt(double(y0.size())) / h0;
  double dmax = std::max(d1n, d2);
  double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                            : std::pow(0.01 / dmax, 0.2);
  return std::min({100 * h0, h1, span});
}

}  // namespace

Vector DenseOutput::operator()(double t) const {
  if (segments_.empty()) throw std::runtime_error("empty dense output");
  const double slack = 1e-9 * (1 + std::abs(t_end()));
  if (t < t_begin() - slack || t > t_end() + slack)
    throw std::out_of_range("dense output evaluated outside solution span");
  // Rightmost segment whose start does not exceed t.
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                             [](double v, const DenseSegment& s) { return v < s.t0; });
  if (it != segments_.begin()) --it;
  return it->eval(std::clamp(t, t_begin(), t_end()));
}

IntegrationResult integrate(const OdeRhs& rhs, double t0, double t1,
                            const Vector& y0, const IntegrateOptions& opts) {
  if (t1 < t0) throw std::invalid_argument("integration span must be forward");
  IntegrationResult res;
  res.y = y0;
  if (t1 == t0) return res;

  const double span = t1 - t0;
  const double hmax = opts.max_step > 0 ? opts.max_step : span;
  double t = t0;
  Vector y = y0;
  Vector k1 = rhs(t, y);
  double h = opts.initial_step > 0
                 ? std::min(opts.initial_step, span)
                 : initial_step(rhs, t0, y, k1, span, opts.atol, opts.rtol);
  h = std::min(h, hmax);

  // PI controller state (Lund stabilization, beta = 0.04).
  constexpr double beta = 0.04, expo1 = 0.2 - beta * 0.75, safe = 0.9;
  double facold = 1e-4;
  bool rejected_last = false;

  Vector k2, k3, k4, k5, k6, k7, y1;
  for (long step = 0; step < opts.max_steps; ++step) {
    if (t + h > t1) h = t1 - t;
    if (h < 1e-14 * (1 + std::abs(t)))
      throw std::runtime_error("step size underflow at t = " + std::to_string(t));

    k2 = rhs(t + c2 * h, y + h * (a21 * k1));
    k3 = rhs(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    k4 = rhs(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    y1 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = rhs(t + h, y1);

    Vector err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err = scaled_norm(err_vec, y, y1, opts.atol, opts.rtol);

    if (err <= 1.0) {
      DenseSegment seg;
      seg.t0 = t;
      seg.h = h;
      seg.r1 = y;
      seg.r2 = y1 - y;
      seg.r3 = h * k1 - seg.r2;
      seg.r4 = seg.r2 - h * k7 - seg.r3;
      seg.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      res.dense.append(std::move(seg));
      res.steps_accepted++;

      t += h;
      y = y1;
      k1 = k7;  // FSAL
      if (opts.postprocess) {
        opts.postprocess(t, y);
        k1 = rhs(t, y);
      }
      if (t1 - t < 1e-14 * (1 + std::abs(t1))) break;

      double fac11 = std::pow(std::max(err, 1e-10), expo1);
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(0.1, std::min(rejected_last ? 1.0 : 5.0, safe / fac));
      facold = std::max(err, 1e-4);
      rejected_last = false;
      h = std::min(h * fac, hmax);
    } else {
      res.steps_rejected++;
      double fac11 = std::pow(err, expo1);
      h *= std::max(0.1, safe / fac11);
      rejected_last = true;
    }
  }
  if (t < t1 - 1e-12 * (1 + std::abs(t1)))
    throw std::runtime_error("integrator exceeded max_steps");
  res.y = y;
  return res;
}

}  // namespace qbrach
