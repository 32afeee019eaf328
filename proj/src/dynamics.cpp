#include "qbrach/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace qbrach {

namespace {

constexpr double kUnitarityTol = 1e-10;

void pack_unitary(const Matrix& U, double* dst) {
  const int n = static_cast<int>(U.rows());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      *dst++ = U(i, j).real();
      *dst++ = U(i, j).imag();
    }
}

Matrix unpack_unitary(const double* src, int n) {
  Matrix U(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double re = *src++, im = *src++;
      U(i, j) = Complex(re, im);
    }
  return U;
}

Matrix polar_unitary(const Matrix& U) {
  Eigen::JacobiSVD<Matrix> svd(U, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().adjoint();
}

// Restores the packed unitary block when drift passes a tenth of the
// tolerance budget.
void project_unitary_block(Vector& y, int n) {
  Matrix U = unpack_unitary(y.data(), n);
  if (unitarity_defect(U) > kUnitarityTol / 10)
    pack_unitary(polar_unitary(U), y.data());
}

// Extracts the uniform sample grid from an integration result. The
// packed layout is [2 n^2 unitary floats, coeff_dim coefficients];
// coeff_dim may be zero.
void extract_samples(Trajectory& tr, const Vector& y0, const Vector& yT,
                     const IntegrationResult& res, int n, int coeff_dim,
                     int num_samples) {
  tr.times.resize(num_samples);
  tr.unitaries.resize(num_samples);
  if (coeff_dim > 0) tr.generators.resize(num_samples);
  for (int i = 0; i < num_samples; ++i) {
    double t = tr.T * i / (num_samples - 1);
    tr.times[i] = t;
    Vector y;
    if (i == 0)
      y = y0;
    else if (i == num_samples - 1)
      y = yT;
    else
      y = res.dense(t);
    Matrix U = unpack_unitary(y.data(), n);
    if (i > 0 && unitarity_defect(U) > kUnitarityTol / 10) U = polar_unitary(U);
    tr.unitaries[i] = std::move(U);
    if (coeff_dim > 0) tr.generators[i] = y.tail(coeff_dim);
  }
}

void check_relative_drift(const std::vector<double>& values, double rel_tol,
                          const char* what) {
  double base = values.front();
  // Zero conserved quantities (for instance lambda = 0) are compared on
  // an absolute scale instead of their own vanishing base.
  double scale = std::max(std::abs(base), 1.0);
  for (double v : values)
    if (std::abs(v - base) > rel_tol * scale)
      throw std::runtime_error(std::string("conservation violated: ") + what);
}

void check_unitarity(const Trajectory& tr) {
  for (const Matrix& U : tr.unitaries)
    if (unitarity_defect(U) > kUnitarityTol)
      throw std::runtime_error("unitarity tolerance exceeded in trajectory");
}

// Conservation budget loosens with the integration tolerance.
double drift_budget(double tol) { return std::max(1e-8, 1e3 * tol); }

}  // namespace

Matrix Trajectory::unitary_at(double t) const {
  const int n = hilbert_dim();
  Vector y = dense(t);
  Matrix U = unpack_unitary(y.data(), n);
  if (unitarity_defect(U) > kUnitarityTol / 10) U = polar_unitary(U);
  return U;
}

Vector Trajectory::generator_at(double t) const {
  const int n = hilbert_dim();
  const int d = coeff_dim();
  if (!dense.segments().empty() &&
      dense.segments().front().r1.size() == 2 * n * n + d) {
    Vector y = dense(t);
    return y.tail(d);
  }
  // Replay trajectories carry no dense coefficients; interpolate the
  // sample grid with a Catmull-Rom cubic instead.
  const auto& ts = times;
  const int m = static_cast<int>(ts.size());
  if (m < 2) return generators.at(0);
  double lo = ts.front(), hi = ts.back();
  if (t < lo - 1e-9 * (1 + std::abs(hi)) || t > hi + 1e-9 * (1 + std::abs(hi)))
    throw std::out_of_range("generator query outside trajectory span");
  t = std::clamp(t, lo, hi);
  double step = (hi - lo) / (m - 1);
  int k = std::min(m - 2, static_cast<int>((t - lo) / step));
  double u = (t - (lo + k * step)) / step;
  auto sample = [&](int i) -> Vector {
    if (i < 0) return 2.0 * generators[0] - generators[1];
    if (i >= m) return 2.0 * generators[m - 1] - generators[m - 2];
    return generators[i];
  };
  Vector p0 = sample(k - 1), p1 = sample(k), p2 = sample(k + 1), p3 = sample(k + 2);
  Vector m1 = 0.5 * (p2 - p0), m2 = 0.5 * (p3 - p1);
  double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * p1 + (u3 - 2 * u2 + u) * m1 +
         (-2 * u3 + 3 * u2) * p2 + (u3 - u2) * m2;
}

Vector geodesic_rhs(const SubspaceSplit& split, const Vector& h, double q) {
  if (q < 1) throw std::invalid_argument("q must be >= 1");
  return split.apply_Fq(split.commutator_coeffs(h, split.apply_Gq(h, q)), q);
}

BrachistochroneState brachistochrone_rhs(const SubspaceSplit& split,
                                         const BrachistochroneState& state) {
  const int da = split.dim_allowed(), db = split.dim_forbidden();
  if (state.mu.size() != da || state.lambda.size() != db)
    throw std::invalid_argument("state dimensions do not match the split");
  Vector f(da + db);
  f.head(da) = state.mu;
  f.tail(db) = state.lambda;
  Vector df = split.commutator_coeffs(split.project_allowed(f), f);
  BrachistochroneState out;
  out.mu = df.head(da);
  out.lambda = df.tail(db);
  return out;
}

Trajectory integrate_schrodinger(const SubspaceSplit& split,
                                 const std::function<Vector(double)>& controls,
                                 double T, double tol, int num_samples) {
  if (T <= 0) throw std::invalid_argument("T must be positive");
  const int n = split.hilbert_dim();
  const int un = 2 * n * n;

  OdeRhs rhs = [&](double t, const Vector& y) {
    Matrix U = unpack_unitary(y.data(), n);
    Matrix dU = Complex(0, -1) * (split.to_matrix(controls(t)) * U);
    Vector out(un);
    pack_unitary(dU, out.data());
    return out;
  };
  IntegrateOptions opts;
  opts.rtol = opts.atol = tol;
  opts.postprocess = [n](double, Vector& y) { project_unitary_block(y, n); };

  Vector y0(un);
  pack_unitary(Matrix::Identity(n, n), y0.data());
  auto res = integrate(rhs, 0, T, y0, opts);

  Trajectory tr;
  tr.kind = TrajectoryKind::replay;
  tr.T = T;
  tr.d_allowed = split.dim_allowed();
  extract_samples(tr, y0, res.y, res, n, 0, num_samples);
  tr.generators.resize(num_samples);
  for (int i = 0; i < num_samples; ++i) tr.generators[i] = controls(tr.times[i]);
  tr.dense = std::move(res.dense);
  check_unitarity(tr);
  return tr;
}

Trajectory integrate_geodesic(const SubspaceSplit& split, const Vector& h0,
                              double q, double T, double tol, int num_samples) {
  if (q < 1) throw std::invalid_argument("q must be >= 1");
  if (T <= 0) throw std::invalid_argument("T must be positive");
  const int n = split.hilbert_dim(), d = split.dim();
  const int un = 2 * n * n;

  OdeRhs rhs = [&](double, const Vector& y) {
    Matrix U = unpack_unitary(y.data(), n);
    Vector h = y.tail(d);
    Matrix dU = Complex(0, -1) * (split.to_matrix(h) * U);
    Vector out(un + d);
    pack_unitary(dU, out.data());
    out.tail(d) = geodesic_rhs(split, h, q);
    return out;
  };
  IntegrateOptions opts;
  opts.rtol = opts.atol = tol;
  opts.postprocess = [n](double, Vector& y) { project_unitary_block(y, n); };

  Vector y0(un + d);
  pack_unitary(Matrix::Identity(n, n), y0.data());
  y0.tail(d) = h0;
  auto res = integrate(rhs, 0, T, y0, opts);

  Trajectory tr;
  tr.kind = TrajectoryKind::geodesic;
  tr.q = q;
  tr.T = T;
  tr.d_allowed = split.dim_allowed();
  extract_samples(tr, y0, res.y, res, n, d, num_samples);
  tr.dense = std::move(res.dense);
  check_unitarity(tr);

  std::vector<double> qnorm;
  for (const Vector& h : tr.generators) qnorm.push_back(split.q_inner(h, h, q));
  check_relative_drift(qnorm, drift_budget(tol), "q-norm along geodesic");
  return tr;
}

Trajectory integrate_brachistochrone(const SubspaceSplit& split,
                                     const Vector& mu0, const Vector& lambda0,
                                     double T, double tol, int num_samples) {
  if (T <= 0) throw std::invalid_argument("T must be positive");
  const int n = split.hilbert_dim(), d = split.dim();
  const int da = split.dim_allowed(), db = split.dim_forbidden();
  if (mu0.size() != da || lambda0.size() != db)
    throw std::invalid_argument("initial data dimensions do not match the split");
  const int un = 2 * n * n;

  OdeRhs rhs = [&](double, const Vector& y) {
    Matrix U = unpack_unitary(y.data(), n);
    Vector f = y.tail(d);
    Matrix dU = Complex(0, -1) * (split.to_matrix(split.project_allowed(f)) * U);
    Vector out(un + d);
    pack_unitary(dU, out.data());
    out.tail(d) = split.commutator_coeffs(split.project_allowed(f), f);
    return out;
  };
  IntegrateOptions opts;
  opts.rtol = opts.atol = tol;
  opts.postprocess = [n](double, Vector& y) { project_unitary_block(y, n); };

  Vector y0(un + d);
  pack_unitary(Matrix::Identity(n, n), y0.data());
  y0.segment(un, da) = mu0;
  y0.tail(db) = lambda0;
  auto res = integrate(rhs, 0, T, y0, opts);

  Trajectory tr;
  tr.kind = TrajectoryKind::brachistochrone;
  tr.T = T;
  tr.d_allowed = split.dim_allowed();
  extract_samples(tr, y0, res.y, res, n, d, num_samples);
  tr.dense = std::move(res.dense);
  check_unitarity(tr);

  std::vector<double> mu_norm, lambda_norm;
  for (const Vector& f : tr.generators) {
    mu_norm.push_back(f.head(da).norm());
    lambda_norm.push_back(f.tail(db).norm());
  }
  check_relative_drift(mu_norm, drift_budget(tol), "Tr(H^2) along brachistochrone");
  check_relative_drift(lambda_norm, drift_budget(tol), "||lambda|| along brachistochrone");
  return tr;
}

double gate_fidelity(const Matrix& U, const Matrix& U_tg) {
  if (U.rows() != U_tg.rows() || U.cols() != U_tg.cols())
    throw std::invalid_argument("fidelity of mismatched dimensions");
  if (unitarity_defect(U) > 1e-8 || unitarity_defect(U_tg) > 1e-8)
    throw std::invalid_argument("fidelity of non-unitary input");
  return std::abs((U_tg.adjoint() * U).trace()) / static_cast<double>(U.rows());
}

ControlProtocol normalize_protocol(const Trajectory& traj, double E) {
  if (E <= 0) throw std::invalid_argument("energy bound must be positive");
  if (traj.times.size() < 2) throw std::invalid_argument("trajectory has no span");
  const int d = traj.coeff_dim();
  const int da = traj.d_allowed;
  if (da <= 0 || da > d)
    throw std::invalid_argument("trajectory does not record its A block width");
  const int db = d - da;
  const int num_samples = static_cast<int>(traj.times.size());

  auto speed = [&](double t) { return traj.generator_at(t).head(da).norm(); };

  double max_speed = 0, min_speed = std::numeric_limits<double>::infinity();
  for (double t : traj.times) {
    double s = speed(t);
    max_speed = std::max(max_speed, s);
    min_speed = std::min(min_speed, s);
  }

  ControlProtocol protocol;
  protocol.energy_bound = E;
  if (traj.kind == TrajectoryKind::geodesic) protocol.q_final = traj.q;
  if (max_speed <= 1e-9) {
    // Vanishing control everywhere: the trivial identity protocol.
    protocol.T = 0;
    protocol.times = {0.0};
    protocol.mu = {Vector::Zero(da)};
    protocol.lambda = {Vector::Zero(db)};
    return protocol;
  }
  if (min_speed <= 1e-9)
    throw std::invalid_argument("control norm vanishes on part of the span");

  // Cumulative arc length on a fine grid, one Simpson panel per cell.
  const int fine = 4096;
  const double dt = traj.T / fine;
  std::vector<double> arc(fine + 1, 0.0);
  double prev = speed(0.0);
  for (int i = 0; i < fine; ++i) {
    double t1 = (i + 1) * dt;
    double mid = speed((i + 0.5) * dt);
    double next = speed(std::min(t1, traj.T));
    arc[i + 1] = arc[i] + dt / 6.0 * (prev + 4 * mid + next);
    prev = next;
  }
  const double total = arc[fine];
  protocol.T = total / E;

  // Invert the arc length at each uniform protocol time.
  protocol.times.resize(num_samples);
  protocol.mu.resize(num_samples);
  protocol.lambda.resize(num_samples);
  for (int i = 0; i < num_samples; ++i) {
    double s = protocol.T * i / (num_samples - 1);
    double target = E * s;
    double t;
    if (i == 0) {
      t = 0;
    } else if (i == num_samples - 1) {
      t = traj.T;
    } else {
      auto it = std::upper_bound(arc.begin(), arc.end(), target);
      int k = std::max(0, static_cast<int>(it - arc.begin()) - 1);
      k = std::min(k, fine - 1);
      // Linear seed in the bracketing cell, then Newton on the local
      // Simpson refinement of the arc length.
      double frac = (target - arc[k]) / std::max(arc[k + 1] - arc[k], 1e-300);
      t = (k + std::clamp(frac, 0.0, 1.0)) * dt;
      for (int iter = 0; iter < 3; ++iter) {
        double a = k * dt;
        double local = (t - a) / 6.0 *
                       (speed(a) + 4 * speed(0.5 * (a + t)) + speed(t));
        double err = arc[k] + local - target;
        t = std::clamp(t - err / speed(t), a, (k + 1) * dt);
      }
    }
    protocol.times[i] = s;
    Vector g = traj.generator_at(t);
    double scale = E / g.head(da).norm();
    protocol.mu[i] = scale * g.head(da);
    protocol.lambda[i] = scale * g.tail(db);
  }
  return protocol;
}

void write_protocol_csv(const ControlProtocol& protocol, std::ostream& out) {
  out.precision(17);
  out << "t";
  const Eigen::Index n_mu = protocol.mu.empty() ? 0 : protocol.mu[0].size();
  const Eigen::Index n_lam = protocol.lambda.empty() ? 0 : protocol.lambda[0].size();
  for (Eigen::Index j = 0; j < n_mu; ++j) out << ", mu_" << j + 1;
  for (Eigen::Index k = 0; k < n_lam; ++k) out << ", lambda_" << k + 1;
  out << "\n";
  for (size_t i = 0; i < protocol.times.size(); ++i) {
    out << protocol.times[i];
    for (int j = 0; j < protocol.mu[i].size(); ++j) out << ", " << protocol.mu[i](j);
    for (int k = 0; k < protocol.lambda[i].size(); ++k)
      out << ", " << protocol.lambda[i](k);
    out << "\n";
  }
}

}  // namespace qbrach
