#include "qbrach/continuation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>

namespace qbrach {

namespace {

void validate_geodesic(const Trajectory& tr, double q) {
  if (tr.kind != TrajectoryKind::geodesic)
    throw std::invalid_argument("deformation requires a geodesic trajectory");
  if (std::abs(tr.q - q) > 1e-9)
    throw std::invalid_argument("q does not match the stored trajectory");
}

/// Matrix of K -> coefficients of U^dag K U in the split basis.
Eigen::MatrixXd adjoint_rep(const SubspaceSplit& split, const Matrix& u) {
  const int d = split.dim();
  Eigen::MatrixXd rep(d, d);
  for (int a = 0; a < d; ++a) {
    Matrix x = u.adjoint() * split.to_matrix(Vector::Unit(d, a)) * u;
    rep.col(a) = split.to_coeffs(x);
  }
  return rep;
}

double simpson_weight(int j, int n_steps) {
  if (j == 0 || j == n_steps) return 1.0;
  return j % 2 ? 4.0 : 2.0;
}

/// One fixed-grid pass: RK4 for the fundamental system of the
/// homogeneous deformation ODE, composite Simpson for the integral.
Eigen::MatrixXd jt_on_grid(const SubspaceSplit& split, const Trajectory& tr,
                           double q, int n_steps) {
  const int d = split.dim();
  const double span = tr.T;
  const double hs = span / n_steps;

  auto deriv = [&](double t, const Eigen::MatrixXd& k) {
    const Vector ht = tr.generator_at(std::min(t, span));
    Eigen::MatrixXd out(d, d);
    for (int i = 0; i < d; ++i) {
      out.col(i) = k_rhs(split, k.col(i), ht, q, false);
      if (!out.col(i).allFinite())
        throw std::runtime_error("deformation column " + std::to_string(i) +
                                 " diverged at t = " + std::to_string(t));
    }
    return out;
  };

  Eigen::MatrixXd k = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd acc = adjoint_rep(split, tr.unitary_at(0.0)) * k;
  for (int j = 0; j < n_steps; ++j) {
    const double t = j * hs;
    Eigen::MatrixXd k1 = deriv(t, k);
    Eigen::MatrixXd k2 = deriv(t + hs / 2, k + (hs / 2) * k1);
    Eigen::MatrixXd k3 = deriv(t + hs / 2, k + (hs / 2) * k2);
    Eigen::MatrixXd k4 = deriv(t + hs, k + hs * k3);
    k += (hs / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    const double tn = std::min((j + 1) * hs, span);
    acc += simpson_weight(j + 1, n_steps) * (adjoint_rep(split, tr.unitary_at(tn)) * k);
  }
  return (hs / 3) * acc;
}

double condition_of(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  return sv(0) / std::max(sv(sv.size() - 1), 1e-300);
}

/// Derivative formulas on a pre-assembled operator; the caller has
/// already screened the condition number.
Vector derivative_from(const SubspaceSplit& split, const Trajectory& tr,
                       const DeformationOperator& op, double q) {
  const Vector h0 = tr.generators.front();
  if (std::abs(q - 1.0) < 1e-12) {
    const Vector m0 = -split.commutator_coeffs(split.project_allowed(h0),
                                               split.project_forbidden(h0));
    if (m0.norm() < 1e-10)
      throw SpecialCaseZero(
          "deformation derivative vanishes at q=1: [P_A H, P_B H] = 0");
    Vector integral = conjugated_integral(
        split, tr, [&m0](double t, const Vector&) { return Vector(t * m0); });
    return op.JT.colPivHouseholderQr().solve(integral);
  }
  const Vector g = split.apply_Gq(h0, q);
  Vector jg = op.JT.colPivHouseholderQr().solve(g);
  return (jg * tr.T - g) / (q * (q - 1.0));
}

struct CorrectorOutcome {
  Vector h;
  double residual_norm;
  int iterations;
};

/// Newton on the boundary-value residual with the deformation operator
/// as Jacobian, refreshed when progress stalls.
std::optional<CorrectorOutcome> correct(const SubspaceSplit& split,
                                        const Matrix& target, double q, Vector h,
                                        Eigen::MatrixXd jt,
                                        const ContinuationOptions& opt) {
  ShootingProblem prob;
  prob.family = FlowFamily::geodesic;
  prob.q = q;
  prob.split = &split;
  prob.target = target;
  prob.tol = opt.ode_tol;

  bool have_jt = true;
  for (int it = 0; it < opt.corrector_max_iters; ++it) {
    if (!have_jt) {
      try {
        Trajectory tr = integrate_geodesic(split, h, q, 1.0, opt.ode_tol, 17);
        jt = assemble_JT(split, tr, q).JT;
      } catch (const std::runtime_error&) {
        return std::nullopt;
      }
      have_jt = true;
    }
    Vector r;
    try {
      r = residual(prob, h);
    } catch (const std::runtime_error&) {
      return std::nullopt;
    }
    const double nr = r.norm();
    if (nr < opt.corrector_tol) return CorrectorOutcome{h, nr, it};

    Vector hn = h + jt.colPivHouseholderQr().solve(-r);
    Vector r2;
    try {
      r2 = residual(prob, hn);
    } catch (const std::runtime_error&) {
      have_jt = false;
      continue;
    }
    if (r2.norm() > 0.5 * nr) {
      if (r2.norm() < nr) {
        h = hn;  // slow but real progress, keep the operator
        continue;
      }
      have_jt = false;  // stalled, refresh at the current point
      continue;
    }
    h = hn;
  }
  return std::nullopt;
}

double replay_fidelity(const SubspaceSplit& split, const Trajectory& tr,
                       const Matrix& target, double tol) {
  Trajectory replay = integrate_schrodinger(
      split,
      [&](double t) { return split.project_allowed(tr.generator_at(t)); },
      tr.T, tol, 2);
  return gate_fidelity(replay.unitaries.back(), target);
}

}  // namespace

Vector k_rhs(const SubspaceSplit& split, const Vector& k, const Vector& h,
             double q, bool include_inhomogeneous) {
  if (q <= 0) throw std::invalid_argument("q must be positive");
  Vector out = split.apply_Fq(split.commutator_coeffs(k, split.apply_Gq(h, q)), q) +
               split.apply_Fq(split.commutator_coeffs(h, split.apply_Gq(k, q)), q);
  if (include_inhomogeneous) {
    Vector m = split.commutator_coeffs(split.project_allowed(h),
                                       split.project_forbidden(h));
    out += split.apply_Fq(split.apply_Fq(m, q), q);
  }
  return out;
}

DeformationOperator assemble_JT(const SubspaceSplit& split,
                                const Trajectory& geodesic, double q) {
  validate_geodesic(geodesic, q);
  int n = 64;
  Eigen::MatrixXd jt = jt_on_grid(split, geodesic, q, n);
  const int cap = 8192;
  while (n < cap) {
    Eigen::MatrixXd next = jt_on_grid(split, geodesic, q, 2 * n);
    n *= 2;
    const double diff = (next - jt).cwiseAbs().maxCoeff();
    jt = std::move(next);
    if (diff < 1e-8) break;
  }
  DeformationOperator op;
  op.JT = std::move(jt);
  op.grid_size = n;
  op.condition_number = condition_of(op.JT);
  return op;
}

Vector conjugated_integral(const SubspaceSplit& split, const Trajectory& traj,
                           const std::function<Vector(double, const Vector&)>& field) {
  const double span = traj.T;
  auto pass = [&](int n_steps) {
    Vector acc = Vector::Zero(split.dim());
    const double hs = span / n_steps;
    for (int j = 0; j <= n_steps; ++j) {
      const double t = std::min(j * hs, span);
      Vector x = field(t, traj.generator_at(t));
      acc += simpson_weight(j, n_steps) * (adjoint_rep(split, traj.unitary_at(t)) * x);
    }
    return Vector((hs / 3) * acc);
  };
  int n = 64;
  Vector integral = pass(n);
  const int cap = 16384;
  while (n < cap) {
    Vector next = pass(2 * n);
    n *= 2;
    const double diff = (next - integral).cwiseAbs().maxCoeff();
    integral = std::move(next);
    if (diff < 1e-9) break;
  }
  return integral;
}

Vector deformation_derivative(const SubspaceSplit& split,
                              const Trajectory& geodesic, double q) {
  validate_geodesic(geodesic, q);
  if (q < 1.0 - 1e-12) throw std::invalid_argument("q must be at least 1");
  if (std::abs(q - 1.0) < 1e-12) {
    // Screen the special case before paying for the operator assembly.
    const Vector h0 = geodesic.generators.front();
    const Vector m0 = -split.commutator_coeffs(split.project_allowed(h0),
                                               split.project_forbidden(h0));
    if (m0.norm() < 1e-10)
      throw SpecialCaseZero(
          "deformation derivative vanishes at q=1: [P_A H, P_B H] = 0");
  }
  DeformationOperator op = assemble_JT(split, geodesic, q);
  if (op.condition_number > 1e12) {
    std::ostringstream msg;
    msg << "deformation operator condition " << op.condition_number
        << " at q = " << q;
    throw DerivativeUndefined(msg.str());
  }
  return derivative_from(split, geodesic, op, q);
}

QPath continue_path(const SubspaceSplit& split, const Matrix& target,
                    double q_start, const Vector& h0,
                    const ContinuationOptions& options) {
  if (unitarity_defect(target) > 1e-10)
    throw std::invalid_argument("continuation target is not unitary");
  if (q_start < 1.0 - 1e-12) throw std::invalid_argument("q_start must be at least 1");
  if (options.q_max < q_start) throw std::invalid_argument("q_max below q_start");
  if (h0.size() != split.dim() || !h0.allFinite())
    throw std::invalid_argument("bad seed coefficients");

  ShootingProblem prob;
  prob.family = FlowFamily::geodesic;
  prob.q = q_start;
  prob.split = &split;
  prob.target = target;
  prob.tol = options.ode_tol;
  const double r0 = residual(prob, h0).norm();
  if (r0 >= 1e-10) {
    std::ostringstream msg;
    msg << "seed does not solve the boundary-value problem at q = " << q_start
        << " (residual " << r0 << ")";
    throw std::invalid_argument(msg.str());
  }

  std::vector<double> record = options.record_at;
  std::sort(record.begin(), record.end());

  QPath path;
  Vector h = h0;
  double q = q_start;
  double dq = options.dq0;

  while (true) {
    Trajectory tr = integrate_geodesic(split, h, q, 1.0, options.ode_tol, 33);
    DeformationOperator op = assemble_JT(split, tr, q);

    PathSample sample;
    sample.q = q;
    sample.h0 = h;
    sample.fidelity = replay_fidelity(split, tr, target, options.ode_tol);
    sample.condition_number = op.condition_number;
    path.samples.push_back(std::move(sample));

    if (q >= options.q_max - 1e-9) {
      path.status = PathStatus::completed;
      path.q_max = q;
      break;
    }
    if (op.condition_number > options.cond_limit) {
      std::ostringstream msg;
      msg << "deformation operator condition " << op.condition_number
          << " at q = " << q;
      path.status = PathStatus::terminated;
      path.q_stop = q;
      path.reason = msg.str();
      break;
    }

    Vector d;
    try {
      d = derivative_from(split, tr, op, q);
    } catch (const SpecialCaseZero& e) {
      path.status = PathStatus::terminated;
      path.q_stop = q;
      path.reason = e.what();
      break;
    }

    bool stepped = false;
    while (dq >= options.dq_min) {
      double qn = std::min(q + dq, options.q_max);
      for (double r : record) {
        if (r > q + 1e-9) {
          qn = std::min(qn, r);
          break;
        }
      }
      Vector h_pred = h + (qn - q) * d;
      auto got = correct(split, target, qn, h_pred, op.JT, options);
      if (got) {
        h = got->h;
        q = qn;
        stepped = true;
        if (got->iterations <= 3 && dq < options.dq_cap)
          dq = std::min(dq * options.dq_growth, options.dq_cap);
        break;
      }
      dq *= 0.5;
    }
    if (!stepped) {
      std::ostringstream msg;
      msg << "corrector failed below the minimum q-step at q = " << q;
      path.status = PathStatus::terminated;
      path.q_stop = q;
      path.reason = msg.str();
      break;
    }
  }
  return path;
}

QPath continue_path(const SubspaceSplit& split, const Matrix& raw_target,
                    const BranchSeed& seed, const ContinuationOptions& options) {
  QPath path = continue_path(split, Matrix(seed.phase_sector * raw_target), 1.0,
                             seed.coeffs, options);
  path.branch_index = seed.index;
  return path;
}

bool detect_special_case(const SubspaceSplit& split, const Vector& h0) {
  if (h0.size() != split.dim())
    throw std::invalid_argument("coefficient vector does not match the split");
  return split
             .commutator_coeffs(split.project_allowed(h0),
                                split.project_forbidden(h0))
             .norm() < 1e-10;
}

std::vector<ShootingResult> bootstrap_special(const SubspaceSplit& split,
                                              const Matrix& target,
                                              double q_prime, int num_guesses,
                                              unsigned rng_seed) {
  if (q_prime <= 1.0) throw std::invalid_argument("q_prime must exceed 1");
  if (num_guesses < 1) throw std::invalid_argument("num_guesses must be positive");

  // Doomed guesses dominate the cost, so attempts run with a loose
  // integrator, forward differences, and a residual target matched to
  // the integration error; candidates are re-polished at full tolerance.
  ShootingProblem coarse;
  coarse.family = FlowFamily::geodesic;
  coarse.q = q_prime;
  coarse.split = &split;
  coarse.target = target;
  coarse.tol = 1e-8;
  ShootingOptions coarse_opts;
  coarse_opts.max_iters = 25;
  coarse_opts.residual_tol = 1e-6;
  coarse_opts.fd_forward = true;

  ShootingProblem fine = coarse;
  fine.tol = 1e-12;
  ShootingOptions polish_opts;
  polish_opts.max_iters = 10;

  std::mt19937 rng(rng_seed);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  const int d = split.dim();

  std::vector<ShootingResult> found;
  for (int g = 0; g < num_guesses; ++g) {
    Vector guess(d);
    for (int i = 0; i < d; ++i) guess(i) = dist(rng);
    try {
      ShootingResult rough = shoot(coarse, guess, coarse_opts);
      if (!rough.converged) continue;
      ShootingResult res = shoot(fine, rough.initial_data, polish_opts);
      if (res.converged) found.push_back(std::move(res));
    } catch (const std::runtime_error&) {
      // NonConvergence, SingularJacobian, integration failures: next guess.
    }
  }

  std::vector<ShootingResult> unique;
  for (auto& res : found) {
    bool duplicate = false;
    for (const auto& kept : unique) {
      if ((res.initial_data - kept.initial_data).norm() < 1e-6) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) unique.push_back(std::move(res));
  }
  std::stable_sort(unique.begin(), unique.end(),
                   [](const ShootingResult& a, const ShootingResult& b) {
                     return a.initial_data.norm() < b.initial_data.norm();
                   });
  return unique;
}

std::string qpath_to_json(const QPath& path) {
  nlohmann::json j;
  j["branch_index"] = path.branch_index;
  switch (path.status) {
    case PathStatus::extending: j["status"] = "extending"; break;
    case PathStatus::terminated: j["status"] = "terminated"; break;
    case PathStatus::completed: j["status"] = "completed"; break;
  }
  if (path.status == PathStatus::terminated) {
    j["q_stop"] = path.q_stop;
    j["reason"] = path.reason;
  }
  if (path.status == PathStatus::completed) j["q_max"] = path.q_max;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : path.samples) {
    nlohmann::json e;
    e["q"] = s.q;
    e["h0"] = std::vector<double>(s.h0.data(), s.h0.data() + s.h0.size());
    e["fidelity"] = s.fidelity;
    e["condition_number"] = s.condition_number;
    j["samples"].push_back(std::move(e));
  }
  return j.dump(2);
}

QPath qpath_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  QPath path;
  path.branch_index = j.at("branch_index").get<int>();
  const std::string status = j.at("status").get<std::string>();
  if (status == "extending") {
    path.status = PathStatus::extending;
  } else if (status == "terminated") {
    path.status = PathStatus::terminated;
    path.q_stop = j.at("q_stop").get<double>();
    path.reason = j.at("reason").get<std::string>();
  } else if (status == "completed") {
    path.status = PathStatus::completed;
    path.q_max = j.at("q_max").get<double>();
  } else {
    throw std::invalid_argument("unknown path status: " + status);
  }
  for (const auto& e : j.at("samples")) {
    PathSample s;
    s.q = e.at("q").get<double>();
    const auto coeffs = e.at("h0").get<std::vector<double>>();
    s.h0 = Eigen::Map<const Vector>(coeffs.data(), coeffs.size());
    s.fidelity = e.at("fidelity").get<double>();
    s.condition_number = e.at("condition_number").get<double>();
    path.samples.push_back(std::move(s));
  }
  return path;
}

}  // namespace qbrach
