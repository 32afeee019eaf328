#include "qbrach/shooting.hpp"

#include <cmath>
#include <numbers>

namespace qbrach {

namespace {

void validate(const ShootingProblem& problem) {
  if (!problem.split) throw std::invalid_argument("shooting problem has no split");
  if (problem.T <= 0) throw std::invalid_argument("horizon must be positive");
  if (unitarity_defect(problem.target) > 1e-10)
    throw std::invalid_argument("shooting target is not unitary");
}

Matrix propagate(const ShootingProblem& problem, const Vector& x0,
                 int num_samples, Trajectory* out) {
  const SubspaceSplit& split = *problem.split;
  Trajectory tr;
  switch (problem.family) {
    case FlowFamily::geodesic:
      tr = integrate_geodesic(split, x0, problem.q, problem.T, problem.tol,
                              num_samples);
      break;
    case FlowFamily::brachistochrone: {
      const int da = split.dim_allowed();
      tr = integrate_brachistochrone(split, x0.head(da),
                                     x0.tail(split.dim_forbidden()), problem.T,
                                     problem.tol, num_samples);
      break;
    }
  }
  Matrix U = tr.unitaries.back();
  if (out) *out = std::move(tr);
  return U;
}

}  // namespace

Vector residual(const ShootingProblem& problem, const Vector& x0) {
  validate(problem);
  if (!x0.allFinite()) throw std::invalid_argument("non-finite shooting point");
  const SubspaceSplit& split = *problem.split;
  Matrix U = propagate(problem, x0, 2, nullptr);
  Matrix W = U.adjoint() * problem.target;
  double max_phase = 0;
  Matrix R = principal_log_hermitian(W, &max_phase);
  if (max_phase >= std::numbers::pi - 0.1) {
    // Branch-cut neighborhood: use the Hermitian part of -i(W - I),
    // which agrees with R to second order near the root and is smooth
    // across the cut.
    Matrix D = Complex(0, -1) * (W - Matrix::Identity(W.rows(), W.cols()));
    R = 0.5 * (D + D.adjoint().eval());
  }
  return split.to_coeffs(R);
}

Eigen::MatrixXd jacobian(const ShootingProblem& problem, const Vector& x0,
                         double fd_step, bool forward) {
  validate(problem);
  const int n = static_cast<int>(x0.size());
  const int m = problem.split->dim();
  Eigen::MatrixXd J(m, n);
  Vector r0;
  if (forward) r0 = residual(problem, x0);
  for (int i = 0; i < n; ++i) {
    const double h = std::max(fd_step, fd_step * std::abs(x0(i)));
    try {
      Vector xp = x0;
      xp(i) += h;
      if (forward) {
        J.col(i) = (residual(problem, xp) - r0) / h;
      } else {
        Vector xm = x0;
        xm(i) -= h;
        J.col(i) = (residual(problem, xp) - residual(problem, xm)) / (2 * h);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("jacobian probe " + std::to_string(i) +
                               " failed: " + e.what());
    }
  }
  return J;
}

ShootingResult shoot(const ShootingProblem& problem, const Vector& x0_guess,
                     const ShootingOptions& options) {
  validate(problem);
  if (!x0_guess.allFinite())
    throw std::invalid_argument("non-finite shooting guess");

  Vector x = x0_guess;
  Vector r = residual(problem, x);
  double rn = r.norm();
  int consecutive_rejects = 0;
  bool use_lm = false;
  double lm_lambda = 1e-3;
  int iter = 0;

  for (; iter < options.max_iters; ++iter) {
    if (rn < options.residual_tol) break;

    Eigen::MatrixXd J = jacobian(problem, x, options.fd_step, options.fd_forward);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    double cond = sv(0) / std::max(sv(sv.size() - 1), 1e-300);
    if (cond > 1e14)
      throw SingularJacobian("jacobian condition " + std::to_string(cond) +
                             " at residual " + std::to_string(rn));

    Vector dx;
    if (!use_lm) {
      dx = svd.solve(-r);
    } else {
      Eigen::MatrixXd JtJ = J.transpose() * J;
      double scale = JtJ.diagonal().maxCoeff();
      Eigen::MatrixXd A = JtJ + lm_lambda * scale *
                                    Eigen::MatrixXd::Identity(JtJ.rows(), JtJ.cols());
      dx = A.ldlt().solve(-J.transpose() * r);
    }

    // Armijo backtracking on ||r||^2 over damping 1, 1/2, ..., 1/2^8.
    bool accepted = false;
    double applied_step = 0;
    for (int k = 0; k <= 8; ++k) {
      const double damp = std::ldexp(1.0, -k);
      Vector xn = x + damp * dx;
      Vector rnew = residual(problem, xn);
      if (rnew.squaredNorm() <= rn * rn * (1 - 1e-4 * damp)) {
        applied_step = damp * dx.norm();
        x = xn;
        r = rnew;
        rn = rnew.norm();
        accepted = true;
        break;
      }
    }

    if (accepted) {
      consecutive_rejects = 0;
      if (use_lm) lm_lambda = std::max(lm_lambda * 0.3, 1e-10);
      if (applied_step < options.step_tol) break;  // stalled at the floor
    } else {
      ++consecutive_rejects;
      if (use_lm) lm_lambda = std::min(lm_lambda * 10, 1e8);
      if (consecutive_rejects >= 2 && !use_lm) {
        use_lm = true;
        lm_lambda = 1e-3;
      } else if (use_lm && lm_lambda >= 1e8) {
        break;  // no descent direction left
      }
    }
  }

  if (rn >= options.residual_tol && iter >= options.max_iters)
    throw NonConvergence("no convergence after " +
                         std::to_string(options.max_iters) +
                         " iterations, residual " + std::to_string(rn));

  ShootingResult result;
  result.initial_data = x;
  result.residual_norm = rn;
  result.iterations = iter;
  result.converged = rn < options.residual_tol;
  propagate(problem, x, 512, &result.trajectory);
  return result;
}

}  // namespace qbrach
