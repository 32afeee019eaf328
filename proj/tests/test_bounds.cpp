#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "qbrach/bounds.hpp"
#include "qbrach/dynamics.hpp"

using namespace qbrach;
namespace fix = qbrach::testing;

namespace {

const SubspaceSplit& split() {
  static SubspaceSplit s = SubspaceSplit::preset("two_qubit_heisenberg");
  return s;
}

const SubspaceSplit& qubit_split() {
  static SubspaceSplit s = [] {
    auto basis = build_pauli_basis(1);
    std::vector<Vector> allowed;
    for (int a = 0; a < 3; ++a) allowed.push_back(Vector::Unit(3, a));
    return SubspaceSplit::build(basis, allowed);
  }();
  return s;
}

PiecewiseProtocol random_protocol(const SubspaceSplit& s, int num, double T,
                                  unsigned seed) {
  PiecewiseProtocol p;
  p.num_segments = num;
  p.total_time = T;
  p.controls.resize(num, s.dim_allowed());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int j = 0; j < num; ++j)
    for (int a = 0; a < s.dim_allowed(); ++a) p.controls(j, a) = dist(rng);
  return p;
}

}  // namespace

TEST_CASE("piecewise propagation: commuting segments collapse to one exponential") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd row(split().dim_allowed());
  for (int a = 0; a < row.size(); ++a) row(a) = dist(rng);

  PiecewiseProtocol p;
  p.num_segments = 8;
  p.total_time = 1.7;
  p.controls = row.transpose().replicate(8, 1);

  Vector full = Vector::Zero(split().dim());
  full.head(row.size()) = row;
  Matrix direct = expi_hermitian(split().to_matrix(full) * 1.7);
  CHECK((propagate_piecewise(split(), p) - direct).norm() < 1e-12);
  CHECK(p.segment_duration() == doctest::Approx(1.7 / 8));
}

TEST_CASE("piecewise propagation rejects malformed protocols") {
  PiecewiseProtocol p;
  p.num_segments = 0;
  CHECK_THROWS_AS(propagate_piecewise(split(), p), std::invalid_argument);
  p = random_protocol(split(), 4, 1.0, 0);
  p.controls.conservativeResize(4, 3);
  CHECK_THROWS_AS(propagate_piecewise(split(), p), std::invalid_argument);
}

TEST_CASE("fidelity gradient matches central differences") {
  auto p = random_protocol(split(), 6, 2.0, 11);
  const Matrix target = fix::example1_target();

  Eigen::MatrixXd grad;
  const double f0 = fidelity_gradient(split(), target, p, grad);
  CHECK(f0 == doctest::Approx(gate_fidelity(propagate_piecewise(split(), p),
                                            target))
                  .epsilon(1e-12));

  std::mt19937_64 rng(29);
  std::uniform_int_distribution<int> seg(0, 5), ctl(0, split().dim_allowed() - 1);
  const double h = 1e-5;
  for (int trial = 0; trial < 12; ++trial) {
    const int j = seg(rng), a = ctl(rng);
    auto plus = p, minus = p;
    plus.controls(j, a) += h;
    minus.controls(j, a) -= h;
    const double fd = (gate_fidelity(propagate_piecewise(split(), plus), target) -
                       gate_fidelity(propagate_piecewise(split(), minus), target)) /
                      (2 * h);
    CHECK(std::abs(grad(j, a) - fd) < 1e-7);
  }
}

TEST_CASE("optimizer recovers a realizable target rapidly") {
  Eigen::VectorXd h0(3);
  h0 << 0.6, -0.64, 0.48;  // norm 1, inside the allowed span
  h0 /= h0.norm();
  Vector full = Vector::Zero(3);
  full.head(3) = h0;
  const double T = 2.0;
  const Matrix target = expi_hermitian(qubit_split().to_matrix(full) * T);

  auto [p, f] = optimize_fixed_T(qubit_split(), target, T, 1.0, 16, 7, 300);
  CHECK(f > 1 - 1e-6);
  CHECK(p.num_segments == 16);
  CHECK(f == doctest::Approx(gate_fidelity(propagate_piecewise(qubit_split(), p),
                                           target))
                 .epsilon(1e-12));
  for (int j = 0; j < p.num_segments; ++j)
    CHECK(p.controls.row(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("optimizer is deterministic in the seed") {
  const Matrix target = fix::example1_target();
  auto [p1, f1] = optimize_fixed_T(split(), target, 3.0, 1.0, 10, 42, 40);
  auto [p2, f2] = optimize_fixed_T(split(), target, 3.0, 1.0, 10, 42, 40);
  CHECK(f1 == f2);
  CHECK(p1.controls == p2.controls);

  auto [p3, f3] = optimize_fixed_T(split(), target, 3.0, 1.0, 10, 43, 40);
  CHECK(p1.controls != p3.controls);
}

TEST_CASE("optimizer input validation") {
  const Matrix target = fix::example1_target();
  CHECK_THROWS_AS(optimize_fixed_T(split(), target, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(optimize_fixed_T(split(), target, 1.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(optimize_fixed_T(split(), target, 1.0, 1.0, 1), std::invalid_argument);
  Matrix skew = target;
  skew(0, 0) += 0.1;
  CHECK_THROWS_AS(optimize_fixed_T(split(), skew, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(optimize_fixed_T(split(), Matrix::Identity(2, 2), 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("Tstar scan brackets a single-exponential time from above") {
  Eigen::VectorXd h0(3);
  h0 << 0.28, 0.96, 0.0;
  Vector full = Vector::Zero(3);
  full.head(3) = h0;
  const double t0 = 2.0;
  const Matrix target = expi_hermitian(qubit_split().to_matrix(full) * t0);

  ScanConfig config;
  config.t_min = 1.0;
  config.t_max = 3.5;
  config.t_step = 0.5;
  config.num_segments = 16;
  config.num_restarts = 2;
  config.max_iters = 200;
  auto est = estimate_Tstar(qubit_split(), target, 1.0, config);
  CHECK(est.reliable);
  CHECK(est.value <= t0 + config.t_step);
  CHECK(est.value > 0);

  // Scan rows are sorted and include the bracketing grid points.
  for (size_t i = 1; i < est.scan.size(); ++i)
    CHECK(est.scan[i].first > est.scan[i - 1].first);
  std::ostringstream csv;
  write_scan_csv(est, csv);
  CHECK(csv.str().rfind("T, fidelity\n", 0) == 0);
}

TEST_CASE("exhausted scan returns the upper edge with low confidence") {
  ScanConfig config;
  config.t_min = 0.5;
  config.t_max = 1.0;
  config.t_step = 0.25;
  config.num_segments = 12;
  config.num_restarts = 1;
  config.max_iters = 50;
  auto est = estimate_Tstar(split(), fix::example1_target(), 1.0, config);
  CHECK_FALSE(est.reliable);
  CHECK(est.value == doctest::Approx(1.0));
  CHECK(est.scan.size() == 3);
  for (const auto& [t, f] : est.scan) CHECK(f < config.fidelity_threshold);
}

TEST_CASE("Tstar scan validation") {
  ScanConfig config;
  config.t_min = 0;
  CHECK_THROWS_AS(estimate_Tstar(split(), fix::example1_target(), 1.0, config),
                  std::invalid_argument);
  config = {};
  config.t_max = config.t_min - 1;
  CHECK_THROWS_AS(estimate_Tstar(split(), fix::example1_target(), 1.0, config),
                  std::invalid_argument);
  config = {};
  config.num_restarts = 0;
  CHECK_THROWS_AS(estimate_Tstar(split(), fix::example1_target(), 1.0, config),
                  std::invalid_argument);
}

TEST_CASE("upper bound for the Heisenberg-coupled target") {
  ScanConfig config;
  config.t_min = 6.0;
  config.t_max = 7.2;
  config.t_step = 0.1;
  auto est = estimate_Tstar(split(), fix::example1_target(), 1.0, config);
  CHECK(est.reliable);
  // Published weighted-sum bound is 6.8; the scan crossing sits within one
  // grid step of it.
  CHECK(est.value >= 6.6);
  CHECK(est.value <= 6.9);
}

TEST_CASE("upper bound for the CNOT target") {
  ScanConfig config;
  config.t_min = 5.0;
  config.t_max = 6.2;
  config.t_step = 0.1;
  auto est = estimate_Tstar(split(), fix::cnot(), 1.0, config);
  CHECK(est.reliable);
  // Published bound is 5.8.
  CHECK(est.value >= 5.7);
  CHECK(est.value <= 5.9);
}
