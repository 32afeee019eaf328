#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "qbrach/dynamics.hpp"

using namespace qbrach;
namespace fix = qbrach::testing;

namespace {

const SubspaceSplit& split() {
  static SubspaceSplit s = SubspaceSplit::preset("two_qubit_heisenberg");
  return s;
}

Vector random_coeffs(std::mt19937_64& rng, int n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("schrodinger: zero and constant hamiltonians") {
  Vector zero = Vector::Zero(15);
  auto tr = integrate_schrodinger(split(), [&](double) { return zero; }, 1.0);
  CHECK((tr.unitaries.back() - Matrix::Identity(4, 4)).norm() < 1e-12);
  CHECK(tr.unitaries.front() == Matrix::Identity(4, 4));

  std::mt19937_64 rng(5);
  Vector h = random_coeffs(rng, 15);
  auto tr2 = integrate_schrodinger(split(), [&](double) { return h; }, 1.0);
  Matrix expect = expi_hermitian(split().to_matrix(h));
  CHECK((tr2.unitaries.back() - expect).norm() < 1e-10);
  CHECK(tr2.kind == TrajectoryKind::replay);
  CHECK(tr2.times.size() == 512);
}

TEST_CASE("schrodinger: piecewise-constant controls give the ordered product") {
  std::mt19937_64 rng(9);
  Vector h1 = random_coeffs(rng, 15), h2 = random_coeffs(rng, 15);
  auto controls = [&](double t) { return t < 0.5 ? h1 : h2; };
  auto tr = integrate_schrodinger(split(), controls, 1.0, 1e-10);
  Matrix expect = expi_hermitian(0.5 * split().to_matrix(h2)) *
                  expi_hermitian(0.5 * split().to_matrix(h1));
  CHECK((tr.unitaries.back() - expect).norm() < 1e-8);
}

TEST_CASE("geodesic rhs: zero at q=1 and for allowed-only generators") {
  std::mt19937_64 rng(13);
  Vector h = random_coeffs(rng, 15);
  CHECK(geodesic_rhs(split(), h, 1.0).norm() < 1e-14);

  Vector ha = split().project_allowed(h);
  for (double q : {1.0, 3.0, 50.0})
    CHECK(geodesic_rhs(split(), ha, q).norm() < 1e-13);

  CHECK_THROWS_AS(geodesic_rhs(split(), h, 0.5), std::invalid_argument);
}

TEST_CASE("geodesic rhs matches the dense commutator formula") {
  std::mt19937_64 rng(17);
  const double q = 7.0;
  for (int rep = 0; rep < 3; ++rep) {
    Vector h = random_coeffs(rng, 15);
    Matrix H = split().to_matrix(h);
    Matrix GqH = split().to_matrix(split().apply_Gq(h, q));
    Matrix comm = H * GqH - GqH * H;
    // Hdot = -i F_q([H, G_q H])
    Vector expect = split().apply_Fq(
        split().to_coeffs(Complex(0, -1) * comm), q);
    CHECK((geodesic_rhs(split(), h, q) - expect).norm() < 1e-12);
  }
}

TEST_CASE("geodesic flow: constant at q=1, reaches the sector target") {
  Vector h3 = fix::branch3_coeffs();
  auto tr = integrate_geodesic(split(), h3, 1.0, 1.0);
  CHECK(tr.kind == TrajectoryKind::geodesic);
  for (const Vector& h : tr.generators) CHECK((h - h3).norm() < 1e-9);
  // Branch 3 lives in the alpha = -i sector.
  Matrix target = fix::example1_target();
  CHECK((tr.unitaries.back() - Complex(0, -1) * target).norm() < 1e-8);
  CHECK(gate_fidelity(tr.unitaries.back(), target) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("geodesic flow: allowed-only seed stays constant at any q") {
  std::mt19937_64 rng(21);
  Vector ha = split().project_allowed(random_coeffs(rng, 15));
  auto tr = integrate_geodesic(split(), ha, 12.0, 1.0);
  for (const Vector& h : tr.generators) CHECK((h - ha).norm() < 1e-9);
}

TEST_CASE("geodesic flow conserves the q-norm and the conjugated momentum") {
  Vector h3 = fix::branch3_coeffs();
  const double q = 3.0;
  auto tr = integrate_geodesic(split(), h3, q, 1.0);
  const double qn0 = split().q_inner(h3, h3, q);
  Vector g0 = split().apply_Gq(h3, q);
  Matrix G0 = split().to_matrix(g0);
  for (size_t i = 0; i < tr.times.size(); i += 31) {
    const Vector& h = tr.generators[i];
    CHECK(split().q_inner(h, h, q) == doctest::Approx(qn0).epsilon(1e-8));
    Matrix Gt = split().to_matrix(split().apply_Gq(h, q));
    const Matrix& U = tr.unitaries[i];
    CHECK((U.adjoint() * Gt * U - G0).norm() < 1e-7);
  }
}

TEST_CASE("brachistochrone rhs: fixed points and conservation") {
  std::mt19937_64 rng(29);
  BrachistochroneState s;
  s.mu = random_coeffs(rng, 7);
  s.lambda = Vector::Zero(8);
  auto ds = brachistochrone_rhs(split(), s);
  CHECK(ds.mu.norm() < 1e-14);
  CHECK(ds.lambda.norm() < 1e-14);

  s.lambda = random_coeffs(rng, 8);
  ds = brachistochrone_rhs(split(), s);
  CHECK(std::abs(s.mu.dot(ds.mu)) < 1e-12);
  CHECK(std::abs(s.lambda.dot(ds.lambda)) < 1e-12);
}

TEST_CASE("brachistochrone rhs matches the dense commutator formula") {
  std::mt19937_64 rng(31);
  BrachistochroneState s;
  s.mu = random_coeffs(rng, 7);
  s.lambda = random_coeffs(rng, 8);
  Vector f(15);
  f.head(7) = s.mu;
  f.tail(8) = s.lambda;
  Matrix F = split().to_matrix(f);
  Matrix H = split().to_matrix(split().project_allowed(f));
  Vector expect = split().to_coeffs(Complex(0, -1) * (H * F - F * H));
  auto ds = brachistochrone_rhs(split(), s);
  CHECK((ds.mu - expect.head(7)).norm() < 1e-12);
  CHECK((ds.lambda - expect.tail(8)).norm() < 1e-12);

  BrachistochroneState bad;
  bad.mu = Vector::Zero(6);
  bad.lambda = Vector::Zero(8);
  CHECK_THROWS_AS(brachistochrone_rhs(split(), bad), std::invalid_argument);
}

TEST_CASE("brachistochrone flow: constant branch and conserved norms") {
  std::mt19937_64 rng(37);
  Vector mu0 = random_coeffs(rng, 7);
  auto tr = integrate_brachistochrone(split(), mu0, Vector::Zero(8), 1.0);
  Vector h(15);
  h.head(7) = mu0;
  h.tail(8).setZero();
  CHECK((tr.unitaries.back() - expi_hermitian(split().to_matrix(h))).norm() < 1e-10);

  Vector lambda0 = random_coeffs(rng, 8);
  auto tr2 = integrate_brachistochrone(split(), mu0, lambda0, 2.0);
  for (size_t i = 0; i < tr2.generators.size(); i += 63) {
    CHECK(tr2.generators[i].head(7).norm() ==
          doctest::Approx(mu0.norm()).epsilon(1e-8));
    CHECK(tr2.generators[i].tail(8).norm() ==
          doctest::Approx(lambda0.norm()).epsilon(1e-8));
  }
}

TEST_CASE("gate fidelity: identity, phase invariance, validation") {
  Matrix target = fix::example1_target();
  CHECK(gate_fidelity(target, target) == doctest::Approx(1.0).epsilon(1e-14));
  Matrix rotated = std::polar(1.0, 1.234) * target;
  CHECK(gate_fidelity(rotated, target) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(gate_fidelity(Matrix::Identity(4, 4), target) < 1.0);
  CHECK_THROWS_AS(gate_fidelity(Matrix::Identity(2, 2), target), std::invalid_argument);
  CHECK_THROWS_AS(gate_fidelity(2.0 * target, target), std::invalid_argument);
}

TEST_CASE("replayed branch-3 controls reproduce the frozen fidelity") {
  // Replaying only the allowed part P_A H of the q=1 seed gives a known
  // poor fidelity; the protocol becomes useful only at large q.
  Vector h3 = fix::branch3_coeffs();
  auto geo = integrate_geodesic(split(), h3, 1.0, 1.0);
  auto replay = integrate_schrodinger(
      split(), [&](double t) { return split().project_allowed(geo.generator_at(t)); },
      1.0);
  double f = gate_fidelity(replay.unitaries.back(), fix::example1_target());
  CHECK(f == doctest::Approx(0.8353).epsilon(5e-4));
}

TEST_CASE("normalize: constant-speed input rescales to T = ||H||/E") {
  std::mt19937_64 rng(41);
  Vector mu0 = random_coeffs(rng, 7);
  mu0 *= 6.69 / mu0.norm();
  Vector lambda0 = random_coeffs(rng, 8);
  auto tr = integrate_brachistochrone(split(), mu0, lambda0, 1.0);
  auto protocol = normalize_protocol(tr, 1.0);
  CHECK(protocol.T == doctest::Approx(6.69).epsilon(1e-9));
  for (const Vector& m : protocol.mu)
    CHECK(m.norm() == doctest::Approx(1.0).epsilon(1e-9));

  // Already at norm E: the identity transformation.
  auto protocol2 = normalize_protocol(tr, 6.69);
  CHECK(protocol2.T == doctest::Approx(1.0).epsilon(1e-9));
  for (size_t i = 0; i < protocol2.times.size(); i += 100) {
    CHECK(protocol2.times[i] == doctest::Approx(tr.times[i]).epsilon(1e-9));
    CHECK((protocol2.mu[i] - tr.generators[i].head(7)).norm() < 1e-7);
  }
}

TEST_CASE("normalize: varying-norm input becomes constant speed") {
  // Fixed direction with analytic arc length: the reparametrized
  // protocol is a constant control reaching the same endpoint.
  std::mt19937_64 rng(43);
  Vector dir = split().project_allowed(random_coeffs(rng, 15));
  dir /= dir.norm();
  auto mag = [](double t) { return 1.5 + std::sin(4 * t); };
  auto tr = integrate_schrodinger(split(), [&](double t) { return Vector(mag(t) * dir); },
                                  1.0, 1e-12);
  const double E = 2.0;
  auto protocol = normalize_protocol(tr, E);
  const double arc = 1.5 + (1 - std::cos(4.0)) / 4.0;  // int_0^1 mag
  CHECK(protocol.T == doctest::Approx(arc / E).epsilon(1e-7));
  for (const Vector& m : protocol.mu)
    CHECK(m.norm() == doctest::Approx(E).epsilon(1e-6));
  // Same endpoint as the original trajectory.
  Matrix expect = expi_hermitian(arc * split().to_matrix(dir));
  CHECK((tr.unitaries.back() - expect).norm() < 1e-9);
  Matrix replayed = expi_hermitian(E * protocol.T * split().to_matrix(dir));
  CHECK((replayed - expect).norm() < 1e-7);
}

TEST_CASE("normalize: generic input replays to the same final unitary") {
  std::mt19937_64 rng(47);
  Vector mu0 = random_coeffs(rng, 7);
  Vector lambda0 = random_coeffs(rng, 8);
  auto tr = integrate_brachistochrone(split(), mu0, lambda0, 1.5);
  const double E = 3.0;
  auto protocol = normalize_protocol(tr, E);
  CHECK(protocol.T == doctest::Approx(1.5 * mu0.norm() / E).epsilon(1e-8));
  CHECK(protocol.T * E == doctest::Approx(1.5 * mu0.norm()).epsilon(1e-6));

  // Replay the normalized protocol through cubic interpolation of its
  // own samples.
  Trajectory resampled;
  resampled.kind = TrajectoryKind::replay;
  resampled.T = protocol.T;
  resampled.d_allowed = 7;
  resampled.times = protocol.times;
  for (size_t i = 0; i < protocol.times.size(); ++i) {
    Vector g(15);
    g.head(7) = protocol.mu[i];
    g.tail(8).setZero();
    resampled.generators.push_back(g);
    resampled.unitaries.push_back(Matrix::Identity(4, 4));
  }
  auto replay = integrate_schrodinger(
      split(), [&](double t) { return split().project_allowed(resampled.generator_at(t)); },
      protocol.T, 1e-12);
  CHECK((replay.unitaries.back() - tr.unitaries.back()).norm() < 1e-7);
}

TEST_CASE("normalize: degenerate and singular inputs") {
  Vector zero = Vector::Zero(15);
  auto tr = integrate_schrodinger(split(), [&](double) { return zero; }, 1.0);
  auto protocol = normalize_protocol(tr, 1.0);
  CHECK(protocol.T == 0.0);
  CHECK(protocol.times.size() == 1);
  CHECK(protocol.mu[0].norm() == 0.0);

  // Norm that vanishes on part of the span only.
  std::mt19937_64 rng(53);
  Vector dir = split().project_allowed(random_coeffs(rng, 15));
  auto controls = [&](double t) { return Vector(std::max(0.0, t - 0.5) * dir); };
  auto tr2 = integrate_schrodinger(split(), controls, 1.0);
  CHECK_THROWS_AS(normalize_protocol(tr2, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(normalize_protocol(tr, -1.0), std::invalid_argument);
}

TEST_CASE("protocol csv layout") {
  std::mt19937_64 rng(59);
  Vector mu0 = random_coeffs(rng, 7);
  auto tr = integrate_brachistochrone(split(), mu0, Vector::Zero(8), 1.0, 1e-10, 16);
  auto protocol = normalize_protocol(tr, 1.0);
  std::ostringstream out;
  write_protocol_csv(protocol, out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "t, mu_1, mu_2, mu_3, mu_4, mu_5, mu_6, mu_7, lambda_1, lambda_2, "
        "lambda_3, lambda_4, lambda_5, lambda_6, lambda_7, lambda_8");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 16);
}

TEST_CASE("integrator order: error shrinks with tolerance") {
  std::mt19937_64 rng(61);
  Vector h = random_coeffs(rng, 15);
  Matrix exact = expi_hermitian(split().to_matrix(h));
  double err_loose = 0, err_tight = 0;
  {
    auto tr = integrate_schrodinger(split(), [&](double) { return h; }, 1.0, 1e-6);
    err_loose = (tr.unitaries.back() - exact).norm();
  }
  {
    auto tr = integrate_schrodinger(split(), [&](double) { return h; }, 1.0, 1e-10);
    err_tight = (tr.unitaries.back() - exact).norm();
  }
  CHECK(err_tight < err_loose);
  CHECK(err_tight < 1e-9);
}
