#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "geomint/core.hpp"
#include "geomint/systems.hpp"
#include "support/oracles.hpp"

using namespace geomint;
using Catch::Approx;

namespace {

Potential quadratic_potential(const Mat& k) {
  Potential p;
  p.value = [k](const Vec& q) { return 0.5 * q.dot(k * q); };
  p.gradient = [k](const Vec& q) { return Vec(k * q); };
  p.hessian = [k](const Vec&) { return k; };
  return p;
}

}  // namespace

TEST_CASE("phase state validity", "[core]") {
  PhaseState s;
  s.q = Vec::Zero(3);
  s.v = Vec::Zero(3);
  CHECK(s.valid());
  s.v = Vec::Zero(2);
  CHECK_FALSE(s.valid());
  s.v = Vec::Zero(3);
  s.v[1] = std::nan("");
  CHECK_FALSE(s.valid());
}

TEST_CASE("mass matrix modes", "[core]") {
  auto id = MassMatrix::identity(3);
  CHECK(id.apply(Vec::Ones(3)).isApprox(Vec::Ones(3)));

  Vec d(2);
  d << 2.0, 4.0;
  auto diag = MassMatrix::diagonal(d);
  Vec x(2);
  x << 1.0, 1.0;
  CHECK(diag.apply(x)[1] == Approx(4.0));
  CHECK(diag.solve(d).isApprox(Vec::Ones(2)));
  CHECK(diag.kinetic_energy(x) == Approx(3.0));

  Mat m(2, 2);
  m << 4.0, 1.0, 1.0, 3.0;
  auto dense = MassMatrix::dense(m);
  Vec b(2);
  b << 1.0, 2.0;
  CHECK((m * dense.solve(b) - b).norm() < 1e-12);

  Vec bad(2);
  bad << 1.0, -1.0;
  CHECK_THROWS_AS(MassMatrix::diagonal(bad), ConfigError);
  Mat indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(MassMatrix::dense(indef), ConfigError);
}

TEST_CASE("potential finite-difference fallback matches analytic hessian", "[core]") {
  Mat k(3, 3);
  k << 4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0;
  Potential full = quadratic_potential(k);
  Potential no_hess;
  no_hess.value = full.value;
  no_hess.gradient = full.gradient;

  oracles::Sampler rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec q = rng.vector(3, -2.0, 2.0);
    CHECK((no_hess.hessian_at(q) - k).norm() < 1e-6);
    CHECK((full.hessian_at(q) - k).norm() == 0.0);
  }
}

TEST_CASE("gradients and hessians agree with finite differences at random points", "[core]") {
  auto [system, constraints] = double_pendulum_cartesian();
  oracles::Sampler rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec q = rng.vector(4, -2.0, 2.0);
    const Vec g_fd = oracles::fd_gradient(system.potential.value, q);
    const Vec g = system.potential.gradient(q);
    CHECK((g - g_fd).norm() <= 1e-5 * std::max(1.0, g_fd.norm()));

    const Mat j_fd = oracles::fd_jacobian(constraints.g, q);
    CHECK((constraints.jacobian(q) - j_fd).norm() <= 1e-5 * std::max(1.0, j_fd.norm()));
  }
}

TEST_CASE("penalty system from an identity constraint", "[core]") {
  MechanicalSystem base;
  base.dof = 1;
  base.mass = MassMatrix::identity(1);
  base.potential = Potential::zero(1);
  ConstraintSet cons;
  cons.count = 1;
  cons.g = [](const Vec& q) { return q; };
  cons.jacobian = [](const Vec&) { return Mat::Identity(1, 1).eval(); };

  auto split = build_penalty_system(base, cons, 2.0);
  Vec q(1);
  q << 3.0;
  // stiff force -omega^2 g grad g = -4 * 3 * 1
  CHECK(-(split.inv_eps * split.stiff.gradient(q))[0] == Approx(-12.0));
  CHECK(split.inv_eps == Approx(4.0));
  CHECK(split.total_value(q) == Approx(split.base.potential.value(q) + split.inv_eps * split.stiff.value(q)));
}

TEST_CASE("stiff gradient vanishes on the constraint manifold", "[core]") {
  auto [system, constraints] = double_pendulum_cartesian();
  const PhaseState rest = double_pendulum_rest_state();
  CHECK(constraints.g(rest.q).norm() == Approx(0.0).margin(1e-14));
  for (double omega : {5.0, 20.0, 80.0}) {
    auto split = build_penalty_system(system, constraints, omega);
    CHECK(split.stiff.gradient(rest.q).norm() == Approx(0.0).margin(1e-14));
  }
}

TEST_CASE("penalty stiff parts are mutually consistent under finite differencing", "[core]") {
  auto [system, constraints] = double_pendulum_cartesian();
  auto split = build_penalty_system(system, constraints, 20.0);
  oracles::Sampler rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec q = rng.vector(4, -2.0, 2.0);
    const Vec g_fd = oracles::fd_gradient(split.stiff.value, q);
    CHECK((split.stiff.gradient(q) - g_fd).norm() <= 1e-5 * std::max(1.0, g_fd.norm()));
    const Mat h_fd = oracles::fd_jacobian(split.stiff.gradient, q);
    CHECK((split.stiff.hessian_at(q) - 0.5 * (h_fd + h_fd.transpose())).norm() <=
          1e-4 * std::max(1.0, h_fd.norm()));
  }
}

TEST_CASE("dropping the constraint curvature changes only the g-weighted term", "[core]") {
  auto [system, constraints] = double_pendulum_cartesian();
  auto with = build_penalty_system(system, constraints, 20.0, true);
  auto without = build_penalty_system(system, constraints, 20.0, false);
  Vec q(4);
  q << 0.3, -1.2, 1.4, -1.9;  // off the manifold, g != 0
  const Mat diff = with.stiff.hessian_at(q) - without.stiff.hessian_at(q);
  const Mat expected = constraints.weighted_hessian_at(q, constraints.g(q));
  CHECK((diff - expected).norm() < 1e-12);
  CHECK(diff.norm() > 1e-3);

  const PhaseState rest = double_pendulum_rest_state();
  CHECK((with.stiff.hessian_at(rest.q) - without.stiff.hessian_at(rest.q)).norm() <
        1e-12);  // g = 0 there
}

TEST_CASE("total energy", "[core]") {
  MechanicalSystem sys;
  sys.dof = 2;
  sys.mass = MassMatrix::identity(2);
  sys.potential = Potential::zero(2);

  PhaseState s;
  s.q = Vec::Zero(2);
  s.v = Vec::Zero(2);
  CHECK(total_energy(sys, s) == 0.0);

  s.v << 3.0, 4.0;
  CHECK(total_energy(sys, s) == Approx(12.5));

  auto [pend, cons] = double_pendulum_cartesian();
  const PhaseState rest = double_pendulum_rest_state();
  CHECK(total_energy(pend, rest) == Approx(3.0));

  // Penalty energy equals base energy wherever g = 0.
  auto split = build_penalty_system(pend, cons, 20.0);
  CHECK(total_energy(split, rest) == Approx(total_energy(pend, rest)));

  PhaseState wrong;
  wrong.q = Vec::Zero(3);
  wrong.v = Vec::Zero(3);
  CHECK_THROWS_AS(total_energy(sys, wrong), ConfigError);
}

TEST_CASE("penalty construction rejects bad setups", "[core]") {
  auto [system, constraints] = double_pendulum_cartesian();
  CHECK_THROWS_AS(build_penalty_system(system, constraints, -1.0), ConfigError);
  ConstraintSet too_many = constraints;
  too_many.count = 5;
  CHECK_THROWS_AS(build_penalty_system(system, too_many, 10.0), ConfigError);
}
