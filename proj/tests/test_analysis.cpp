#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "geomint/analysis.hpp"
#include "geomint/integrators.hpp"
#include "geomint/systems.hpp"
#include "support/oracles.hpp"

using namespace geomint;
using Catch::Approx;

namespace {

MechanicalSystem harmonic_1d(double k = 1.0) {
  MechanicalSystem sys;
  sys.dof = 1;
  sys.mass = MassMatrix::identity(1);
  sys.potential.value = [k](const Vec& q) { return 0.5 * k * q[0] * q[0]; };
  sys.potential.gradient = [k](const Vec& q) { return Vec(k * q); };
  sys.potential.hessian = [k](const Vec&) { return Mat::Constant(1, 1, k); };
  return sys;
}

StiffSplitSystem penalty_pendulum(double omega) {
  auto [system, constraints] = double_pendulum_cartesian();
  return build_penalty_system(system, constraints, omega);
}

Trajectory synthetic_energy_series(const std::vector<double>& t, const std::vector<double>& e) {
  Trajectory traj;
  for (std::size_t i = 0; i < t.size(); ++i) {
    TrajectorySample s;
    s.t = t[i];
    s.q = Vec::Zero(1);
    s.v = Vec::Zero(1);
    s.energy = e[i];
    traj.samples.push_back(s);
  }
  return traj;
}

}  // namespace

TEST_CASE("stability spectrum closed form", "[analysis]") {
  // beta = 1/4, K h^2 large: a h^2 -> 4, both eigenvalues -> -1.
  auto far = linear_stability_spectrum(1.0, 1e12, 0.25, 1.0);
  CHECK(far.modulus1 == Approx(1.0).margin(1e-9));
  CHECK(far.modulus2 == Approx(1.0).margin(1e-9));

  // K = M = 1, beta = 1/4, h = 2: a h^2 = 2, complex pair on the unit circle.
  auto unit = linear_stability_spectrum(1.0, 1.0, 0.25, 2.0);
  CHECK(unit.modulus1 == Approx(1.0).margin(1e-14));
  CHECK(unit.modulus2 == Approx(1.0).margin(1e-14));

  // beta = 0 with K h^2 = 5 > 4: real pair, one outside the unit circle.
  auto unstable = linear_stability_spectrum(1.0, 5.0, 0.0, 1.0);
  CHECK(unstable.max_modulus() == Approx((3.0 + std::sqrt(5.0)) / 2.0).margin(1e-12));

  // K = 0: free particle, moduli (1, 1).
  auto free = linear_stability_spectrum(1.0, 0.0, 0.25, 10.0);
  CHECK(free.modulus1 == Approx(1.0));
  CHECK(free.modulus2 == Approx(1.0));
}

TEST_CASE("moduli are exactly one in the oscillatory regime", "[analysis]") {
  // Dyadic-rational inputs where a h^2 < 4; |lambda|^2 collapses to det = 1.
  const double cases[][4] = {
      {1.0, 1.0, 0.25, 2.0}, {1.0, 2.0, 0.5, 1.0}, {2.0, 1.0, 0.25, 1.0}, {1.0, 0.5, 1.0, 4.0}};
  for (const auto& c : cases) {
    auto s = linear_stability_spectrum(c[0], c[1], c[2], c[3]);
    CHECK(std::abs(s.modulus1 - 1.0) < 1e-14);
    CHECK(std::abs(s.modulus2 - 1.0) < 1e-14);
  }
}

TEST_CASE("closed-form moduli agree with a numeric eigenvalue oracle", "[analysis]") {
  oracles::Sampler rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const double mass = rng.uniform(0.5, 3.0);
    const double k = std::pow(10.0, rng.uniform(-1.0, 5.0));
    const double beta = rng.uniform(0.0, 1.0);
    const double h = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const auto moduli = linear_stability_spectrum(mass, k, beta, h);
    const Eigen::Matrix2d m = linear_update_matrix(mass, k, beta, h);
    const auto eigs = Eigen::EigenSolver<Eigen::Matrix2d>(m).eigenvalues();
    const double lo = std::min(std::abs(eigs[0]), std::abs(eigs[1]));
    const double hi = std::max(std::abs(eigs[0]), std::abs(eigs[1]));
    CHECK(std::min(moduli.modulus1, moduli.modulus2) == Approx(lo).margin(1e-9 * hi));
    CHECK(moduli.max_modulus() == Approx(hi).margin(1e-9 * hi));
  }
}

TEST_CASE("update matrix for the unit-circle example", "[analysis]") {
  const Eigen::Matrix2d m = linear_update_matrix(1.0, 1.0, 0.25, 2.0);
  CHECK(m(0, 0) == Approx(0.0).margin(1e-15));
  CHECK(m(0, 1) == Approx(2.0));
  CHECK(m(1, 0) == Approx(-0.5));
  CHECK(m(1, 1) == Approx(0.0).margin(1e-15));
}

TEST_CASE("symplecticity defect of hand-built maps", "[analysis]") {
  // Identity map: defect at finite-difference noise level.
  Stepper identity = [](const PhaseState& s) {
    StepResult r;
    r.state = s;
    return r;
  };
  PhaseState probe;
  probe.q = Vec::Constant(1, 0.3);
  probe.v = Vec::Constant(1, -0.7);
  CHECK(symplecticity_defect(identity, MassMatrix::identity(1), probe) < 1e-10);

  // Scaling map (q, p) -> (2q, p): defect ||2J' - J|| with D = diag(2, 1): sqrt(2).
  Stepper scaling = [](const PhaseState& s) {
    StepResult r;
    r.state = s;
    r.state.q = 2.0 * s.q;
    return r;
  };
  CHECK(symplecticity_defect(scaling, MassMatrix::identity(1), probe) ==
        Approx(std::numbers::sqrt2).margin(1e-6));

  // Exact harmonic rotation flow is symplectic.
  Stepper rotation = [](const PhaseState& s) {
    StepResult r;
    const double c = std::cos(0.3), sn = std::sin(0.3);
    r.state.q = Vec::Constant(1, c * s.q[0] + sn * s.v[0]);
    r.state.v = Vec::Constant(1, -sn * s.q[0] + c * s.v[0]);
    r.state.t = s.t;
    return r;
  };
  CHECK(symplecticity_defect(rotation, MassMatrix::identity(1), probe) < 1e-9);
}

TEST_CASE("symplecticity defects across the integrator family", "[analysis]") {
  auto split = penalty_pendulum(20.0);
  MechanicalSystem flat = split.flatten();
  IntegratorConfig cfg;
  cfg.h = 0.05;
  cfg.beta = 0.4;
  cfg.newton.tol_f = 1e-13;
  cfg.newton.tol_x = 1e-13;

  oracles::Sampler rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    PhaseState s = double_pendulum_rest_state();
    s.q += 0.05 * rng.vector(4);
    s.v = 0.3 * rng.vector(4);

    // Exactly symplectic maps: gradient force field (velocity Verlet) and the
    // fully solved push-forward scheme.
    auto vv = make_velocity_verlet_stepper(flat, cfg);
    CHECK(symplecticity_defect(vv, flat.mass, s, 1e-6) < 1e-6);
    auto pfn = make_pushforward_newmark_stepper(flat, cfg);
    CHECK(symplecticity_defect(pfn, flat.mass, s, 1e-6) < 1e-6);

    // Single-iteration Newmark loses far more symplecticity than the
    // linearized push-forward map at the same settings.
    auto sylipn = make_sylipn_stepper(split, cfg);
    auto linearized = make_linearized_newmark_stepper(flat, cfg);
    const double d_sylipn = symplecticity_defect(sylipn, flat.mass, s, 1e-6);
    const double d_lin = symplecticity_defect(linearized, flat.mass, s, 1e-6);
    CHECK(d_lin > 1e-4);
    CHECK(d_lin > 5.0 * d_sylipn);
  }
}

TEST_CASE("linear-solve maps are symplectic exactly when the hessian is constant", "[analysis]") {
  // Quadratic potential: the linearized force is a gradient field and the
  // defect sits at finite-difference noise level.
  Mat k(2, 2);
  k << 2.0, 0.7, 0.7, 1.3;
  MechanicalSystem quad;
  quad.dof = 2;
  quad.mass = MassMatrix::identity(2);
  quad.potential.value = [k](const Vec& q) { return 0.5 * q.dot(k * q); };
  quad.potential.gradient = [k](const Vec& q) { return Vec(k * q); };
  quad.potential.hessian = [k](const Vec&) { return k; };

  IntegratorConfig cfg;
  cfg.h = 0.5;
  cfg.beta = 0.4;
  auto sylipn = make_sylipn_stepper(quad, cfg);
  PhaseState s;
  s.q = Vec(2);
  s.q << 0.8, -0.4;
  s.v = Vec(2);
  s.v << 0.1, 0.6;
  CHECK(symplecticity_defect(sylipn, quad.mass, s, 1e-6) < 1e-8);

  // On the quartic penalty potential the state-dependent Hessian makes the
  // linearized force a non-gradient field; the defect is dominated by that
  // term and falls off quickly as h shrinks.
  auto split = penalty_pendulum(20.0);
  PhaseState probe = double_pendulum_rest_state();
  probe.q[0] += 0.05;
  probe.v = Vec::Constant(4, 0.3);
  auto defect_at = [&](double h) {
    IntegratorConfig c;
    c.h = h;
    c.beta = 0.4;
    auto st = make_sylipn_stepper(split, c);
    return symplecticity_defect(st, split.base.mass, probe, 1e-6);
  };
  const double coarse = defect_at(0.05);
  const double fine = defect_at(0.0125);
  CHECK(coarse > 1e-3);
  CHECK(fine < 0.05 * coarse);
}

TEST_CASE("trajectory interpolant reproduces cubic motion", "[analysis]") {
  // q(t) = t^3 - t, v = 3t^2 - 1, a = 6t: cubic Hermite is exact.
  Trajectory traj;
  for (int i = 0; i <= 10; ++i) {
    TrajectorySample s;
    s.t = 0.2 * i;
    s.q = Vec::Constant(1, s.t * s.t * s.t - s.t);
    s.v = Vec::Constant(1, 3.0 * s.t * s.t - 1.0);
    traj.samples.push_back(s);
  }
  TrajectoryInterpolant interp(traj, [](const Vec& q) {
    (void)q;
    return Vec::Zero(1).eval();  // unused for q interpolation accuracy below
  });
  TrajectoryInterpolant interp_plain(traj);
  for (double t : {0.037, 0.51, 1.23, 1.999}) {
    const PhaseState s = interp_plain(t);
    CHECK(s.q[0] == Approx(t * t * t - t).margin(1e-12));
  }
  CHECK_THROWS_AS(interp_plain(-0.5), ConfigError);
  CHECK(interp_plain(1.0).q[0] == Approx(0.0).margin(1e-15));  // node hit
}

TEST_CASE("power-law fits are exact on synthetic data", "[analysis]") {
  std::vector<double> h, e2, e3;
  for (double x : {1e-3, 2e-3, 4e-3, 8e-3}) {
    h.push_back(x);
    e2.push_back(x * x);
    e3.push_back(0.5 * x * x * x);
  }
  CHECK(fit_power_law(h, e2).exponent == Approx(2.0).margin(1e-12));
  CHECK(fit_power_law(h, e3).exponent == Approx(3.0).margin(1e-12));
  CHECK(fit_power_law(h, e3).constant() == Approx(0.5).margin(1e-12));

  CHECK(*pairwise_exponent(std::pow(0.9, 2.0) * 1.0, 1.0, 0.9) == Approx(2.0));
  CHECK(*pairwise_exponent(std::pow(0.7, 3.0), 1.0, 0.7) == Approx(3.0));
  CHECK_FALSE(pairwise_exponent(0.0, 1.0, 0.9).has_value());
}

TEST_CASE("convergence scan recovers second order for velocity verlet", "[analysis]") {
  auto sys = harmonic_1d();
  PhaseState ic;
  ic.q = Vec::Constant(1, 1.0);
  ic.v = Vec::Zero(1);

  ReferenceSolution exact = [](double t) {
    PhaseState s;
    s.q = Vec::Constant(1, std::cos(t));
    s.v = Vec::Constant(1, -std::sin(t));
    s.t = t;
    return s;
  };

  auto factory = [&sys](double h) {
    IntegratorConfig cfg;
    cfg.h = h;
    return make_velocity_verlet_stepper(sys, cfg);
  };

  ConvergenceOptions opts;
  opts.t_end = 5.0;
  opts.alpha = 0.9;
  opts.jobs = 2;
  const ConvergenceReport report =
      convergence_scan(factory, ic, exact, {0.02, 0.01, 0.005, 0.0025}, opts);
  CHECK(report.fit.exponent == Approx(2.0).margin(0.1));
  for (const auto& row : report.rows) {
    REQUIRE(row.p.has_value());
    CHECK(*row.p == Approx(2.0).margin(0.35));
  }
}

TEST_CASE("windowed multiplier averaging", "[analysis]") {
  // Constant g = c: lambda_hat = -omega^2 c.
  auto circle = circular_motion();
  Trajectory traj;
  for (int i = 0; i <= 100; ++i) {
    TrajectorySample s;
    s.t = 0.01 * i;
    s.q = Vec(2);
    s.q << 2.0, 0.0;  // g = 3 everywhere
    s.v = Vec::Zero(2);
    traj.samples.push_back(s);
  }
  const double omega = 10.0;
  const MultiplierSeries series = equivalent_multiplier(traj, circle.constraints, omega, 0.2, 5);
  REQUIRE(!series.times.empty());
  for (const auto& lam : series.values) CHECK(lam[0] == Approx(-omega * omega * 3.0));

  // Linearity: scaling g by c scales lambda_hat by c.
  ConstraintSet scaled = circle.constraints;
  scaled.g = [base = circle.constraints.g](const Vec& q) { return Vec(2.5 * base(q)); };
  const MultiplierSeries series2 = equivalent_multiplier(traj, scaled, omega, 0.2, 5);
  for (std::size_t i = 0; i < series.values.size(); ++i)
    CHECK(series2.values[i][0] == Approx(2.5 * series.values[i][0]));

  // g identically zero on the window: lambda_hat = 0.
  Trajectory on_manifold = traj;
  for (auto& s : on_manifold.samples) s.q << 1.0, 0.0;
  const MultiplierSeries zero = equivalent_multiplier(on_manifold, circle.constraints, omega, 0.2, 5);
  for (const auto& lam : zero.values) CHECK(lam[0] == Approx(0.0).margin(1e-12));
}

TEST_CASE("multiplier averaging rejects too-coarse recordings", "[analysis]") {
  auto circle = circular_motion();
  Trajectory traj;
  for (int i = 0; i <= 10; ++i) {
    TrajectorySample s;
    s.t = 0.5 * i;  // spacing 0.5 cannot resolve a 0.2 window with 5 samples
    s.q = circle_default_state().q;
    s.v = Vec::Zero(2);
    traj.samples.push_back(s);
  }
  CHECK_THROWS_AS(equivalent_multiplier(traj, circle.constraints, 20.0, 0.2, 5), ConfigError);
}

TEST_CASE("constraint scaling scan is zero for a linear constraint on the manifold",
          "[analysis]") {
  // Free particle with affine constraint g = y, moving along x.
  MechanicalSystem sys;
  sys.dof = 2;
  sys.mass = MassMatrix::identity(2);
  sys.potential = Potential::zero(2);
  ConstraintSet cons;
  cons.count = 1;
  cons.g = [](const Vec& q) { return Vec(q.tail(1)); };
  cons.jacobian = [](const Vec&) {
    Mat j(1, 2);
    j << 0.0, 1.0;
    return j;
  };
  cons.weighted_hessian = [](const Vec&, const Vec&) { return Mat::Zero(2, 2).eval(); };

  PhaseState ic;
  ic.q = Vec::Zero(2);
  ic.v = Vec::Zero(2);
  ic.v[0] = 1.0;

  auto factory = [&](double omega) {
    auto split = build_penalty_system(sys, cons, omega);
    IntegratorConfig cfg;
    cfg.h = 0.05;
    return make_sylipn_stepper(split, cfg);
  };
  const auto rows = constraint_scaling_scan(factory, cons, ic, {10.0, 40.0, 160.0}, 0.05, 2.0, 2);
  for (const auto& r : rows) CHECK(r.scaled_violation == Approx(0.0).margin(1e-12));
}

TEST_CASE("energy drift diagnostics", "[analysis]") {
  std::vector<double> t, flat_e, cos_e, sin_e;
  for (int i = 0; i <= 1000; ++i) {
    t.push_back(0.01 * i);
    flat_e.push_back(2.5);
    cos_e.push_back(std::cos(2.0 * std::numbers::pi * t.back()));
    sin_e.push_back(std::sin(2.0 * std::numbers::pi * t.back()));
  }
  const EnergyDrift flat = energy_drift(synthetic_energy_series(t, flat_e));
  CHECK(flat.max_abs_deviation == 0.0);
  CHECK(flat.trend_slope == Approx(0.0).margin(1e-14));

  // Cosine over whole periods is uncorrelated with time: slope ~ 0; its
  // deviation from E(0) = 1 spans the full oscillation.
  const EnergyDrift wave = energy_drift(synthetic_energy_series(t, cos_e));
  CHECK(std::abs(wave.trend_slope) < 1e-3);
  CHECK(wave.max_abs_deviation == Approx(2.0).epsilon(0.01));

  // Sine from E(0) = 0 deviates by exactly the amplitude.
  const EnergyDrift swave = energy_drift(synthetic_energy_series(t, sin_e));
  CHECK(swave.max_abs_deviation == Approx(1.0).epsilon(0.01));
}

TEST_CASE("oo radial histogram basics", "[analysis]") {
  // Hand-built two-molecule trajectory: oxygens at distance 2 for all samples.
  auto frame = [](double d) {
    TrajectorySample s;
    s.t = 1.0;
    s.q = Vec::Zero(18);
    s.q.segment<3>(3) << 0.0, 0.0, 0.0;   // O of molecule 0
    s.q.segment<3>(12) << d, 0.0, 0.0;    // O of molecule 1
    return s;
  };
  Trajectory traj;
  traj.samples.push_back(frame(2.0));
  const Histogram single = oo_radial_histogram(traj, 2, 0.0, 100, 4.0);
  CHECK(single.mass[single.peak_bin()] == Approx(1.0));
  CHECK(single.bin_center(single.peak_bin()) == Approx(2.0).margin(single.bin_width()));

  Trajectory two;
  two.samples.push_back(frame(1.0));
  two.samples.push_back(frame(3.0));
  const Histogram pair = oo_radial_histogram(two, 2, 0.0, 100, 4.0);
  int nonzero = 0;
  for (double m : pair.mass)
    if (m > 0.0) {
      CHECK(m == Approx(0.5));
      ++nonzero;
    }
  CHECK(nonzero == 2);

  CHECK_THROWS_AS(oo_radial_histogram(traj, 2, 5.0, 100), ConfigError);  // nothing past t_min
}

TEST_CASE("first peak localization is noise robust and picks the first maximum", "[analysis]") {
  Histogram hist;
  hist.r_min = 0.0;
  hist.r_max = 10.0;
  hist.mass.assign(200, 0.0);
  // Two peaks: a smaller one near r = 2.5 and a larger one near r = 7.5, with
  // bin-level jitter on top.
  for (int i = 0; i < 200; ++i) {
    const double r = hist.bin_center(i);
    hist.mass[i] = 0.6 * std::exp(-8.0 * (r - 2.5) * (r - 2.5)) +
                   1.0 * std::exp(-8.0 * (r - 7.5) * (r - 7.5)) +
                   0.02 * ((i * 2654435761u >> 13) % 7) / 7.0;
  }
  const int peak = first_peak_bin(hist);
  CHECK(hist.bin_center(peak) == Approx(2.5).margin(0.3));
  CHECK(peak != hist.peak_bin());  // the global maximum is the second peak
}
