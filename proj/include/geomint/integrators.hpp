#pragma once

// One-step update maps: velocity Verlet, Newmark (full and single-iteration),
// push-forward Newmark, the linearized push-forward family (one symmetric
// linear solve per step), SHAKE, and the Langevin composition with an exact
// Ornstein-Uhlenbeck momentum flow. All steppers share one stepping
// interface so analysis tools and the CLI treat them uniformly.
//
// A stepper's output depends only on the input state (and its seeded noise
// stream), but instances carry a small acceleration cache and copies share
// it: create one stepper per concurrent trajectory.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

#include "geomint/core.hpp"
#include "geomint/solvers.hpp"
#include "geomint/stochastic.hpp"

namespace geomint {

inline constexpr double kNewmarkGamma = 0.5;  // second-order member of the family

struct IntegratorConfig {
  double h = 0.01;
  double beta = 0.4;
  bool stiff_only_hessian = false;  // linearize only the stiff part of a split system
  NewtonOptions newton{};

  void validate() const {
    // Negative h is allowed for the time-reversed map; zero is not.
    if (h == 0.0 || !std::isfinite(h)) throw ConfigError("IntegratorConfig: h must be nonzero");
    if (beta < 0.0) throw ConfigError("IntegratorConfig: beta must be nonnegative");
  }
};

struct LangevinConfig {
  double friction = 0.0;         // gamma >= 0
  double inv_temperature = 1.0;  // thermodynamic beta > 0
  std::uint64_t seed = 0;

  void validate() const {
    if (friction < 0.0) throw ConfigError("LangevinConfig: friction must be nonnegative");
    if (!(inv_temperature > 0.0)) throw ConfigError("LangevinConfig: inv_temperature must be positive");
  }
};

struct StepResult {
  PhaseState state;
  int newton_iters = 0;
  int linear_solves = 0;
  bool constraint_warning = false;
  std::optional<Vec> recorded_velocity;  // diagnostic velocity (central difference for SHAKE)
  std::optional<Vec> multiplier;         // per-step constraint-force multiplier (SHAKE)

  /// Solver effort of this step, for the trajectory CSV column.
  int solver_iters() const { return std::max(newton_iters, linear_solves); }
};

using Stepper = std::function<StepResult(const PhaseState&)>;

inline Vec explicit_accel(const MechanicalSystem& sys, const Vec& q) {
  return sys.mass.solve(-sys.potential.gradient(q));
}

namespace detail {

struct AccelCache {
  Vec x;
  Vec a;
  bool has = false;

  const Vec* lookup(const Vec& q) const { return has && same_vector(x, q) ? &a : nullptr; }
  void store(Vec q, Vec accel) {
    x = std::move(q);
    a = std::move(accel);
    has = true;
  }
};

}  // namespace detail

/// x' = x + h v + h^2/2 a(x); v' = v + h/2 (a(x) + a(x')). One gradient
/// evaluation per step in steady state (a(x') is reused as the next a(x)).
inline Stepper make_velocity_verlet_stepper(MechanicalSystem sys, IntegratorConfig cfg) {
  cfg.validate();
  auto cache = std::make_shared<detail::AccelCache>();
  return [sys = std::move(sys), cfg, cache](const PhaseState& s) -> StepResult {
    const double h = cfg.h;
    const Vec* hit = cache->lookup(s.q);
    const Vec a0 = hit ? *hit : explicit_accel(sys, s.q);
    Vec x1 = s.q + h * s.v + (0.5 * h * h) * a0;
    Vec a1 = explicit_accel(sys, x1);
    Vec v1 = s.v + (0.5 * h) * (a0 + a1);
    cache->store(x1, a1);
    StepResult out;
    out.state = {std::move(x1), std::move(v1), s.t + h};
    return out;
  };
}

namespace detail {

/// Shared Newmark machinery. With full_solve the implicit position equation
/// is solved to tolerance; otherwise exactly one (undamped) Newton iteration
/// is taken, which destroys symplecticity on nonlinear systems.
inline Stepper make_newmark_family_stepper(MechanicalSystem sys, IntegratorConfig cfg,
                                           bool full_solve) {
  cfg.validate();
  auto cache = std::make_shared<detail::AccelCache>();
  return [sys = std::move(sys), cfg, cache, full_solve](const PhaseState& s) -> StepResult {
    const double h = cfg.h;
    const double beta = cfg.beta;
    const Vec* hit = cache->lookup(s.q);
    const Vec a_k = hit ? *hit : explicit_accel(sys, s.q);

    // q_{k+1} = q_k + h v_k + h^2/2 [(1-2b) a_k + 2b a_{k+1}],
    // a_{k+1} = -M^-1 grad V(q_{k+1}). Multiplying by M gives the residual
    // r(q) = M (q - q_k - h v_k - h^2/2 (1-2b) a_k) + b h^2 grad V(q).
    const Vec drift = s.q + h * s.v + (0.5 * h * h) * ((1.0 - 2.0 * beta) * a_k);
    auto residual = [&sys, &drift, beta, h](const Vec& q) {
      return Vec(sys.mass.apply(q - drift) + (beta * h * h) * sys.potential.gradient(q));
    };
    auto jacobian = [&sys, beta, h](const Vec& q) {
      Mat j = (beta * h * h) * sys.potential.hessian_at(q);
      sys.mass.add_to(j);
      return j;
    };

    const Vec guess = s.q + h * s.v + (0.5 * h * h) * ((1.0 - 2.0 * beta) * a_k + 2.0 * beta * a_k);
    NewtonOptions opts = cfg.newton;
    if (!full_solve) {
      opts.max_iter = 1;
      opts.max_halvings = 0;
    }
    NewtonReport rep = newton_solve(residual, jacobian, guess, opts);
    if (full_solve && !rep.converged)
      throw SolverError("newmark step: Newton did not converge (residual " +
                        std::to_string(rep.final_residual) + ")");

    Vec x1 = std::move(rep.solution);
    Vec a1 = explicit_accel(sys, x1);
    Vec v1 = s.v + h * ((1.0 - kNewmarkGamma) * a_k + kNewmarkGamma * a1);
    cache->store(x1, a1);
    StepResult out;
    out.state = {std::move(x1), std::move(v1), s.t + h};
    out.newton_iters = rep.iterations;
    out.linear_solves = rep.iterations;  // one factorization per Newton iteration
    return out;
  };
}

}  // namespace detail

inline Stepper make_newmark_stepper(MechanicalSystem sys, IntegratorConfig cfg) {
  return detail::make_newmark_family_stepper(std::move(sys), cfg, /*full_solve=*/true);
}

/// Newmark with the nonlinear system solved to the first iteration only.
inline Stepper make_linearized_newmark_stepper(MechanicalSystem sys, IntegratorConfig cfg) {
  return detail::make_newmark_family_stepper(std::move(sys), cfg, /*full_solve=*/false);
}

/// Push-forward Newmark: a_k solves a = -M^-1 grad V(x_k + b h^2 a), then the
/// usual Verlet-shaped position/velocity updates. One nonlinear solve per
/// step in steady state (a_{k+1} is cached for the next step).
inline Stepper make_pushforward_newmark_stepper(MechanicalSystem sys, IntegratorConfig cfg) {
  cfg.validate();
  auto cache = std::make_shared<detail::AccelCache>();
  return [sys = std::move(sys), cfg, cache](const PhaseState& s) -> StepResult {
    const double h = cfg.h;
    const double bh2 = cfg.beta * h * h;
    int iters = 0;

    auto solve_accel = [&](const Vec& x, const Vec& guess) {
      auto residual = [&sys, &x, bh2](const Vec& a) {
        return Vec(sys.mass.apply(a) + sys.potential.gradient(x + bh2 * a));
      };
      auto jacobian = [&sys, &x, bh2](const Vec& a) {
        Mat j = bh2 * sys.potential.hessian_at(x + bh2 * a);
        sys.mass.add_to(j);
        return j;
      };
      NewtonReport rep = newton_solve(residual, jacobian, guess, cfg.newton);
      if (!rep.converged)
        throw SolverError("push-forward newmark: inner solve did not converge (residual " +
                          std::to_string(rep.final_residual) + ")");
      iters += rep.iterations;
      return rep.solution;
    };

    const Vec* hit = cache->lookup(s.q);
    const Vec a0 = hit ? *hit : solve_accel(s.q, explicit_accel(sys, s.q));
    Vec x1 = s.q + h * s.v + (0.5 * h * h) * a0;
    Vec a1 = solve_accel(x1, a0);
    Vec v1 = s.v + (0.5 * h) * (a0 + a1);
    cache->store(x1, a1);
    StepResult out;
    out.state = {std::move(x1), std::move(v1), s.t + h};
    out.newton_iters = iters;
    out.linear_solves = iters;
    return out;
  };
}

namespace detail {

/// Builds the linearized-push-forward acceleration map
///   a(x) = -(M + b h^2 H(x))^-1 grad V(x)
/// where H is either the full Hessian or, for split systems in stiff-only
/// mode, inv_eps * Hess V1 (with the full gradient kept on the right side).
inline Stepper make_linearized_pushforward_stepper(
    MassMatrix mass, std::function<Vec(const Vec&, int&)> accel_fn, double h) {
  auto cache = std::make_shared<detail::AccelCache>();
  return [mass = std::move(mass), accel_fn = std::move(accel_fn), h,
          cache](const PhaseState& s) -> StepResult {
    int solves = 0;
    const Vec* hit = cache->lookup(s.q);
    const Vec a0 = hit ? *hit : accel_fn(s.q, solves);
    Vec x1 = s.q + h * s.v + (0.5 * h * h) * a0;
    Vec a1 = accel_fn(x1, solves);
    Vec v1 = s.v + (0.5 * h) * (a0 + a1);
    cache->store(x1, a1);
    StepResult out;
    out.state = {std::move(x1), std::move(v1), s.t + h};
    out.linear_solves = solves;
    return out;
  };
}

}  // namespace detail

/// Linearized push-forward Newmark on a plain system: one symmetric linear
/// solve with coefficient matrix M + beta h^2 Hess V(x) per step.
inline Stepper make_sylipn_stepper(MechanicalSystem sys, IntegratorConfig cfg) {
  cfg.validate();
  const double bh2 = cfg.beta * cfg.h * cfg.h;
  auto accel = [sys, bh2](const Vec& x, int& solves) {
    Mat coeff = bh2 * sys.potential.hessian_at(x);
    sys.mass.add_to(coeff);
    ++solves;
    return solve_symmetric(coeff, -sys.potential.gradient(x)).solution;
  };
  return detail::make_linearized_pushforward_stepper(sys.mass, accel, cfg.h);
}

/// Linearized push-forward Newmark on a split system. With
/// cfg.stiff_only_hessian the coefficient matrix keeps only the stiff
/// Hessian, M + beta h^2 inv_eps Hess V1(x); when the stiff Hessian is block
/// diagonal (and the mass diagonal) the solve runs block by block.
inline Stepper make_sylipn_stepper(StiffSplitSystem sys, IntegratorConfig cfg) {
  cfg.validate();
  const double bh2 = cfg.beta * cfg.h * cfg.h;
  const int n = sys.dof();
  std::function<Vec(const Vec&, int&)> accel;

  if (!cfg.stiff_only_hessian) {
    accel = [sys, bh2](const Vec& x, int& solves) {
      Mat coeff = bh2 * sys.total_hessian(x);
      sys.base.mass.add_to(coeff);
      ++solves;
      return solve_symmetric(coeff, -sys.total_gradient(x)).solution;
    };
  } else if (sys.stiff_block_size > 0 && sys.base.mass.is_diagonal() &&
             n % sys.stiff_block_size == 0) {
    const int bs = sys.stiff_block_size;
    accel = [sys, bh2, bs, n](const Vec& x, int& solves) {
      const Vec rhs = -sys.total_gradient(x);
      const Vec& mdiag = sys.base.mass.diagonal_entries();
      Vec a(n);
      const double scale = bh2 * sys.inv_eps;
      Mat full;  // fallback when no per-block evaluator is attached
      if (!sys.stiff_block_hessian) full = sys.stiff.hessian_at(x);
      for (int b = 0; b * bs < n; ++b) {
        Mat blk = sys.stiff_block_hessian ? Mat(scale * sys.stiff_block_hessian(x, b))
                                          : Mat(scale * full.block(b * bs, b * bs, bs, bs));
        blk.diagonal() += mdiag.segment(b * bs, bs);
        a.segment(b * bs, bs) = SymmetricIndefiniteFactor(blk).solve(rhs.segment(b * bs, bs));
      }
      ++solves;
      return a;
    };
  } else {
    accel = [sys, bh2](const Vec& x, int& solves) {
      Mat coeff = (bh2 * sys.inv_eps) * sys.stiff.hessian_at(x);
      sys.base.mass.add_to(coeff);
      ++solves;
      return solve_symmetric(coeff, -sys.total_gradient(x)).solution;
    };
  }
  return detail::make_linearized_pushforward_stepper(sys.base.mass, accel, cfg.h);
}

/// SHAKE: Verlet position update projected back onto the constraint manifold
/// by a Lagrange-multiplier solve. The state velocity follows the leapfrog
/// convention v_k = (q_k - q_{k-1})/h, which makes the two-register
/// recursion (with bootstrap q_{-1} = q_0 - h v_0) a pure map on (q, v) and
/// lets momentum kicks compose with it. The recorded diagnostic velocity is
/// the central difference (q_{k+1} - q_{k-1})/(2h). The returned multiplier
/// is scaled so the applied constraint force is (grad g)^T lambda in
/// M qdd = -grad V + (grad g)^T lambda.
inline Stepper make_shake_stepper(MechanicalSystem base, ConstraintSet constraints,
                                  IntegratorConfig cfg) {
  cfg.validate();
  if (constraints.count <= 0 || constraints.count > base.dof)
    throw ConfigError("shake: constraint count must be in [1, dof]");
  return [base = std::move(base), constraints = std::move(constraints),
          cfg](const PhaseState& s) -> StepResult {
    const double h = cfg.h;
    const int m = constraints.count;
    const Vec q_prev = s.q - h * s.v;
    const Vec q_free = s.q + h * s.v - (h * h) * base.mass.solve(base.potential.gradient(s.q));
    const Mat jac_k = constraints.jacobian(s.q);
    Mat gain(base.dof, m);  // h^2 M^-1 (grad g)^T
    for (int c = 0; c < m; ++c) gain.col(c) = (h * h) * base.mass.solve(jac_k.row(c).transpose());

    auto residual = [&](const Vec& lambda) { return constraints.g(q_free + gain * lambda); };
    auto jacobian = [&](const Vec& lambda) {
      return Mat(constraints.jacobian(q_free + gain * lambda) * gain);
    };
    NewtonReport rep = newton_solve(residual, jacobian, Vec::Zero(m), cfg.newton);
    if (!rep.converged)
      throw SolverError("shake: multiplier solve did not converge (residual " +
                        std::to_string(rep.final_residual) + ")");

    Vec q1 = q_free + gain * rep.solution;
    StepResult out;
    out.state = {q1, Vec((q1 - s.q) / h), s.t + h};
    out.newton_iters = rep.iterations;
    out.linear_solves = rep.iterations;
    out.recorded_velocity = Vec((q1 - q_prev) / (2.0 * h));
    out.multiplier = rep.solution;
    out.constraint_warning = constraints.g(q1).lpNorm<Eigen::Infinity>() > 1e-6;
    return out;
  };
}

/// Geometric Langevin step: exact Ornstein-Uhlenbeck flow on the momenta
/// p = M v over one step, p <- e^{-gamma M^-1 h} p + xi with
/// xi ~ N(0, beta^-1 M (I - e^{-2 gamma M^-1 h})), composed with one
/// deterministic step (OU first). friction = 0 reduces to the inner step.
inline Stepper make_gla_stepper(Stepper inner, MassMatrix mass, IntegratorConfig cfg,
                                LangevinConfig langevin) {
  cfg.validate();
  langevin.validate();
  if (langevin.friction == 0.0) return inner;  // OU flow is the identity
  const int n = mass.dim();
  auto rng = std::make_shared<RngStream>(langevin.seed);

  // Eigenbasis of M (identity transform in the diagonal case).
  Vec masses;
  Mat basis;
  if (mass.is_diagonal()) {
    masses = mass.diagonal_entries();
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> eig(mass.matrix());
    masses = eig.eigenvalues();
    basis = eig.eigenvectors();
  }
  Vec decay(n), noise_std(n);
  for (int i = 0; i < n; ++i) {
    const double rate = langevin.friction * cfg.h / masses[i];
    decay[i] = std::exp(-rate);
    noise_std[i] = std::sqrt(masses[i] / langevin.inv_temperature * (1.0 - std::exp(-2.0 * rate)));
  }

  return [inner = std::move(inner), mass = std::move(mass), rng, basis, masses, decay, noise_std,
          n](const PhaseState& s) -> StepResult {
    Vec p = mass.apply(s.v);
    Vec y = basis.size() > 0 ? Vec(basis.transpose() * p) : p;
    const Vec xi = gaussian_vector(*rng, n, Vec::Zero(n), noise_std);
    y = decay.cwiseProduct(y) + xi;
    p = basis.size() > 0 ? Vec(basis * y) : y;
    PhaseState kicked{s.q, mass.solve(p), s.t};
    return inner(kicked);
  };
}

struct RunOptions {
  long record_stride = 1;
  const ConstraintSet* constraints = nullptr;  // enables the g-norm diagnostic
  // Return the partial trajectory (with failed_step set) instead of throwing
  // when a step fails.
  bool stop_on_error = false;
};

/// Repeated stepping with diagnostics recorded every record_stride steps.
/// Deterministic: identical inputs (and seeds) give bitwise-identical
/// trajectories. Step failures are rethrown as StepError with the step index.
template <class SystemT>
Trajectory run_trajectory(const Stepper& stepper, const SystemT& system, PhaseState initial,
                          double t_end, const IntegratorConfig& cfg, RunOptions opts = {}) {
  cfg.validate();
  if (!(cfg.h > 0.0)) throw ConfigError("run_trajectory: h must be positive");
  if (!initial.valid()) throw ConfigError("run_trajectory: invalid initial state");
  if (t_end < initial.t) throw ConfigError("run_trajectory: t_end before initial time");
  if (opts.record_stride < 1) throw ConfigError("run_trajectory: record_stride must be >= 1");

  const double t0 = initial.t;
  const long n_steps = std::llround((t_end - t0) / cfg.h);

  Trajectory traj;
  traj.samples.reserve(static_cast<std::size_t>(n_steps / opts.record_stride) + 2);

  auto record = [&](const PhaseState& state, const std::optional<Vec>& diag_v, int iters) {
    TrajectorySample s;
    s.t = state.t;
    s.q = state.q;
    s.v = diag_v ? *diag_v : state.v;
    PhaseState for_energy{s.q, s.v, s.t};
    s.energy = total_energy(system, for_energy);
    if (opts.constraints) s.constraint_norm = opts.constraints->g(s.q).norm();
    s.solver_iters = iters;
    const bool finite = std::isfinite(s.energy);
    traj.samples.push_back(std::move(s));
    return finite;
  };

  record(initial, std::nullopt, 0);
  PhaseState state = std::move(initial);
  for (long k = 0; k < n_steps; ++k) {
    StepResult r;
    try {
      r = stepper(state);
      if (!r.state.valid()) throw SolverError("non-finite state");
    } catch (const Error& e) {
      if (opts.stop_on_error) {
        traj.failed_step = k;
        if (traj.samples.empty() || traj.samples.back().t < state.t)
          record(state, std::nullopt, 0);
        return traj;
      }
      throw StepError(k, state.t, e.what());
    }
    state = std::move(r.state);
    state.t = t0 + static_cast<double>(k + 1) * cfg.h;  // avoid accumulated roundoff
    traj.step_count += 1;
    traj.newton_iter_total += r.newton_iters;
    traj.linear_solve_total += r.linear_solves;
    if (r.constraint_warning) traj.constraint_warnings += 1;
    if (r.multiplier) traj.multipliers.emplace_back(state.t, *r.multiplier);
    if ((k + 1) % opts.record_stride == 0 || k + 1 == n_steps) {
      const bool finite = record(state, r.recorded_velocity, r.solver_iters());
      if (!finite && opts.stop_on_error) {
        // energy left the representable range (overflow blowup)
        traj.samples.pop_back();
        traj.failed_step = k;
        return traj;
      }
    }
  }
  return traj;
}

}  // namespace geomint
