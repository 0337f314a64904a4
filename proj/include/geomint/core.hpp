#pragma once

// Domain types for mechanical systems: phase states, mass matrices,
// potentials, holonomic constraints, penalty construction and trajectories.
// Everything here is immutable after construction and safe to share across
// concurrent runs; evaluation callbacks must be pure.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace geomint {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad dimensions, bad flags, inconsistent setup.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Linear or nonlinear solve failed (singular matrix, no convergence).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Potential/constraint evaluation failed (e.g. coincident atoms).
class EvalError : public Error {
 public:
  using Error::Error;
};

/// A trajectory step failed; carries the step index where it happened.
class StepError : public Error {
 public:
  StepError(long step_index, double time, const std::string& what)
      : Error("step " + std::to_string(step_index) + " (t=" + std::to_string(time) + "): " + what),
        step_index(step_index),
        time(time) {}
  long step_index;
  double time;
};

inline bool same_vector(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

/// Positions, velocities and time of one trajectory point.
struct PhaseState {
  Vec q;
  Vec v;
  double t = 0.0;

  int dof() const { return static_cast<int>(q.size()); }

  bool valid() const {
    return q.size() > 0 && q.size() == v.size() && q.allFinite() && v.allFinite() &&
           std::isfinite(t);
  }
};

/// Constant symmetric positive-definite mass matrix, stored either as a
/// diagonal or as a dense matrix (prefactored with Cholesky).
class MassMatrix {
 public:
  static MassMatrix identity(int n) {
    if (n <= 0) throw ConfigError("MassMatrix: dimension must be positive");
    MassMatrix m;
    m.diag_ = Vec::Ones(n);
    return m;
  }

  static MassMatrix diagonal(Vec d) {
    if (d.size() == 0) throw ConfigError("MassMatrix: empty diagonal");
    if ((d.array() <= 0.0).any()) throw ConfigError("MassMatrix: diagonal entries must be positive");
    MassMatrix m;
    m.diag_ = std::move(d);
    return m;
  }

  static MassMatrix dense(const Mat& m) {
    if (m.rows() == 0 || m.rows() != m.cols()) throw ConfigError("MassMatrix: matrix must be square");
    MassMatrix out;
    out.dense_ = 0.5 * (m + m.transpose());
    out.llt_.compute(out.dense_);
    if (out.llt_.info() != Eigen::Success)
      throw ConfigError("MassMatrix: matrix is not positive definite");
    return out;
  }

  int dim() const { return is_diagonal() ? static_cast<int>(diag_.size()) : static_cast<int>(dense_.rows()); }
  bool is_diagonal() const { return diag_.size() > 0; }

  /// Diagonal entries; only valid in diagonal mode.
  const Vec& diagonal_entries() const {
    if (!is_diagonal()) throw ConfigError("MassMatrix: not diagonal");
    return diag_;
  }

  Mat matrix() const { return is_diagonal() ? Mat(diag_.asDiagonal()) : dense_; }

  Vec apply(const Vec& x) const {
    check(x);
    return is_diagonal() ? Vec(diag_.cwiseProduct(x)) : Vec(dense_ * x);
  }

  Vec solve(const Vec& rhs) const {
    check(rhs);
    return is_diagonal() ? Vec(rhs.cwiseQuotient(diag_)) : Vec(llt_.solve(rhs));
  }

  double kinetic_energy(const Vec& v) const { return 0.5 * v.dot(apply(v)); }

  /// a += M
  void add_to(Mat& a) const {
    if (a.rows() != dim() || a.cols() != dim()) throw ConfigError("MassMatrix: dimension mismatch");
    if (is_diagonal())
      a.diagonal() += diag_;
    else
      a += dense_;
  }

 private:
  void check(const Vec& x) const {
    if (x.size() != dim()) throw ConfigError("MassMatrix: dimension mismatch");
  }

  Vec diag_;
  Mat dense_;
  Eigen::LLT<Mat> llt_;
};

namespace fd {

/// Central-difference gradient of a scalar function.
inline Vec gradient(const std::function<double(const Vec&)>& f, const Vec& q,
                    double base_step = 1e-5) {
  Vec g(q.size());
  Vec p = q;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double step = std::max(base_step, 1e-7 * std::abs(q[i]));
    const double qi = q[i];
    p[i] = qi + step;
    const double fp = f(p);
    p[i] = qi - step;
    const double fm = f(p);
    p[i] = qi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Central-difference Jacobian of a vector function.
inline Mat jacobian(const std::function<Vec(const Vec&)>& f, const Vec& q,
                    double base_step = 1e-5) {
  Vec p = q;
  Mat j;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double step = std::max(base_step, 1e-7 * std::abs(q[i]));
    const double qi = q[i];
    p[i] = qi + step;
    const Vec fp = f(p);
    p[i] = qi - step;
    const Vec fm = f(p);
    p[i] = qi;
    if (j.size() == 0) j.resize(fp.size(), q.size());
    j.col(i) = (fp - fm) / (2.0 * step);
  }
  return j;
}

/// Hessian synthesized from central differences of a gradient, symmetrized.
/// Step per coordinate is max(base_step, 1e-7*|q_i|).
inline Mat hessian_of_gradient(const std::function<Vec(const Vec&)>& grad, const Vec& q,
                               double base_step = 1e-5) {
  Mat h = jacobian(grad, q, base_step);
  return 0.5 * (h + h.transpose());
}

}  // namespace fd

/// Potential energy with value, gradient and Hessian callbacks. The Hessian
/// callback may be left empty, in which case it is synthesized by central
/// finite differences of the gradient.
struct Potential {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;  // optional; empty -> finite differences

  /// Hessian at q, symmetrized as (H + H^T)/2 before use.
  Mat hessian_at(const Vec& q) const {
    Mat h = hessian ? hessian(q) : fd::hessian_of_gradient(gradient, q);
    return 0.5 * (h + h.transpose());
  }

  static Potential zero(int n) {
    Potential p;
    p.value = [](const Vec&) { return 0.0; };
    p.gradient = [n](const Vec& q) {
      if (q.size() != n) throw ConfigError("Potential: dimension mismatch");
      return Vec::Zero(n).eval();
    };
    p.hessian = [n](const Vec&) { return Mat::Zero(n, n).eval(); };
    return p;
  }
};

/// Holonomic constraint map g(q) = 0 with its Jacobian. `weighted_hessian`
/// returns sum_i w_i Hess g_i(q); if left empty it is synthesized by central
/// finite differences of the Jacobian.
struct ConstraintSet {
  int count = 0;  // number of constraint rows m (m <= n)
  std::function<Vec(const Vec&)> g;
  std::function<Mat(const Vec&)> jacobian;
  std::function<Mat(const Vec&, const Vec&)> weighted_hessian;

  Mat weighted_hessian_at(const Vec& q, const Vec& w) const {
    if (weighted_hessian) {
      Mat h = weighted_hessian(q, w);
      return 0.5 * (h + h.transpose());
    }
    auto contracted = [this, &w](const Vec& x) { return Vec(jacobian(x).transpose() * w); };
    return fd::hessian_of_gradient(contracted, q);
  }

  double norm(const Vec& q) const { return g(q).norm(); }
};

/// Mass matrix plus potential: M qdd = -grad V(q).
struct MechanicalSystem {
  MassMatrix mass;
  Potential potential;
  int dof = 0;
};

/// Potential split into a soft part V0 and a stiff part V1 scaled by
/// inv_eps, so V_total = V0 + inv_eps * V1. Penalty systems use
/// inv_eps = omega^2, V1 = 1/2 g^T g.
struct StiffSplitSystem {
  MechanicalSystem base;  // soft part V0
  Potential stiff;        // V1
  double inv_eps = 0.0;
  // When > 0, the stiff Hessian is block diagonal with square blocks of this
  // size (per-molecule penalty terms); the simplified integrator exploits it.
  int stiff_block_size = 0;
  // Optional direct evaluator for one stiff Hessian diagonal block; avoids
  // assembling the full matrix on the block-solve fast path.
  std::function<Mat(const Vec&, int)> stiff_block_hessian;

  int dof() const { return base.dof; }

  double total_value(const Vec& q) const { return base.potential.value(q) + inv_eps * stiff.value(q); }

  Vec total_gradient(const Vec& q) const {
    return base.potential.gradient(q) + inv_eps * stiff.gradient(q);
  }

  Mat total_hessian(const Vec& q) const {
    return base.potential.hessian_at(q) + inv_eps * stiff.hessian_at(q);
  }

  /// View as a plain mechanical system with the combined potential.
  MechanicalSystem flatten() const {
    MechanicalSystem out;
    out.mass = base.mass;
    out.dof = base.dof;
    StiffSplitSystem copy = *this;
    out.potential.value = [copy](const Vec& q) { return copy.total_value(q); };
    out.potential.gradient = [copy](const Vec& q) { return copy.total_gradient(q); };
    out.potential.hessian = [copy](const Vec& q) { return copy.total_hessian(q); };
    return out;
  }
};

/// Replace constraints g(q)=0 by the stiff potential (omega^2/2) g^T g.
/// The stiff part exposes value 1/2 g^T g, gradient (grad g)^T g and Hessian
/// (grad g)^T (grad g) [+ sum_i g_i Hess g_i unless dropped]; near the
/// constraint manifold g = O(omega^-2), so the curvature term may be dropped.
inline StiffSplitSystem build_penalty_system(const MechanicalSystem& base,
                                             const ConstraintSet& constraints, double omega,
                                             bool include_constraint_curvature = true) {
  if (omega <= 0.0) throw ConfigError("build_penalty_system: omega must be positive");
  if (constraints.count <= 0 || constraints.count > base.dof)
    throw ConfigError("build_penalty_system: constraint count must be in [1, dof]");

  const int n = base.dof;
  const int m = constraints.count;
  ConstraintSet cons = constraints;
  auto checked_g = [cons, n, m](const Vec& q) {
    if (q.size() != n) throw ConfigError("penalty system: state dimension mismatch");
    Vec gv = cons.g(q);
    if (gv.size() != m) throw ConfigError("penalty system: constraint dimension mismatch");
    return gv;
  };

  StiffSplitSystem out;
  out.base = base;
  out.inv_eps = omega * omega;
  out.stiff.value = [checked_g](const Vec& q) {
    const Vec gv = checked_g(q);
    return 0.5 * gv.squaredNorm();
  };
  out.stiff.gradient = [checked_g, cons](const Vec& q) {
    return Vec(cons.jacobian(q).transpose() * checked_g(q));
  };
  out.stiff.hessian = [checked_g, cons, include_constraint_curvature](const Vec& q) {
    const Mat j = cons.jacobian(q);
    Mat h = j.transpose() * j;
    if (include_constraint_curvature) h += cons.weighted_hessian_at(q, checked_g(q));
    return h;
  };
  return out;
}

inline double total_energy(const MechanicalSystem& system, const PhaseState& state) {
  if (state.dof() != system.dof) throw ConfigError("total_energy: dimension mismatch");
  return system.mass.kinetic_energy(state.v) + system.potential.value(state.q);
}

inline double total_energy(const StiffSplitSystem& system, const PhaseState& state) {
  if (state.dof() != system.dof()) throw ConfigError("total_energy: dimension mismatch");
  return system.base.mass.kinetic_energy(state.v) + system.total_value(state.q);
}

/// One recorded trajectory point with per-sample diagnostics.
struct TrajectorySample {
  double t = 0.0;
  Vec q;
  Vec v;
  double energy = 0.0;
  double constraint_norm = std::numeric_limits<double>::quiet_NaN();
  int solver_iters = 0;
};

/// Time-ordered samples plus aggregate solver-effort counters. Samples are
/// uniformly spaced at record_stride * h (the final state is appended even
/// when the step count is not a stride multiple).
struct Trajectory {
  std::vector<TrajectorySample> samples;
  std::vector<std::pair<double, Vec>> multipliers;  // per-step (t, lambda), when reported
  long step_count = 0;
  long newton_iter_total = 0;
  long linear_solve_total = 0;
  long constraint_warnings = 0;
  std::optional<long> failed_step;  // set when a run was cut short (opt-in)

  const TrajectorySample& front() const { return samples.front(); }
  const TrajectorySample& back() const { return samples.back(); }
};

}  // namespace geomint
