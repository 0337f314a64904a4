#pragma once

// Concrete test systems: double pendulum (Cartesian and generalized
// coordinates), pendulum chain, constrained circular motion, and a rigid
// three-site water cluster with Coulomb + Lennard-Jones interactions.
// Dimensionless units with unit masses and unit gravity for the pendulum
// family.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geomint/core.hpp"
#include "geomint/integrators.hpp"
#include "geomint/solvers.hpp"
#include "geomint/stochastic.hpp"

namespace geomint {

struct ConstrainedSystem {
  MechanicalSystem system;
  ConstraintSet constraints;
};

// ---------------------------------------------------------------------------
// Pendulums
// ---------------------------------------------------------------------------

struct DoublePendulumParams {
  double L1 = 1.0;
  double L2 = std::numbers::sqrt2;
};

struct ChainParams {
  int n = 2;     // pendulum count
  Vec lengths;   // one length per link

  void validate() const {
    if (n < 1) throw ConfigError("ChainParams: need at least one pendulum");
    if (lengths.size() != n) throw ConfigError("ChainParams: lengths size must equal n");
    if ((lengths.array() <= 0.0).any()) throw ConfigError("ChainParams: lengths must be positive");
  }

  static ChainParams uniform(int n, double length = 1.0) {
    ChainParams p;
    p.n = n;
    p.lengths = Vec::Constant(n, length);
    p.validate();
    return p;
  }
};

/// Chain of n pendulums in the plane, coordinates (x_1, y_1, ..., x_n, y_n).
/// V = -sum_i y_i; link i constrains the squared distance to its predecessor
/// (the first link hangs from the origin). The constraint Jacobian is banded:
/// each row touches at most four coordinates.
inline ConstrainedSystem pendulum_chain(const ChainParams& params) {
  params.validate();
  const int n = params.n;
  const int dof = 2 * n;
  const Vec lengths = params.lengths;

  ConstrainedSystem out;
  out.system.dof = dof;
  out.system.mass = MassMatrix::identity(dof);
  out.system.potential.value = [n, dof](const Vec& q) {
    if (q.size() != dof) throw ConfigError("pendulum chain: dimension mismatch");
    double v = 0.0;
    for (int i = 0; i < n; ++i) v -= q[2 * i + 1];
    return v;
  };
  out.system.potential.gradient = [n, dof](const Vec& q) {
    if (q.size() != dof) throw ConfigError("pendulum chain: dimension mismatch");
    Vec g = Vec::Zero(dof);
    for (int i = 0; i < n; ++i) g[2 * i + 1] = -1.0;
    return g;
  };
  out.system.potential.hessian = [dof](const Vec&) { return Mat::Zero(dof, dof).eval(); };

  out.constraints.count = n;
  out.constraints.g = [n, dof, lengths](const Vec& q) {
    if (q.size() != dof) throw ConfigError("pendulum chain: dimension mismatch");
    Vec g(n);
    g[0] = q[0] * q[0] + q[1] * q[1] - lengths[0] * lengths[0];
    for (int i = 1; i < n; ++i) {
      const double dx = q[2 * i] - q[2 * i - 2];
      const double dy = q[2 * i + 1] - q[2 * i - 1];
      g[i] = dx * dx + dy * dy - lengths[i] * lengths[i];
    }
    return g;
  };
  out.constraints.jacobian = [n, dof](const Vec& q) {
    Mat j = Mat::Zero(n, dof);
    j(0, 0) = 2.0 * q[0];
    j(0, 1) = 2.0 * q[1];
    for (int i = 1; i < n; ++i) {
      const double dx = q[2 * i] - q[2 * i - 2];
      const double dy = q[2 * i + 1] - q[2 * i - 1];
      j(i, 2 * i - 2) = -2.0 * dx;
      j(i, 2 * i - 1) = -2.0 * dy;
      j(i, 2 * i) = 2.0 * dx;
      j(i, 2 * i + 1) = 2.0 * dy;
    }
    return j;
  };
  out.constraints.weighted_hessian = [n, dof](const Vec&, const Vec& w) {
    Mat h = Mat::Zero(dof, dof);
    h(0, 0) += 2.0 * w[0];
    h(1, 1) += 2.0 * w[0];
    for (int i = 1; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        const int a = 2 * i - 2 + c;
        const int b = 2 * i + c;
        h(a, a) += 2.0 * w[i];
        h(b, b) += 2.0 * w[i];
        h(a, b) -= 2.0 * w[i];
        h(b, a) -= 2.0 * w[i];
      }
    }
    return h;
  };
  return out;
}

/// Planar double pendulum in Cartesian coordinates (x1, y1, x2, y2) with
/// unit masses, V = -y1 - y2 and two squared-length constraints.
inline ConstrainedSystem double_pendulum_cartesian(const DoublePendulumParams& params = {}) {
  ChainParams chain;
  chain.n = 2;
  chain.lengths = Vec(2);
  chain.lengths << params.L1, params.L2;
  return pendulum_chain(chain);
}

/// Initial condition used throughout the pendulum experiments: first rod
/// vertical, second rod diagonal, zero momenta.
inline PhaseState double_pendulum_rest_state() {
  PhaseState s;
  s.q = Vec(4);
  s.q << 0.0, -1.0, 1.0, -2.0;
  s.v = Vec::Zero(4);
  return s;
}

/// Horizontally stretched chain (x_i = i, y_i = 0) at rest.
inline PhaseState chain_stretched_state(const ChainParams& params) {
  params.validate();
  PhaseState s;
  s.q = Vec::Zero(2 * params.n);
  for (int i = 0; i < params.n; ++i) s.q[2 * i] = static_cast<double>(i + 1);
  s.v = Vec::Zero(2 * params.n);
  return s;
}

namespace detail {

/// Generalized-coordinate double pendulum pieces. Embedding:
/// x1 = L1 sin t, y1 = -L1 cos t, x2 = x1 + L2 sin p, y2 = y1 - L2 cos p.
struct GeneralizedPendulum {
  double L1, L2;

  Mat mass(const Vec& q) const {
    const double c = std::cos(q[0] - q[1]);
    Mat m(2, 2);
    m << 2.0 * L1 * L1, L1 * L2 * c, L1 * L2 * c, L2 * L2;
    return m;
  }

  // Potential in generalized coordinates, matching V = -y1 - y2.
  double potential(const Vec& q) const { return 2.0 * L1 * std::cos(q[0]) + L2 * std::cos(q[1]); }

  // d/dq of the Lagrangian 1/2 qd^T M(q) qd - V(q).
  Vec lagrangian_q_gradient(const Vec& q, const Vec& qd) const {
    const double s = std::sin(q[0] - q[1]);
    Vec g(2);
    g[0] = -L1 * L2 * s * qd[0] * qd[1] + 2.0 * L1 * std::sin(q[0]);
    g[1] = L1 * L2 * s * qd[0] * qd[1] + L2 * std::sin(q[1]);
    return g;
  }

  Vec embed(const Vec& q) const {
    Vec x(4);
    x[0] = L1 * std::sin(q[0]);
    x[1] = -L1 * std::cos(q[0]);
    x[2] = x[0] + L2 * std::sin(q[1]);
    x[3] = x[1] - L2 * std::cos(q[1]);
    return x;
  }

  Mat embed_jacobian(const Vec& q) const {
    Mat j(4, 2);
    j << L1 * std::cos(q[0]), 0.0,
         L1 * std::sin(q[0]), 0.0,
         L1 * std::cos(q[0]), L2 * std::cos(q[1]),
         L1 * std::sin(q[0]), L2 * std::sin(q[1]);
    return j;
  }
};

}  // namespace detail

/// Implicit Variational Euler in generalized coordinates (theta, phi), built
/// from the rectangle-rule discrete Lagrangian L_d = h L(q_k, (q_{k+1}-q_k)/h)
/// and its discrete Euler-Lagrange equations. First-order; used as the
/// constrained-dynamics benchmark. Output is embedded back to Cartesian
/// coordinates.
inline Trajectory double_pendulum_generalized_benchmark(const DoublePendulumParams& params,
                                                        double theta0, double phi0, double h,
                                                        double t_end, long record_stride = 1,
                                                        Vec initial_velocity = Vec::Zero(2)) {
  if (!(h > 0.0)) throw ConfigError("generalized benchmark: h must be positive");
  const detail::GeneralizedPendulum gp{params.L1, params.L2};
  const long n_steps = std::llround(t_end / h);

  NewtonOptions opts;
  opts.tol_x = 1e-12;
  opts.tol_f = 1e-12;
  opts.max_iter = 60;

  Vec q_cur(2);
  q_cur << theta0, phi0;

  // First step from the initial momentum: M(q0) qdot0 = -D1 L_d(q0, q1).
  auto first_residual = [&](const Vec& q1) {
    const Vec qd = (q1 - q_cur) / h;
    return Vec(gp.mass(q_cur) * initial_velocity + h * gp.lagrangian_q_gradient(q_cur, qd) -
               gp.mass(q_cur) * qd);
  };
  NewtonReport first = newton_solve(first_residual, nullptr, q_cur + h * initial_velocity, opts);
  if (!first.converged) throw SolverError("generalized benchmark: initialization did not converge");

  auto record = [&](Trajectory& traj, double t, const Vec& q, const Vec& qd, int iters) {
    TrajectorySample s;
    s.t = t;
    s.q = gp.embed(q);
    s.v = gp.embed_jacobian(q) * qd;
    s.energy = 0.5 * s.v.squaredNorm() + gp.potential(q);
    s.constraint_norm = 0.0;  // embedding satisfies the length constraints
    s.solver_iters = iters;
    traj.samples.push_back(std::move(s));
  };

  Trajectory traj;
  record(traj, 0.0, q_cur, initial_velocity, 0);
  if (n_steps == 0) return traj;

  Vec q_prev = q_cur;
  q_cur = first.solution;
  traj.step_count += 1;
  traj.newton_iter_total += first.iterations;
  if (record_stride == 1 || n_steps == 1) record(traj, h, q_cur, (q_cur - q_prev) / h, first.iterations);

  for (long k = 1; k < n_steps; ++k) {
    auto residual = [&](const Vec& q_next) {
      const Vec qd_next = (q_next - q_cur) / h;
      return Vec(gp.mass(q_prev) * (q_cur - q_prev) / h +
                 h * gp.lagrangian_q_gradient(q_cur, qd_next) - gp.mass(q_cur) * qd_next);
    };
    NewtonReport rep = newton_solve(residual, nullptr, 2.0 * q_cur - q_prev, opts);
    if (!rep.converged)
      throw StepError(k, k * h, "generalized benchmark: Newton did not converge");
    q_prev = q_cur;
    q_cur = rep.solution;
    traj.step_count += 1;
    traj.newton_iter_total += rep.iterations;
    if ((k + 1) % record_stride == 0 || k + 1 == n_steps)
      record(traj, (k + 1) * h, q_cur, (q_cur - q_prev) / h, rep.iterations);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Constrained circular motion
// ---------------------------------------------------------------------------

/// Free particle on the unit circle: V = 0, g = x^2 + y^2 - 1.
inline ConstrainedSystem circular_motion() {
  ConstrainedSystem out;
  out.system.dof = 2;
  out.system.mass = MassMatrix::identity(2);
  out.system.potential = Potential::zero(2);
  out.constraints.count = 1;
  out.constraints.g = [](const Vec& q) {
    if (q.size() != 2) throw ConfigError("circular motion: dimension mismatch");
    Vec g(1);
    g[0] = q[0] * q[0] + q[1] * q[1] - 1.0;
    return g;
  };
  out.constraints.jacobian = [](const Vec& q) {
    Mat j(1, 2);
    j << 2.0 * q[0], 2.0 * q[1];
    return j;
  };
  out.constraints.weighted_hessian = [](const Vec&, const Vec& w) {
    return Mat(2.0 * w[0] * Mat::Identity(2, 2));
  };
  return out;
}

inline PhaseState circle_default_state() {
  PhaseState s;
  s.q = Vec(2);
  s.q << 1.0, 0.0;
  s.v = Vec(2);
  s.v << 0.0, 1.0;
  return s;
}

/// Exact constrained solution for an on-circle initial condition with
/// tangential velocity: uniform rotation at angular rate x0 vy0 - y0 vx0.
inline std::function<PhaseState(double)> exact_circle_solution(const PhaseState& ic) {
  if (ic.dof() != 2) throw ConfigError("exact_circle_solution: need a planar state");
  const double radius_defect = std::abs(ic.q.squaredNorm() - 1.0);
  const double tangency = std::abs(ic.q.dot(ic.v));
  if (radius_defect > 1e-9 || tangency > 1e-9)
    throw ConfigError("exact_circle_solution: initial condition must lie on the circle with tangential velocity");
  const double phase0 = std::atan2(ic.q[1], ic.q[0]);
  const double rate = ic.q[0] * ic.v[1] - ic.q[1] * ic.v[0];
  const double t0 = ic.t;
  return [phase0, rate, t0](double t) {
    const double a = phase0 + rate * (t - t0);
    PhaseState s;
    s.q = Vec(2);
    s.q << std::cos(a), std::sin(a);
    s.v = Vec(2);
    s.v << -rate * std::sin(a), rate * std::cos(a);
    s.t = t;
    return s;
  };
}

// ---------------------------------------------------------------------------
// Water cluster
// ---------------------------------------------------------------------------

/// Rigid three-site water parameters. Defaults follow the common TIP3P-style
/// set in reduced units (lengths in angstrom-like units, energies in
/// kcal/mol-like units); see data/water_tip3p.params.
struct WaterParams {
  double m_H = 1.008;
  double m_O = 15.9994;
  double K_c = 332.1;       // electrostatic constant
  double Q_H = 0.417;       // hydrogen partial charge
  double Q_O = -0.834;      // oxygen partial charge
  double A = 582000.0;      // Lennard-Jones repulsion
  double C = 595.0;         // Lennard-Jones attraction
  double r_OH = 0.9572;     // O-H bond length
  double alpha_HOH_degrees = 104.52;

  double alpha_HOH() const { return alpha_HOH_degrees * std::numbers::pi / 180.0; }
  double r_HH() const { return 2.0 * r_OH * std::sin(alpha_HOH() / 2.0); }

  void validate() const {
    if (m_H <= 0.0 || m_O <= 0.0) throw ConfigError("WaterParams: masses must be positive");
    if (r_OH <= 0.0) throw ConfigError("WaterParams: r_OH must be positive");
  }
};

inline WaterParams load_water_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open water parameter file: " + path);
  WaterParams p;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value_str = trim(line.substr(eq + 1));
    double value = 0.0;
    try {
      value = std::stod(value_str);
    } catch (const std::exception&) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": bad number '" + value_str + "'");
    }
    if (key == "m_H") p.m_H = value;
    else if (key == "m_O") p.m_O = value;
    else if (key == "K_c") p.K_c = value;
    else if (key == "Q_H") p.Q_H = value;
    else if (key == "Q_O") p.Q_O = value;
    else if (key == "A") p.A = value;
    else if (key == "C") p.C = value;
    else if (key == "r_OH") p.r_OH = value;
    else if (key == "alpha_HOH_degrees") p.alpha_HOH_degrees = value;
    else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  p.validate();
  return p;
}

struct WaterCluster {
  MechanicalSystem system;
  ConstraintSet constraints;
  WaterParams params;
  int n_molecules = 0;
};

namespace detail {

// Coordinate layout: molecule a occupies [9a, 9a+9): atom 1 (H) at offset 0,
// atom 2 (O) at offset 3, atom 3 (H) at offset 6.
inline int water_atom_offset(int molecule, int atom /* 1..3 */) {
  return 9 * molecule + 3 * (atom - 1);
}

struct RadialTerm {
  int oa, ob;       // coordinate offsets of the two endpoints
  double coulomb;   // K_c Q_i Q_j (0 if none)
  bool lennard_jones = false;
};

inline void radial_f(const RadialTerm& term, const WaterParams& p, double r, double& f,
                     double& df, double& ddf) {
  f = df = ddf = 0.0;
  if (term.coulomb != 0.0) {
    const double c = term.coulomb;
    f += c / r;
    df += -c / (r * r);
    ddf += 2.0 * c / (r * r * r);
  }
  if (term.lennard_jones) {
    const double r6 = std::pow(r, 6), r7 = r6 * r, r8 = r7 * r;
    const double r12 = r6 * r6, r13 = r12 * r, r14 = r13 * r;
    f += p.A / r12 - p.C / r6;
    df += -12.0 * p.A / r13 + 6.0 * p.C / r7;
    ddf += 156.0 * p.A / r14 - 42.0 * p.C / r8;
  }
}

}  // namespace detail

/// Cluster of rigid three-site water molecules: intermolecular Coulomb terms
/// on all nine atom pairs plus one oxygen-oxygen Lennard-Jones term per
/// molecule pair; three squared-distance constraints per molecule (two O-H
/// bonds and the H-H distance standing in for the bond angle).
inline WaterCluster water_cluster(const WaterParams& params, int n_molecules) {
  params.validate();
  if (n_molecules < 1) throw ConfigError("water_cluster: need at least one molecule");
  const int dof = 9 * n_molecules;

  std::vector<detail::RadialTerm> terms;
  const double charges[4] = {0.0, params.Q_H, params.Q_O, params.Q_H};
  for (int a = 0; a < n_molecules; ++a) {
    for (int b = a + 1; b < n_molecules; ++b) {
      for (int i = 1; i <= 3; ++i) {
        for (int j = 1; j <= 3; ++j) {
          detail::RadialTerm t;
          t.oa = detail::water_atom_offset(a, i);
          t.ob = detail::water_atom_offset(b, j);
          t.coulomb = params.K_c * charges[i] * charges[j];
          t.lennard_jones = (i == 2 && j == 2);
          terms.push_back(t);
        }
      }
    }
  }

  auto pair_distance = [dof](const Vec& q, int oa, int ob) {
    const double r = (q.segment<3>(oa) - q.segment<3>(ob)).norm();
    if (!(r > 1e-10))
      throw EvalError("water_cluster: coincident atoms (singular interatomic distance)");
    return r;
  };

  WaterCluster out;
  out.params = params;
  out.n_molecules = n_molecules;
  out.system.dof = dof;
  Vec mass_diag(dof);
  for (int a = 0; a < n_molecules; ++a) {
    mass_diag.segment<3>(detail::water_atom_offset(a, 1)).setConstant(params.m_H);
    mass_diag.segment<3>(detail::water_atom_offset(a, 2)).setConstant(params.m_O);
    mass_diag.segment<3>(detail::water_atom_offset(a, 3)).setConstant(params.m_H);
  }
  out.system.mass = MassMatrix::diagonal(mass_diag);

  out.system.potential.value = [terms, params, dof, pair_distance](const Vec& q) {
    if (q.size() != dof) throw ConfigError("water_cluster: dimension mismatch");
    double v = 0.0;
    for (const auto& t : terms) {
      double f, df, ddf;
      detail::radial_f(t, params, pair_distance(q, t.oa, t.ob), f, df, ddf);
      v += f;
    }
    return v;
  };
  out.system.potential.gradient = [terms, params, dof, pair_distance](const Vec& q) {
    if (q.size() != dof) throw ConfigError("water_cluster: dimension mismatch");
    Vec g = Vec::Zero(dof);
    for (const auto& t : terms) {
      const double r = pair_distance(q, t.oa, t.ob);
      double f, df, ddf;
      detail::radial_f(t, params, r, f, df, ddf);
      const Eigen::Vector3d d = (q.segment<3>(t.oa) - q.segment<3>(t.ob)) / r;
      g.segment<3>(t.oa) += df * d;
      g.segment<3>(t.ob) -= df * d;
    }
    return g;
  };
  out.system.potential.hessian = [terms, params, dof, pair_distance](const Vec& q) {
    if (q.size() != dof) throw ConfigError("water_cluster: dimension mismatch");
    Mat h = Mat::Zero(dof, dof);
    for (const auto& t : terms) {
      const double r = pair_distance(q, t.oa, t.ob);
      double f, df, ddf;
      detail::radial_f(t, params, r, f, df, ddf);
      const Eigen::Vector3d d = (q.segment<3>(t.oa) - q.segment<3>(t.ob)) / r;
      const Eigen::Matrix3d proj = d * d.transpose();
      const Eigen::Matrix3d blk =
          ddf * proj + (df / r) * (Eigen::Matrix3d::Identity() - proj);
      h.block<3, 3>(t.oa, t.oa) += blk;
      h.block<3, 3>(t.ob, t.ob) += blk;
      h.block<3, 3>(t.oa, t.ob) -= blk;
      h.block<3, 3>(t.ob, t.oa) -= blk;
    }
    return h;
  };

  // Constraints: rows (3a, 3a+1, 3a+2) fix |H1-O|^2, |H3-O|^2 and |H1-H3|^2.
  const double r_oh2 = params.r_OH * params.r_OH;
  const double r_hh2 = params.r_HH() * params.r_HH();
  struct Bond {
    int oa, ob;
    double target2;
  };
  std::vector<Bond> bonds;
  for (int a = 0; a < n_molecules; ++a) {
    bonds.push_back({detail::water_atom_offset(a, 1), detail::water_atom_offset(a, 2), r_oh2});
    bonds.push_back({detail::water_atom_offset(a, 3), detail::water_atom_offset(a, 2), r_oh2});
    bonds.push_back({detail::water_atom_offset(a, 1), detail::water_atom_offset(a, 3), r_hh2});
  }

  out.constraints.count = 3 * n_molecules;
  out.constraints.g = [bonds, dof](const Vec& q) {
    if (q.size() != dof) throw ConfigError("water_cluster: dimension mismatch");
    Vec g(bonds.size());
    for (std::size_t i = 0; i < bonds.size(); ++i)
      g[i] = (q.segment<3>(bonds[i].oa) - q.segment<3>(bonds[i].ob)).squaredNorm() -
             bonds[i].target2;
    return g;
  };
  out.constraints.jacobian = [bonds, dof](const Vec& q) {
    Mat j = Mat::Zero(bonds.size(), dof);
    for (std::size_t i = 0; i < bonds.size(); ++i) {
      const Eigen::Vector3d d = q.segment<3>(bonds[i].oa) - q.segment<3>(bonds[i].ob);
      j.row(i).segment<3>(bonds[i].oa) = 2.0 * d;
      j.row(i).segment<3>(bonds[i].ob) = -2.0 * d;
    }
    return j;
  };
  out.constraints.weighted_hessian = [bonds, dof](const Vec&, const Vec& w) {
    Mat h = Mat::Zero(dof, dof);
    for (std::size_t i = 0; i < bonds.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const int a = bonds[i].oa + c;
        const int b = bonds[i].ob + c;
        h(a, a) += 2.0 * w[i];
        h(b, b) += 2.0 * w[i];
        h(a, b) -= 2.0 * w[i];
        h(b, a) -= 2.0 * w[i];
      }
    }
    return h;
  };
  return out;
}

/// Penalty system for a water cluster with the block fast path attached:
/// every constraint is intramolecular, so the stiff Hessian is exactly block
/// diagonal with one 9x9 block per molecule.
inline StiffSplitSystem water_penalty_system(const WaterCluster& water, double omega,
                                             bool include_constraint_curvature = true) {
  StiffSplitSystem split =
      build_penalty_system(water.system, water.constraints, omega, include_constraint_curvature);
  split.stiff_block_size = 9;
  const double r_oh2 = water.params.r_OH * water.params.r_OH;
  const double r_hh2 = water.params.r_HH() * water.params.r_HH();
  split.stiff_block_hessian = [r_oh2, r_hh2, include_constraint_curvature](const Vec& q,
                                                                           int block) {
    // Local layout within the block: H1 at 0, O at 3, H3 at 6.
    const int base = 9 * block;
    const int pairs[3][2] = {{0, 3}, {6, 3}, {0, 6}};
    const double targets[3] = {r_oh2, r_oh2, r_hh2};
    Mat j = Mat::Zero(3, 9);
    Vec g(3);
    for (int r = 0; r < 3; ++r) {
      const Eigen::Vector3d d =
          q.segment<3>(base + pairs[r][0]) - q.segment<3>(base + pairs[r][1]);
      g[r] = d.squaredNorm() - targets[r];
      j.row(r).segment<3>(pairs[r][0]) = 2.0 * d;
      j.row(r).segment<3>(pairs[r][1]) = -2.0 * d;
    }
    Mat h = j.transpose() * j;
    if (include_constraint_curvature) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          const int a = pairs[r][0] + c;
          const int b = pairs[r][1] + c;
          h(a, a) += 2.0 * g[r];
          h(b, b) += 2.0 * g[r];
          h(a, b) -= 2.0 * g[r];
          h(b, a) -= 2.0 * g[r];
        }
      }
    }
    return h;
  };
  return split;
}

/// One molecule at the exact rigid geometry: O at `center`, hydrogens in the
/// plane spanned by the (orthonormalized) axes.
inline void place_ideal_molecule(const WaterParams& params, const Eigen::Vector3d& center,
                                 const Eigen::Matrix3d& rotation, Vec& q, int molecule) {
  const double half = params.alpha_HOH() / 2.0;
  const Eigen::Vector3d h1 =
      params.r_OH * (std::sin(half) * rotation.col(0) + std::cos(half) * rotation.col(2));
  const Eigen::Vector3d h3 =
      params.r_OH * (-std::sin(half) * rotation.col(0) + std::cos(half) * rotation.col(2));
  q.segment<3>(detail::water_atom_offset(molecule, 1)) = center + h1;
  q.segment<3>(detail::water_atom_offset(molecule, 2)) = center;
  q.segment<3>(detail::water_atom_offset(molecule, 3)) = center + h3;
}

/// Snap every molecule back to the exact rigid geometry, keeping its oxygen
/// position and approximate orientation. Constraint residuals are zero to
/// roundoff afterwards.
inline void project_water_geometry(const WaterParams& params, Vec& q, int n_molecules) {
  for (int a = 0; a < n_molecules; ++a) {
    const int o1 = detail::water_atom_offset(a, 1);
    const int o2 = detail::water_atom_offset(a, 2);
    const int o3 = detail::water_atom_offset(a, 3);
    const Eigen::Vector3d o = q.segment<3>(o2);
    Eigen::Vector3d u = q.segment<3>(o1) - o;
    if (u.norm() < 1e-12) u = Eigen::Vector3d::UnitX();
    u.normalize();
    Eigen::Vector3d w = q.segment<3>(o3) - o;
    w -= w.dot(u) * u;
    if (w.norm() < 1e-12) w = std::abs(u.x()) < 0.9 ? u.cross(Eigen::Vector3d::UnitX()) : u.cross(Eigen::Vector3d::UnitY());
    w.normalize();
    const double alpha = params.alpha_HOH();
    q.segment<3>(o1) = o + params.r_OH * u;
    q.segment<3>(o3) = o + params.r_OH * (std::cos(alpha) * u + std::sin(alpha) * w);
  }
}

namespace detail {

inline Eigen::Matrix3d random_rotation(RngStream& rng) {
  Eigen::Vector4d quat;
  for (int i = 0; i < 4; ++i) quat[i] = rng.next_gaussian();
  quat.normalize();
  const double w = quat[0], x = quat[1], y = quat[2], z = quat[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Plain BFGS with Armijo backtracking; stops when `done` says so.
inline Vec bfgs_minimize(const std::function<double(const Vec&)>& f,
                         const std::function<Vec(const Vec&)>& grad, Vec x,
                         const std::function<bool(const Vec&)>& done, int max_iter) {
  const int n = static_cast<int>(x.size());
  Mat hinv = Mat::Identity(n, n);
  Vec g = grad(x);
  double fx = f(x);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (done(x) || g.lpNorm<Eigen::Infinity>() < 1e-10) break;
    Vec dir = -(hinv * g);
    if (dir.dot(g) >= 0.0) {  // reset on loss of descent
      hinv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    double f_new = 0.0;
    Vec x_new;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + step * dir;
      try {
        f_new = f(x_new);
      } catch (const EvalError&) {
        step *= 0.5;
        continue;
      }
      if (f_new <= fx + 1e-4 * step * dir.dot(g)) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;
    const Vec g_new = grad(x_new);
    const Vec s = x_new - x;
    const Vec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Vec hy = hinv * y;
      hinv += ((sy + y.dot(hy)) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = std::move(x_new);
    g = g_new;
    fx = f_new;
  }
  return x;
}

}  // namespace detail

/// Seeded initial configuration: molecules placed on a jittered grid with
/// random orientations, relaxed by BFGS on the soft potential plus a strong
/// rigidity penalty, with the relaxation cut off once the soft potential
/// drops below `v_threshold` (well before a local minimum). The result is
/// projected back to the exact rigid geometry; velocities are zero, so the
/// constraints and the tangency condition hold exactly.
inline PhaseState water_initial_configuration(const WaterParams& params, int n_molecules,
                                              std::uint64_t seed, double v_threshold,
                                              int max_iter = 500) {
  WaterCluster cluster = water_cluster(params, n_molecules);
  RngStream rng(seed);

  const int per_side = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n_molecules))));
  const double spacing = 3.1;
  Vec q(9 * n_molecules);
  for (int a = 0; a < n_molecules; ++a) {
    Eigen::Vector3d center(static_cast<double>(a % per_side),
                           static_cast<double>((a / per_side) % per_side),
                           static_cast<double>(a / (per_side * per_side)));
    center *= spacing;
    for (int c = 0; c < 3; ++c) center[c] += 0.4 * (rng.next_uniform() - 0.5);
    place_ideal_molecule(params, center, detail::random_rotation(rng), q, a);
  }
  if (n_molecules == 1) {
    PhaseState s;
    s.q = q;
    s.v = Vec::Zero(q.size());
    return s;
  }

  const double omega_rigid = 50.0;
  StiffSplitSystem rigid = water_penalty_system(cluster, omega_rigid);
  auto objective = [&rigid](const Vec& x) { return rigid.total_value(x); };
  auto gradient = [&rigid](const Vec& x) { return rigid.total_gradient(x); };
  auto done = [&cluster, v_threshold](const Vec& x) {
    return cluster.system.potential.value(x) <= v_threshold;
  };
  q = detail::bfgs_minimize(objective, gradient, q, done, max_iter);
  project_water_geometry(params, q, n_molecules);

  PhaseState s;
  s.q = q;
  s.v = Vec::Zero(q.size());
  return s;
}

}  // namespace geomint
