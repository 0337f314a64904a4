#pragma once

// Diagnostics that turn steppers and trajectories into measured quantities:
// linear stability spectra, symplecticity defects, convergence orders,
// equivalent constraint multipliers, penalty-violation scalings, energy
// drift, and radial distribution histograms.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "geomint/core.hpp"
#include "geomint/integrators.hpp"

namespace geomint {

namespace detail {

template <class F>
void parallel_for(int n, int jobs, F&& body) {
  jobs = std::min(std::max(jobs, 1), n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear stability
// ---------------------------------------------------------------------------

/// 2x2 one-step update matrix of the linearized push-forward family on the
/// scalar test problem V = K x^2 / 2:
///   [[1 - a h^2/2, h], [a h (a h^2/4 - 1), 1 - a h^2/2]],
/// with a = K / (M + K beta h^2).
inline Eigen::Matrix2d linear_update_matrix(double mass, double stiffness, double beta, double h) {
  if (!(mass > 0.0) || stiffness < 0.0 || !(h > 0.0))
    throw ConfigError("linear_update_matrix: need M > 0, K >= 0, h > 0");
  const double a = stiffness / (mass + stiffness * beta * h * h);
  Eigen::Matrix2d m;
  m << 1.0 - a * h * h / 2.0, h, a * h * (a * h * h / 4.0 - 1.0), 1.0 - a * h * h / 2.0;
  return m;
}

struct StabilityModuli {
  double modulus1 = 0.0;
  double modulus2 = 0.0;
  double max_modulus() const { return std::max(modulus1, modulus2); }
};

/// Closed-form eigenvalue moduli of the update matrix:
/// lambda = (2 - a h^2 +- h sqrt(a^2 h^2 - 4 a)) / 2.
inline StabilityModuli linear_stability_spectrum(double mass, double stiffness, double beta,
                                                 double h) {
  if (!(mass > 0.0) || stiffness < 0.0 || !(h > 0.0))
    throw ConfigError("linear_stability_spectrum: need M > 0, K >= 0, h > 0");
  const double a = stiffness / (mass + stiffness * beta * h * h);
  const std::complex<double> disc(a * a * h * h - 4.0 * a, 0.0);
  const std::complex<double> root = std::sqrt(disc);
  const std::complex<double> l1 = 0.5 * (2.0 - a * h * h + h * root);
  const std::complex<double> l2 = 0.5 * (2.0 - a * h * h - h * root);
  return {std::abs(l1), std::abs(l2)};
}

// ---------------------------------------------------------------------------
// Symplecticity
// ---------------------------------------------------------------------------

/// Frobenius defect ||D^T J D - J||_F of the one-step Jacobian D, computed by
/// central finite differences in canonical coordinates (q, p = M v). The
/// perturbation per component is fd_step * (1 + |z_i|).
inline double symplecticity_defect(const Stepper& stepper, const MassMatrix& mass,
                                   const PhaseState& state, double fd_step = 1e-5) {
  if (!state.valid()) throw ConfigError("symplecticity_defect: invalid state");
  const int n = state.dof();
  Vec z(2 * n);
  z.head(n) = state.q;
  z.tail(n) = mass.apply(state.v);

  auto map = [&](const Vec& zz) {
    PhaseState in{zz.head(n), mass.solve(zz.tail(n)), state.t};
    const PhaseState out = stepper(in).state;
    Vec w(2 * n);
    w.head(n) = out.q;
    w.tail(n) = mass.apply(out.v);
    return w;
  };

  Mat d(2 * n, 2 * n);
  Vec p = z;
  for (int j = 0; j < 2 * n; ++j) {
    const double step = fd_step * (1.0 + std::abs(z[j]));
    p[j] = z[j] + step;
    const Vec fp = map(p);
    p[j] = z[j] - step;
    const Vec fm = map(p);
    p[j] = z[j];
    d.col(j) = (fp - fm) / (2.0 * step);
  }

  Mat j_canon = Mat::Zero(2 * n, 2 * n);
  j_canon.topRightCorner(n, n) = Mat::Identity(n, n);
  j_canon.bottomLeftCorner(n, n) = -Mat::Identity(n, n);
  return (d.transpose() * j_canon * d - j_canon).norm();
}

// ---------------------------------------------------------------------------
// Reference solutions and convergence
// ---------------------------------------------------------------------------

using ReferenceSolution = std::function<PhaseState(double)>;

/// Dense evaluation of a recorded trajectory by cubic Hermite interpolation
/// of the positions (using recorded velocities as slopes). Velocities use
/// Hermite slopes from `accel` when provided, otherwise linear interpolation.
class TrajectoryInterpolant {
 public:
  explicit TrajectoryInterpolant(const Trajectory& traj,
                                 std::function<Vec(const Vec&)> accel = {}) {
    if (traj.samples.size() < 2)
      throw ConfigError("TrajectoryInterpolant: need at least two samples");
    times_.reserve(traj.samples.size());
    for (const auto& s : traj.samples) {
      times_.push_back(s.t);
      q_.push_back(s.q);
      v_.push_back(s.v);
      if (accel) a_.push_back(accel(s.q));
    }
  }

  PhaseState operator()(double t) const {
    const double span = times_.back() - times_.front();
    if (t < times_.front() - 1e-9 * span || t > times_.back() + 1e-9 * span)
      throw ConfigError("TrajectoryInterpolant: time outside recorded range");
    t = std::clamp(t, times_.front(), times_.back());
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t hi = std::min<std::size_t>(it - times_.begin(), times_.size() - 1);
    if (hi == 0) hi = 1;
    const std::size_t lo = hi - 1;
    const double dt = times_[hi] - times_[lo];
    const double s = (t - times_[lo]) / dt;
    const double h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    const double h10 = s * (1.0 - s) * (1.0 - s);
    const double h01 = s * s * (3.0 - 2.0 * s);
    const double h11 = s * s * (s - 1.0);
    PhaseState out;
    out.t = t;
    out.q = h00 * q_[lo] + (h10 * dt) * v_[lo] + h01 * q_[hi] + (h11 * dt) * v_[hi];
    out.v = a_.empty() ? Vec((1.0 - s) * v_[lo] + s * v_[hi])
                       : Vec(h00 * v_[lo] + (h10 * dt) * a_[lo] + h01 * v_[hi] + (h11 * dt) * a_[hi]);
    return out;
  }

  ReferenceSolution as_reference() const {
    return [copy = *this](double t) { return copy(t); };
  }

 private:
  std::vector<double> times_;
  std::vector<Vec> q_, v_, a_;
};

/// Max over recorded samples of the phase-space sup-norm difference against
/// the reference evaluated at the same times. Samples past t_limit are
/// skipped (step counts round, so a run may overshoot its nominal end by
/// half a step, which a recorded reference cannot cover).
inline double trajectory_error_vs_reference(
    const Trajectory& traj, const ReferenceSolution& ref,
    double t_limit = std::numeric_limits<double>::infinity()) {
  double err = 0.0;
  for (const auto& s : traj.samples) {
    if (s.t > t_limit * (1.0 + 1e-12)) continue;
    const PhaseState r = ref(s.t);
    err = std::max(err, (s.q - r.q).lpNorm<Eigen::Infinity>());
    err = std::max(err, (s.v - r.v).lpNorm<Eigen::Infinity>());
  }
  return err;
}

struct PowerLawFit {
  double exponent = 0.0;      // p in error = C h^p
  double log_constant = 0.0;  // ln C
  double constant() const { return std::exp(log_constant); }
};

/// Least-squares fit of log(error) = log C + p log h over positive errors.
inline PowerLawFit fit_power_law(const std::vector<double>& h, const std::vector<double>& error) {
  if (h.size() != error.size() || h.size() < 2)
    throw ConfigError("fit_power_law: need at least two grid points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(error[i] > 0.0) || !(h[i] > 0.0)) continue;
    const double x = std::log(h[i]), y = std::log(error[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw ConfigError("fit_power_law: fewer than two positive errors");
  const double denom = n * sxx - sx * sx;
  PowerLawFit fit;
  fit.exponent = (n * sxy - sx * sy) / denom;
  fit.log_constant = (sy - fit.exponent * sx) / n;
  return fit;
}

/// p = log_alpha error(alpha h) / error(h); absent when an error vanishes.
inline std::optional<double> pairwise_exponent(double error_alpha_h, double error_h,
                                               double alpha) {
  if (!(alpha > 0.0) || alpha == 1.0) throw ConfigError("pairwise_exponent: alpha must be in (0,1)");
  if (!(error_alpha_h > 0.0) || !(error_h > 0.0)) return std::nullopt;
  return std::log(error_alpha_h / error_h) / std::log(alpha);
}

struct ConvergenceRow {
  double h = 0.0;
  double error = 0.0;
  std::optional<double> p;  // pairwise exponent against the alpha-scaled run
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  PowerLawFit fit;  // over the full grid
};

struct ConvergenceOptions {
  double alpha = 0.9;
  double t_end = 10.0;
  int max_error_samples = 64;  // per-run matched comparison times
  int jobs = 1;
  bool pairwise = true;  // also run alpha*h for the per-row exponent
};

/// Runs the stepper over the h grid, measures errors against the reference
/// at the runs' own recorded times, and fits error(h) = C h^p. When
/// `pairwise` is set, each h also runs at alpha*h for the local exponent.
inline ConvergenceReport convergence_scan(const std::function<Stepper(double)>& stepper_for_h,
                                          const PhaseState& initial, const ReferenceSolution& ref,
                                          const std::vector<double>& h_grid,
                                          const ConvergenceOptions& opts = {}) {
  if (h_grid.empty()) throw ConfigError("convergence_scan: empty grid");
  ConvergenceReport report;
  report.rows.resize(h_grid.size());

  auto error_at = [&](double h) {
    IntegratorConfig cfg;
    cfg.h = h;
    const long n_steps = std::llround((opts.t_end - initial.t) / h);
    RunOptions run;
    run.record_stride = std::max<long>(1, n_steps / opts.max_error_samples);
    MechanicalSystem dummy;  // energy diagnostic unused here
    dummy.dof = initial.dof();
    dummy.mass = MassMatrix::identity(initial.dof());
    dummy.potential = Potential::zero(initial.dof());
    Stepper stepper = stepper_for_h(h);
    const Trajectory traj = run_trajectory(stepper, dummy, initial, opts.t_end, cfg, run);
    return trajectory_error_vs_reference(traj, ref, opts.t_end);
  };

  detail::parallel_for(static_cast<int>(h_grid.size()), opts.jobs, [&](int i) {
    const double h = h_grid[i];
    ConvergenceRow row;
    row.h = h;
    row.error = error_at(h);
    if (opts.pairwise) row.p = pairwise_exponent(error_at(opts.alpha * h), row.error, opts.alpha);
    report.rows[i] = std::move(row);
  });

  std::vector<double> hs, errs;
  for (const auto& r : report.rows) {
    hs.push_back(r.h);
    errs.push_back(r.error);
  }
  report.fit = fit_power_law(hs, errs);
  return report;
}

// ---------------------------------------------------------------------------
// Equivalent constraint multipliers
// ---------------------------------------------------------------------------

/// Windowed multiplier estimates: lambda(t_j) averaged over samples inside
/// [t_j, t_j + window].
struct MultiplierSeries {
  std::vector<double> times;
  std::vector<Vec> values;
  double window = 0.0;
  double sample_spacing = 0.0;
};

/// Averages a uniformly sampled vector series over sliding windows, picking
/// n_window_samples entries per window at spacing window/(n-1).
inline MultiplierSeries windowed_average_series(const std::vector<double>& times,
                                                const std::vector<Vec>& values, double window,
                                                int n_window_samples, long output_stride = 1) {
  if (times.size() != values.size() || times.size() < 2)
    throw ConfigError("windowed_average_series: need a sampled series");
  if (n_window_samples < 2) throw ConfigError("windowed_average_series: need >= 2 window samples");
  if (!(window > 0.0)) throw ConfigError("windowed_average_series: window must be positive");
  const double dt = times[1] - times[0];
  const double spacing = window / (n_window_samples - 1);
  if (dt > spacing * (1.0 + 1e-9))
    throw ConfigError("windowed_average_series: series sampled too coarsely for the window");

  MultiplierSeries out;
  out.window = window;
  out.sample_spacing = spacing;
  const double t0 = times.front();
  for (std::size_t j = 0; j < times.size(); j += output_stride) {
    if (times[j] + window > times.back() + 1e-9) break;
    Vec acc = Vec::Zero(values.front().size());
    for (int k = 0; k < n_window_samples; ++k) {
      const double s = times[j] + k * spacing;
      const auto idx = static_cast<std::size_t>(std::llround((s - t0) / dt));
      acc += values[std::min(idx, values.size() - 1)];
    }
    out.times.push_back(times[j]);
    out.values.push_back(acc / n_window_samples);
  }
  if (out.times.empty()) throw ConfigError("windowed_average_series: series shorter than one window");
  return out;
}

/// Equivalent multiplier from a penalty trajectory:
/// lambda_hat(t) = -(1/n) sum_j omega^2 g(q(s_j)) over window samples
/// s_j = t, t + window/(n-1), ..., t + window.
inline MultiplierSeries equivalent_multiplier(const Trajectory& traj,
                                              const ConstraintSet& constraints, double omega,
                                              double window = 0.2, int n_window_samples = 0,
                                              long output_stride = 1) {
  if (traj.samples.size() < 2) throw ConfigError("equivalent_multiplier: need a recorded trajectory");
  if (n_window_samples <= 0) {
    // Default spacing 0.1/omega.
    n_window_samples = static_cast<int>(std::llround(window / (0.1 / omega))) + 1;
  }
  std::vector<double> times;
  std::vector<Vec> values;
  times.reserve(traj.samples.size());
  for (const auto& s : traj.samples) {
    times.push_back(s.t);
    values.push_back(Vec(-(omega * omega) * constraints.g(s.q)));
  }
  return windowed_average_series(times, values, window, n_window_samples, output_stride);
}

// ---------------------------------------------------------------------------
// Penalty scaling, energy drift, radial histogram
// ---------------------------------------------------------------------------

struct ScalingRow {
  double omega = 0.0;
  double scaled_violation = 0.0;  // omega^2 ||g(q(T))||
};

/// One run per omega; reports the terminal scaled constraint violation.
inline std::vector<ScalingRow> constraint_scaling_scan(
    const std::function<Stepper(double)>& stepper_for_omega, const ConstraintSet& constraints,
    const PhaseState& initial, const std::vector<double>& omegas, double h, double t_end,
    int jobs = 1) {
  std::vector<ScalingRow> rows(omegas.size());
  detail::parallel_for(static_cast<int>(omegas.size()), jobs, [&](int i) {
    const double omega = omegas[i];
    Stepper stepper = stepper_for_omega(omega);
    PhaseState state = initial;
    const long n_steps = std::llround((t_end - initial.t) / h);
    for (long k = 0; k < n_steps; ++k) {
      try {
        state = stepper(state).state;
      } catch (const Error& e) {
        throw StepError(k, state.t, "omega=" + std::to_string(omega) + ": " + e.what());
      }
      state.t = initial.t + (k + 1) * h;
    }
    rows[i] = {omega, omega * omega * constraints.g(state.q).norm()};
  });
  return rows;
}

struct EnergyDrift {
  double max_abs_deviation = 0.0;  // sup |E(t) - E(0)|
  double trend_slope = 0.0;        // least-squares slope of E vs t
  double oscillation_std = 0.0;    // std of E around its mean
};

inline EnergyDrift energy_drift(const Trajectory& traj) {
  if (traj.samples.empty()) throw ConfigError("energy_drift: empty trajectory");
  const double e0 = traj.samples.front().energy;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  EnergyDrift out;
  const auto n = static_cast<double>(traj.samples.size());
  for (const auto& s : traj.samples) {
    out.max_abs_deviation = std::max(out.max_abs_deviation, std::abs(s.energy - e0));
    sx += s.t;
    sy += s.energy;
    sxx += s.t * s.t;
    sxy += s.t * s.energy;
    syy += s.energy * s.energy;
  }
  const double denom = n * sxx - sx * sx;
  out.trend_slope = denom > 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  const double mean = sy / n;
  out.oscillation_std = std::sqrt(std::max(0.0, syy / n - mean * mean));
  return out;
}

struct Histogram {
  double r_min = 0.0;
  double r_max = 0.0;
  std::vector<double> mass;  // normalized to unit total
  std::size_t sample_count = 0;

  double bin_width() const { return (r_max - r_min) / static_cast<double>(mass.size()); }
  double bin_center(int i) const { return r_min + (i + 0.5) * bin_width(); }
  int peak_bin() const {
    return static_cast<int>(std::max_element(mass.begin(), mass.end()) - mass.begin());
  }
};

/// First local maximum of a histogram after moving-average smoothing,
/// ignoring maxima below rel_threshold of the smoothed global peak. Raw
/// finite-sample histograms carry bin-level noise that splits a single
/// physical peak into several local maxima; smoothing makes peak
/// localization stable enough to compare runs.
inline int first_peak_bin(const Histogram& hist, int smooth_radius = 0,
                          double rel_threshold = 0.25) {
  const int n = static_cast<int>(hist.mass.size());
  if (smooth_radius <= 0) smooth_radius = std::max(1, n / 100);
  // Fixed-width zero-padded window: dividing by a truncated count would
  // manufacture spurious local maxima next to the boundaries.
  std::vector<double> smooth(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - smooth_radius);
    const int hi = std::min(n - 1, i + smooth_radius);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j) acc += hist.mass[j];
    smooth[i] = acc / (2 * smooth_radius + 1);
  }
  const double cutoff = rel_threshold * *std::max_element(smooth.begin(), smooth.end());
  for (int i = 0; i < n; ++i) {
    if (smooth[i] < cutoff) continue;
    const int lo = std::max(0, i - smooth_radius);
    const int hi = std::min(n - 1, i + smooth_radius);
    bool is_max = true;
    for (int j = lo; j <= hi && is_max; ++j) is_max = smooth[j] <= smooth[i];
    if (is_max) return i;
  }
  return static_cast<int>(std::max_element(smooth.begin(), smooth.end()) - smooth.begin());
}

/// Histogram of all oxygen-oxygen pair distances pooled over samples with
/// t >= t_min. r_max defaults to the maximum observed distance.
inline Histogram oo_radial_histogram(const Trajectory& traj, int n_molecules, double t_min,
                                     int bins = 5000, double r_max = 0.0) {
  if (n_molecules < 2) throw ConfigError("oo_radial_histogram: need at least two molecules");
  if (bins < 1) throw ConfigError("oo_radial_histogram: need at least one bin");

  auto each_distance = [&](auto&& fn) {
    for (const auto& s : traj.samples) {
      if (s.t < t_min) continue;
      for (int a = 0; a < n_molecules; ++a) {
        const Eigen::Vector3d oa = s.q.template segment<3>(9 * a + 3);
        for (int b = a + 1; b < n_molecules; ++b)
          fn((oa - Eigen::Vector3d(s.q.template segment<3>(9 * b + 3))).norm());
      }
    }
  };

  Histogram out;
  std::size_t count = 0;
  double observed_max = 0.0;
  each_distance([&](double r) {
    ++count;
    observed_max = std::max(observed_max, r);
  });
  if (count == 0) throw ConfigError("oo_radial_histogram: no samples past t_min");

  out.r_max = r_max > 0.0 ? r_max : observed_max;
  out.mass.assign(bins, 0.0);
  out.sample_count = count;
  const double width = (out.r_max - out.r_min) / bins;
  each_distance([&](double r) {
    if (r > out.r_max) return;
    int idx = static_cast<int>((r - out.r_min) / width);
    idx = std::clamp(idx, 0, bins - 1);
    out.mass[idx] += 1.0;
  });
  for (auto& m : out.mass) m /= static_cast<double>(count);
  return out;
}

}  // namespace geomint
