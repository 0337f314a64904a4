// Experiment CLI. Subcommands:
//   simulate            one trajectory -> CSV
//   convergence         error/order scan over an h grid -> CSV
//   stability-scan      closed-form moduli + empirical boundedness -> CSV
//   multiplier-compare  windowed penalty multipliers vs SHAKE -> CSV
//   water-rdf           Langevin water run(s) + OO radial histogram -> CSV
// Exit codes: 0 success, 1 numerical failure, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "geomint/geomint.hpp"

namespace {

using namespace geomint;

int default_jobs() {
  if (const char* env = std::getenv("GEOMINT_JOBS")) {
    const int j = std::atoi(env);
    if (j >= 1) return j;
  }
  return 1;
}

const std::vector<std::string> kSystems = {"double-pendulum", "chain", "circle", "water"};
const std::vector<std::string> kIntegrators = {"vv",     "newmark", "newmark-lin",
                                               "pfn",    "sylipn",  "sylipn-stiff",
                                               "shake",  "gla-sylipn", "gla-shake"};

struct SimulateOptions {
  std::string system = "double-pendulum";
  std::string integrator = "sylipn";
  double h = 0.05;
  double beta = 0.4;
  double omega = 20.0;
  bool omega_given = false;
  double t_end = 100.0;
  std::uint64_t seed = 0;
  long record_stride = 1;
  std::string out = "trajectory.csv";
  int chain_n = 20;
  int waters = 7;
  std::string params_file;
  double friction = 0.01;
  double inv_temp = 50.0;
  bool drop_curvature = false;
  double shake_tol_g = 1e-6;
  double init_v_threshold = 0.0;  // 0 -> default -2*waters
};

bool is_gla(const std::string& integrator) { return integrator.rfind("gla-", 0) == 0; }
bool is_shake_family(const std::string& integrator) {
  return integrator == "shake" || integrator == "gla-shake";
}

/// Everything needed to run one trajectory of the selected system/integrator.
struct RunSetup {
  MechanicalSystem system;
  ConstraintSet constraints;
  std::optional<StiffSplitSystem> penalty;  // set for penalty-based integrators
  PhaseState initial;
  Stepper stepper;
  IntegratorConfig cfg;
};

WaterParams water_params_from(const SimulateOptions& opt) {
  return opt.params_file.empty() ? WaterParams{} : load_water_params(opt.params_file);
}

RunSetup build_run(const SimulateOptions& opt) {
  RunSetup setup;
  if (is_shake_family(opt.integrator) && opt.omega_given)
    throw ConfigError("--omega does not apply to SHAKE (it integrates the constrained system)");

  if (opt.system == "double-pendulum") {
    auto built = double_pendulum_cartesian();
    setup.system = built.system;
    setup.constraints = built.constraints;
    setup.initial = double_pendulum_rest_state();
  } else if (opt.system == "chain") {
    const auto params = ChainParams::uniform(opt.chain_n);
    auto built = pendulum_chain(params);
    setup.system = built.system;
    setup.constraints = built.constraints;
    setup.initial = chain_stretched_state(params);
  } else if (opt.system == "circle") {
    auto built = circular_motion();
    setup.system = built.system;
    setup.constraints = built.constraints;
    setup.initial = circle_default_state();
  } else if (opt.system == "water") {
    const WaterParams params = water_params_from(opt);
    auto built = water_cluster(params, opt.waters);
    setup.system = built.system;
    setup.constraints = built.constraints;
    const double threshold =
        opt.init_v_threshold != 0.0 ? opt.init_v_threshold : -2.0 * opt.waters;
    setup.initial = water_initial_configuration(params, opt.waters, opt.seed, threshold);
    if (!is_shake_family(opt.integrator))
      setup.penalty = water_penalty_system(built, opt.omega, !opt.drop_curvature);
  } else {
    throw ConfigError("unknown system: " + opt.system);
  }

  if (!is_shake_family(opt.integrator) && !setup.penalty)
    setup.penalty =
        build_penalty_system(setup.system, setup.constraints, opt.omega, !opt.drop_curvature);

  IntegratorConfig cfg;
  cfg.h = opt.h;
  cfg.beta = opt.beta;
  if (is_shake_family(opt.integrator)) cfg.newton.tol_f = opt.shake_tol_g;
  setup.cfg = cfg;

  auto deterministic = [&](const std::string& name) -> Stepper {
    if (name == "vv") return make_velocity_verlet_stepper(setup.penalty->flatten(), cfg);
    if (name == "newmark") return make_newmark_stepper(setup.penalty->flatten(), cfg);
    if (name == "newmark-lin")
      return make_linearized_newmark_stepper(setup.penalty->flatten(), cfg);
    if (name == "pfn") return make_pushforward_newmark_stepper(setup.penalty->flatten(), cfg);
    if (name == "sylipn" || name == "sylipn-stiff") {
      IntegratorConfig c = cfg;
      // The simplified variant keeps only the stiff Hessian; water always
      // qualifies for it (block-diagonal penalty).
      c.stiff_only_hessian = name == "sylipn-stiff" || opt.system == "water";
      setup.cfg = c;
      return make_sylipn_stepper(*setup.penalty, c);
    }
    if (name == "shake") return make_shake_stepper(setup.system, setup.constraints, cfg);
    throw ConfigError("unknown integrator: " + name);
  };

  if (is_gla(opt.integrator)) {
    LangevinConfig lv;
    lv.friction = opt.friction;
    lv.inv_temperature = opt.inv_temp;
    lv.seed = opt.seed;
    const std::string inner = opt.integrator.substr(4);
    setup.stepper = make_gla_stepper(deterministic(inner), setup.system.mass, cfg, lv);
  } else {
    setup.stepper = deterministic(opt.integrator);
  }
  return setup;
}

void write_common_meta(CsvWriter& csv, const SimulateOptions& opt, const std::string& schema) {
  csv.meta("schema", schema);
  csv.meta("version", kVersion);
  csv.meta("system", opt.system);
  csv.meta("integrator", opt.integrator);
  csv.meta("h", opt.h);
  csv.meta("beta", opt.beta);
  if (!is_shake_family(opt.integrator)) csv.meta("omega", opt.omega);
  csv.meta("t_end", opt.t_end);
  csv.meta("seed", static_cast<long long>(opt.seed));
  csv.meta("record_stride", static_cast<long long>(opt.record_stride));
  csv.meta("drop_constraint_curvature", opt.drop_curvature ? "1" : "0");
  if (opt.system == "chain") csv.meta("n", opt.chain_n);
  if (opt.system == "water") {
    csv.meta("waters", opt.waters);
    csv.meta("params_file", opt.params_file.empty() ? "builtin" : opt.params_file);
    csv.meta("init_v_threshold",
             opt.init_v_threshold != 0.0 ? opt.init_v_threshold : -2.0 * opt.waters);
  }
  if (is_shake_family(opt.integrator)) csv.meta("shake_tol", opt.shake_tol_g);
  if (is_gla(opt.integrator)) {
    csv.meta("friction", opt.friction);
    csv.meta("inv_temperature", opt.inv_temp);
  }
}

Trajectory run_with(const RunSetup& setup, double t_end,
                    long record_stride) {
  RunOptions ro;
  ro.record_stride = record_stride;
  ro.constraints = &setup.constraints;
  if (setup.penalty)
    return run_trajectory(setup.stepper, *setup.penalty, setup.initial, t_end, setup.cfg, ro);
  return run_trajectory(setup.stepper, setup.system, setup.initial, t_end, setup.cfg, ro);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const SimulateOptions& opt) {
  RunSetup setup = build_run(opt);
  const Trajectory traj = run_with(setup, opt.t_end, opt.record_stride);

  CsvWriter csv(opt.out);
  write_common_meta(csv, opt, "geomint.trajectory.v1");
  const int n = setup.initial.dof();
  std::vector<std::string> cols{"t"};
  for (int i = 0; i < n; ++i) cols.push_back("q_" + std::to_string(i));
  for (int i = 0; i < n; ++i) cols.push_back("v_" + std::to_string(i));
  cols.insert(cols.end(), {"energy", "g_norm", "solver_iters"});
  csv.columns(cols);
  std::vector<double> row;
  for (const auto& s : traj.samples) {
    row.clear();
    row.push_back(s.t);
    for (int i = 0; i < n; ++i) row.push_back(s.q[i]);
    for (int i = 0; i < n; ++i) row.push_back(s.v[i]);
    row.push_back(s.energy);
    row.push_back(s.constraint_norm);
    row.push_back(static_cast<double>(s.solver_iters));
    csv.row(row);
  }
  csv.commit();
  if (traj.constraint_warnings > 0)
    std::cerr << "warning: constraint drift beyond 1e-6 in " << traj.constraint_warnings
              << " steps\n";
  std::cerr << "wrote " << opt.out << " (" << traj.samples.size() << " samples, "
            << traj.step_count << " steps)\n";
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<double> default_h_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 99; ++i) grid.push_back(i * 1e-4);
  for (int i = 10; i <= 99; ++i) grid.push_back(i * 1e-3);
  for (int i = 10; i <= 20; ++i) grid.push_back(i * 1e-2);
  return grid;
}

int cmd_convergence(const SimulateOptions& opt, const std::string& reference, double ref_h,
                    const std::string& grid_kind, double h_min, double h_max, int h_count,
                    double alpha, int jobs) {
  if (opt.system == "water" || opt.system == "chain")
    throw ConfigError("convergence references are available for double-pendulum and circle only");
  if (reference == "exact" && opt.system != "circle")
    throw ConfigError("--reference exact requires --system circle");
  if (reference == "generalized-coords" && opt.system != "double-pendulum")
    throw ConfigError("--reference generalized-coords requires --system double-pendulum");

  SimulateOptions base = opt;
  RunSetup probe = build_run(base);

  std::vector<double> grid;
  if (grid_kind == "default") {
    grid = default_h_grid();
  } else {
    if (!(h_min > 0.0) || !(h_max > h_min) || h_count < 2)
      throw ConfigError("--h-min/--h-max/--h-count must describe an increasing grid");
    for (int i = 0; i < h_count; ++i)
      grid.push_back(h_min * std::pow(h_max / h_min, double(i) / (h_count - 1)));
  }

  ReferenceSolution ref;
  if (reference == "exact") {
    ref = exact_circle_solution(probe.initial);
  } else if (reference == "generalized-coords") {
    const double bench_h = ref_h > 0.0 ? ref_h : 1e-4;
    Trajectory bench = double_pendulum_generalized_benchmark(
        {}, 0.0, std::numbers::pi / 4.0, bench_h, opt.t_end, 1);
    ref = TrajectoryInterpolant(bench).as_reference();
  } else if (reference == "vv-fine") {
    const double h_ref =
        ref_h > 0.0 ? ref_h : *std::min_element(grid.begin(), grid.end()) / 200.0;
    SimulateOptions fine = opt;
    fine.integrator = "vv";
    RunSetup rs = build_run(fine);
    IntegratorConfig rcfg = rs.cfg;
    rcfg.h = h_ref;
    rs.cfg = rcfg;
    rs.stepper = make_velocity_verlet_stepper(rs.penalty->flatten(), rcfg);
    RunOptions rro;
    rro.record_stride = std::max<long>(1, std::llround(2e-5 / h_ref));
    Trajectory bench =
        run_trajectory(rs.stepper, *rs.penalty, rs.initial, opt.t_end, rcfg, rro);
    MechanicalSystem flat = rs.penalty->flatten();
    ref = TrajectoryInterpolant(bench, [flat](const Vec& q) { return explicit_accel(flat, q); })
              .as_reference();
  } else {
    throw ConfigError("unknown reference: " + reference);
  }

  auto stepper_for_h = [opt](double h) {
    SimulateOptions o = opt;
    o.h = h;
    return build_run(o).stepper;
  };
  ConvergenceOptions copts;
  copts.alpha = alpha;
  copts.t_end = opt.t_end;
  copts.jobs = jobs;
  const ConvergenceReport report =
      convergence_scan(stepper_for_h, probe.initial, ref, grid, copts);

  CsvWriter csv(opt.out);
  write_common_meta(csv, opt, "geomint.convergence.v1");
  csv.meta("reference", reference);
  csv.meta("alpha", alpha);
  csv.meta("fit_exponent", report.fit.exponent);
  csv.meta("fit_constant", report.fit.constant());
  csv.columns({"h", "error", "p"});
  for (const auto& row : report.rows)
    csv.row({row.h, row.error, row.p.value_or(std::numeric_limits<double>::quiet_NaN())});
  csv.commit();
  std::cerr << "fitted exponent " << report.fit.exponent << "; wrote " << opt.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_stability_scan(const std::string& out) {
  const std::vector<double> betas = {0.2, 0.25, 0.4, 1.0};
  const std::vector<double> stiffness = {1.0, 1e2, 1e6};
  const std::vector<double> steps = {0.1, 1.0, 10.0, 100.0};
  const long n_steps = 100000;

  CsvWriter csv(out);
  csv.meta("schema", "geomint.stability.v1");
  csv.meta("version", kVersion);
  csv.meta("mass", 1.0);
  csv.meta("empirical_steps", static_cast<long long>(n_steps));
  csv.columns({"K", "h", "beta", "max_modulus", "bounded_after_N_steps", "amplitude_ratio"});

  for (double beta : betas) {
    for (double k : stiffness) {
      for (double h : steps) {
        const auto moduli = linear_stability_spectrum(1.0, k, beta, h);
        // Empirical boundedness in the invariant amplitude
        // E = a (1 - a h^2/4) x^2 + v^2, exactly conserved when |lambda| = 1.
        const Eigen::Matrix2d m = linear_update_matrix(1.0, k, beta, h);
        const double a = k / (1.0 + k * beta * h * h);
        const double w = a * (1.0 - a * h * h / 4.0);
        Eigen::Vector2d z(1.0, 0.0);
        auto amp = [&](const Eigen::Vector2d& s) {
          const double e = w * s[0] * s[0] + s[1] * s[1];
          return std::sqrt(std::abs(e));
        };
        const double a0 = amp(z);
        double worst = a0;
        for (long i = 0; i < n_steps && std::isfinite(worst); ++i) {
          z = m * z;
          worst = std::max(worst, amp(z));
        }
        const double ratio = a0 > 0.0 ? worst / a0 : 0.0;
        const bool bounded = std::isfinite(ratio) && ratio <= 1.0 + 1e-9;
        csv.row({k, h, beta, moduli.max_modulus(), bounded ? 1.0 : 0.0, ratio});
      }
    }
  }
  csv.commit();
  std::cerr << "wrote " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_multiplier_compare(const SimulateOptions& opt, double shake_h, double window,
                           long output_stride) {
  if (opt.system != "double-pendulum" && opt.system != "water")
    throw ConfigError("multiplier-compare supports double-pendulum and water");

  // Penalty run integrated by the linear-solve stepper at a step fine enough
  // to resolve the window sampling (spacing 0.1/omega).
  SimulateOptions pen = opt;
  pen.integrator = opt.system == "water" ? "sylipn-stiff" : "sylipn";
  pen.h = opt.h;  // caller default: 0.1/omega
  RunSetup pen_setup = build_run(pen);
  const Trajectory pen_traj = run_with(pen_setup, opt.t_end, 1);
  const int n_window =
      static_cast<int>(std::llround(window / (0.1 / opt.omega))) + 1;
  const long stride = std::max<long>(1, output_stride);
  const MultiplierSeries lam_pen = equivalent_multiplier(
      pen_traj, pen_setup.constraints, opt.omega, window, n_window, stride);

  // SHAKE run on the constrained system (noise and friction off).
  SimulateOptions sh = opt;
  sh.integrator = "shake";
  sh.omega_given = false;
  sh.h = shake_h;
  sh.shake_tol_g = opt.system == "water" ? 1e-10 : 1e-6;
  RunSetup sh_setup = build_run(sh);
  const Trajectory sh_traj = run_with(sh_setup, opt.t_end, 1);
  std::vector<double> sh_times;
  std::vector<Vec> sh_vals;
  for (const auto& [t, lam] : sh_traj.multipliers) {
    sh_times.push_back(t);
    sh_vals.push_back(lam);
  }
  const int sh_window_samples = std::max(2, static_cast<int>(std::llround(window / shake_h)) + 1);
  const MultiplierSeries lam_sh =
      windowed_average_series(sh_times, sh_vals, window, sh_window_samples, 1);

  auto shake_at = [&](double t) {
    std::size_t best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lam_sh.times.size(); ++j) {
      const double d = std::abs(lam_sh.times[j] - t);
      if (d < dist) {
        dist = d;
        best = j;
      }
    }
    return lam_sh.values[best];
  };

  CsvWriter csv(opt.out);
  write_common_meta(csv, opt, "geomint.multipliers.v1");
  csv.meta("window", window);
  csv.meta("window_samples", n_window);
  csv.meta("shake_h", shake_h);
  const int m = pen_setup.constraints.count;
  std::vector<std::string> cols{"t"};
  for (int i = 0; i < m; ++i) cols.push_back("lambda_hat_" + std::to_string(i));
  for (int i = 0; i < m; ++i) cols.push_back("lambda_shake_" + std::to_string(i));
  csv.columns(cols);
  double sup_diff = 0.0, sup_ref = 0.0;
  for (std::size_t i = 0; i < lam_pen.times.size(); ++i) {
    const Vec ref = shake_at(lam_pen.times[i]);
    std::vector<double> row{lam_pen.times[i]};
    for (int c = 0; c < m; ++c) row.push_back(lam_pen.values[i][c]);
    for (int c = 0; c < m; ++c) row.push_back(ref[c]);
    csv.row(row);
    sup_diff = std::max(sup_diff, (lam_pen.values[i] - ref).lpNorm<Eigen::Infinity>());
    sup_ref = std::max(sup_ref, ref.lpNorm<Eigen::Infinity>());
  }
  csv.commit();
  std::cerr << "sup-norm relative error " << sup_diff / sup_ref << "; wrote " << opt.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_water_rdf(const SimulateOptions& opt, double t_min, int bins, bool paired,
                  double r_max) {
  if (opt.system != "water") throw ConfigError("water-rdf requires --system water");
  if (opt.waters < 2) throw ConfigError("water-rdf needs at least two molecules");

  SimulateOptions gl = opt;
  gl.integrator = "gla-sylipn";
  RunSetup setup = build_run(gl);
  const auto started = std::chrono::steady_clock::now();
  const Trajectory traj = run_with(setup, opt.t_end, opt.record_stride);
  const double secs_sylipn =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const Histogram hist = oo_radial_histogram(traj, opt.waters, t_min, bins, r_max);

  std::optional<Histogram> hist_shake;
  double secs_shake = 0.0;
  if (paired) {
    SimulateOptions sh = opt;
    sh.integrator = "gla-shake";
    sh.omega_given = false;
    sh.shake_tol_g = 1e-10;
    RunSetup shake_setup = build_run(sh);
    const auto t0 = std::chrono::steady_clock::now();
    const Trajectory shake_traj = run_with(shake_setup, opt.t_end, opt.record_stride);
    secs_shake = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist_shake = oo_radial_histogram(shake_traj, opt.waters, t_min, bins, hist.r_max);
  }

  CsvWriter csv(opt.out);
  write_common_meta(csv, opt, "geomint.rdf.v1");
  csv.meta("t_min", t_min);
  csv.meta("bins", bins);
  csv.meta("r_max", hist.r_max);
  csv.meta("paired", paired ? "1" : "0");
  // Smooth over a fixed physical width so a stretched auto range (stray
  // far-apart molecules) cannot blur neighbouring shells together.
  const int smooth_radius =
      std::max(1, static_cast<int>(std::llround(0.06 / hist.bin_width())));
  const int peak_a = first_peak_bin(hist, smooth_radius);
  csv.meta("first_peak_sylipn", hist.bin_center(peak_a));
  if (hist_shake) {
    const int peak_b = first_peak_bin(*hist_shake, smooth_radius);
    csv.meta("first_peak_shake", hist_shake->bin_center(peak_b));
    csv.meta("peak_bin_distance", static_cast<long long>(std::abs(peak_a - peak_b)));
  }
  // informational wall-clock benchmark, not an acceptance quantity
  csv.meta("seconds_gla_sylipn", secs_sylipn);
  if (hist_shake) csv.meta("seconds_gla_shake", secs_shake);
  if (hist_shake)
    csv.columns({"r", "mass_sylipn", "mass_shake"});
  else
    csv.columns({"r", "mass_sylipn"});
  for (int i = 0; i < bins; ++i) {
    std::vector<double> row{hist.bin_center(i), hist.mass[i]};
    if (hist_shake) row.push_back(hist_shake->mass[i]);
    csv.row(row);
  }
  csv.commit();
  std::cerr << "first peak (gla-sylipn) at r=" << hist.bin_center(peak_a);
  if (hist_shake)
    std::cerr << ", (gla-shake) at r="
              << hist_shake->bin_center(first_peak_bin(*hist_shake, smooth_radius));
  std::cerr << "; wrote " << opt.out << "\n";
  return 0;
}

void add_common_flags(CLI::App* cmd, SimulateOptions& opt) {
  cmd->set_help_flag("--help", "print help");  // frees -h for the step flag
  cmd->add_option("--system", opt.system)->check(CLI::IsMember(kSystems));
  cmd->add_option("--h", opt.h, "time step");
  cmd->add_option("--beta", opt.beta, "implicitness parameter (0.4 default)");
  cmd->add_option("--t-end", opt.t_end);
  cmd->add_option("--seed", opt.seed, "random stream seed (recorded in outputs)");
  cmd->add_option("--record-stride", opt.record_stride);
  cmd->add_option("--out", opt.out, "output CSV path");
  cmd->add_option("--n", opt.chain_n, "chain: number of pendulums");
  cmd->add_option("--waters", opt.waters, "water: number of molecules");
  cmd->add_option("--params-file", opt.params_file, "water: key=value parameter file");
  cmd->add_flag("--drop-curvature", opt.drop_curvature,
                "drop the g-weighted curvature term from the penalty Hessian");
  cmd->add_option("--init-v-threshold", opt.init_v_threshold,
                  "water: relaxation cutoff for the initial configuration");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geomint: geometric integrators for constrained mechanical systems"};
  app.set_help_flag("--help", "print help");
  app.set_version_flag("--version", geomint::kVersion);
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "run one trajectory and write it as CSV");
  add_common_flags(simulate, sim);
  auto* sim_omega = simulate->add_option("--omega", sim.omega, "penalty stiffness (for non-SHAKE)");
  simulate->add_option("--integrator", sim.integrator)->check(CLI::IsMember(kIntegrators));
  auto* sim_friction = simulate->add_option("--friction", sim.friction, "gla: dissipation coefficient");
  auto* sim_invtemp = simulate->add_option("--inv-temp", sim.inv_temp, "gla: inverse temperature");
  simulate->add_option("--shake-tol", sim.shake_tol_g, "shake: tolerance on g");

  SimulateOptions conv;
  conv.h = 0.01;
  conv.t_end = 10.0;
  conv.out = "convergence.csv";
  std::string reference = "vv-fine";
  std::string grid_kind = "default";
  double ref_h = 0.0, h_min = 1e-4, h_max = 1e-3, alpha = 0.9;
  int h_count = 8, jobs = default_jobs();
  auto* convergence =
      app.add_subcommand("convergence", "error and convergence-order scan over an h grid");
  add_common_flags(convergence, conv);
  auto* conv_omega = convergence->add_option("--omega", conv.omega);
  convergence->add_option("--integrator", conv.integrator)->check(CLI::IsMember(kIntegrators));
  convergence->add_option("--reference", reference)
      ->check(CLI::IsMember({"vv-fine", "generalized-coords", "exact"}));
  convergence->add_option("--ref-h", ref_h, "reference step (default: min(h)/200 or 1e-4)");
  convergence->add_option("--grid", grid_kind)->check(CLI::IsMember({"default", "log"}));
  convergence->add_option("--h-min", h_min);
  convergence->add_option("--h-max", h_max);
  convergence->add_option("--h-count", h_count);
  convergence->add_option("--alpha", alpha, "neighbor ratio for the pairwise exponent");
  convergence->add_option("--jobs", jobs, "concurrent runs (GEOMINT_JOBS default)");

  std::string stab_out = "stability.csv";
  auto* stability = app.add_subcommand("stability-scan",
                                       "closed-form moduli and empirical boundedness grids");
  stability->set_help_flag("--help", "print help");
  stability->add_option("--out", stab_out);

  SimulateOptions mult;
  mult.h = 0.0;  // 0 -> derived as 0.1/omega below
  mult.t_end = 10.2;
  mult.out = "multipliers.csv";
  double shake_h = 0.05, window = 0.2;
  long mult_stride = 10;
  auto* multiplier = app.add_subcommand(
      "multiplier-compare", "windowed penalty multiplier estimates vs SHAKE multipliers");
  add_common_flags(multiplier, mult);
  multiplier->add_option("--omega", mult.omega);
  multiplier->add_option("--shake-h", shake_h, "step for the SHAKE run");
  multiplier->add_option("--window", window, "averaging window");
  multiplier->add_option("--output-stride", mult_stride, "emit every k-th window");

  SimulateOptions rdf;
  rdf.system = "water";
  rdf.t_end = 10000.0;
  rdf.record_stride = 20;
  rdf.out = "rdf.csv";
  double t_min = 5000.0, r_max = 0.0;
  int bins = 5000;
  bool paired = true;
  auto* water_rdf = app.add_subcommand(
      "water-rdf", "thermostatted water run(s) and the OO radial distribution histogram");
  add_common_flags(water_rdf, rdf);
  water_rdf->add_option("--omega", rdf.omega);
  water_rdf->add_option("--friction", rdf.friction);
  water_rdf->add_option("--inv-temp", rdf.inv_temp);
  water_rdf->add_option("--t-min", t_min, "discard samples before this time");
  water_rdf->add_option("--bins", bins);
  water_rdf->add_option("--r-max", r_max, "histogram range (default: max observed)");
  water_rdf->add_flag("--paired,!--unpaired", paired,
                      "also run gla-shake with the same seed and emit both histograms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    sim.omega_given = sim_omega->count() > 0;
    conv.omega_given = conv_omega->count() > 0;
    if (simulate->parsed()) {
      if (!is_gla(sim.integrator) && (sim_friction->count() > 0 || sim_invtemp->count() > 0))
        throw geomint::ConfigError("--friction/--inv-temp apply to gla-* integrators only");
      return cmd_simulate(sim);
    }
    if (convergence->parsed())
      return cmd_convergence(conv, reference, ref_h, grid_kind, h_min, h_max, h_count, alpha,
                             jobs);
    if (stability->parsed()) return cmd_stability_scan(stab_out);
    if (multiplier->parsed()) {
      if (mult.h == 0.0) mult.h = 0.1 / mult.omega;  // resolve the window sampling
      return cmd_multiplier_compare(mult, shake_h, window, mult_stride);
    }
    if (water_rdf->parsed()) return cmd_water_rdf(rdf, t_min, bins, paired, r_max);
  } catch (const geomint::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const geomint::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
