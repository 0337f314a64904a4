#pragma once

// Dense symmetric-indefinite linear solver (Bunch-Kaufman LDL^T) and a
// damped Newton solver. Both are stateless; every call owns its scratch.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "geomint/core.hpp"

namespace geomint {

struct LinearSolveReport {
  Vec solution;
  double residual_norm = 0.0;  // ||A x - b||_2, computed post hoc
};

/// LDL^T factorization with Bunch-Kaufman pivoting (1x1 and 2x2 pivot
/// blocks). Handles symmetric indefinite matrices; never forms the inverse.
class SymmetricIndefiniteFactor {
 public:
  explicit SymmetricIndefiniteFactor(const Mat& a) {
    if (a.rows() != a.cols() || a.rows() == 0)
      throw ConfigError("SymmetricIndefiniteFactor: matrix must be square and nonempty");
    n_ = static_cast<int>(a.rows());
    Mat w = 0.5 * (a + a.transpose());
    lower_ = Mat::Identity(n_, n_);
    norm_a_ = w.cwiseAbs().maxCoeff();
    const double pivot_tol = 1e-14 * norm_a_;

    const double alpha = (1.0 + std::sqrt(17.0)) / 8.0;
    int k = 0;
    while (k < n_) {
      const double absakk = std::abs(w(k, k));
      int imax = k;
      double colmax = 0.0;
      for (int i = k + 1; i < n_; ++i) {
        const double v = std::abs(w(i, k));
        if (v > colmax) {
          colmax = v;
          imax = i;
        }
      }
      if (std::max(absakk, colmax) <= pivot_tol)
        throw SolverError("solve_symmetric: singular pivot (|pivot| <= 1e-14*||A||, column " +
                          std::to_string(k) + ")");

      int kstep = 1;
      int kp = k;
      if (absakk < alpha * colmax) {
        double rowmax = 0.0;
        for (int j = k; j < n_; ++j) {
          if (j == imax) continue;
          rowmax = std::max(rowmax, std::abs(w(imax, j)));
        }
        if (absakk * rowmax >= alpha * colmax * colmax) {
          kp = k;
        } else if (std::abs(w(imax, imax)) >= alpha * rowmax) {
          kp = imax;
        } else {
          kstep = 2;
          kp = imax;
        }
      }

      const int kk = k + kstep - 1;
      if (kp != kk) {
        w.row(kk).swap(w.row(kp));
        w.col(kk).swap(w.col(kp));
        // rows of the already-built factor columns move with the matrix
        if (k > 0) lower_.block(0, 0, n_, k).row(kk).swap(lower_.block(0, 0, n_, k).row(kp));
        swaps_.emplace_back(kk, kp);
      }

      if (kstep == 1) {
        const double d = w(k, k);
        if (std::abs(d) <= pivot_tol)
          throw SolverError("solve_symmetric: singular 1x1 pivot at column " + std::to_string(k));
        blocks_.push_back({k, 1, d, 0.0, 0.0});
        if (k + 1 < n_) {
          const Vec c = w.col(k).segment(k + 1, n_ - k - 1);
          lower_.col(k).segment(k + 1, n_ - k - 1) = c / d;
          w.block(k + 1, k + 1, n_ - k - 1, n_ - k - 1).noalias() -= (c / d) * c.transpose();
        }
        k += 1;
      } else {
        const double d00 = w(k, k), d10 = w(k + 1, k), d11 = w(k + 1, k + 1);
        const double det = d00 * d11 - d10 * d10;
        if (std::abs(det) <= pivot_tol * pivot_tol)
          throw SolverError("solve_symmetric: singular 2x2 pivot at column " + std::to_string(k));
        blocks_.push_back({k, 2, d00, d10, d11});
        if (k + 2 < n_) {
          const int rem = n_ - k - 2;
          const Vec c0 = w.col(k).segment(k + 2, rem);
          const Vec c1 = w.col(k + 1).segment(k + 2, rem);
          const Vec l0 = (d11 * c0 - d10 * c1) / det;
          const Vec l1 = (-d10 * c0 + d00 * c1) / det;
          lower_.col(k).segment(k + 2, rem) = l0;
          lower_.col(k + 1).segment(k + 2, rem) = l1;
          w.block(k + 2, k + 2, rem, rem).noalias() -= l0 * c0.transpose() + l1 * c1.transpose();
        }
        k += 2;
      }
    }
  }

  int dim() const { return n_; }

  Vec solve(const Vec& b) const {
    if (b.size() != n_) throw ConfigError("SymmetricIndefiniteFactor: rhs dimension mismatch");
    Vec x = b;
    for (const auto& [i, j] : swaps_) std::swap(x[i], x[j]);
    // forward: L y = x  (unit lower triangular)
    for (int c = 0; c < n_; ++c)
      for (int r = c + 1; r < n_; ++r) x[r] -= lower_(r, c) * x[c];
    // block diagonal
    for (const auto& blk : blocks_) {
      if (blk.size == 1) {
        x[blk.index] /= blk.d00;
      } else {
        const double det = blk.d00 * blk.d11 - blk.d10 * blk.d10;
        const double b0 = x[blk.index], b1 = x[blk.index + 1];
        x[blk.index] = (blk.d11 * b0 - blk.d10 * b1) / det;
        x[blk.index + 1] = (-blk.d10 * b0 + blk.d00 * b1) / det;
      }
    }
    // backward: L^T z = x
    for (int c = n_ - 1; c >= 0; --c)
      for (int r = c + 1; r < n_; ++r) x[c] -= lower_(r, c) * x[r];
    for (auto it = swaps_.rbegin(); it != swaps_.rend(); ++it) std::swap(x[it->first], x[it->second]);
    return x;
  }

 private:
  struct PivotBlock {
    int index;
    int size;  // 1 or 2
    double d00, d10, d11;
  };

  int n_ = 0;
  double norm_a_ = 0.0;
  Mat lower_;
  std::vector<PivotBlock> blocks_;
  std::vector<std::pair<int, int>> swaps_;
};

/// Solve A x = b for symmetric (possibly indefinite) A.
inline LinearSolveReport solve_symmetric(const Mat& a, const Vec& b) {
  SymmetricIndefiniteFactor factor(a);
  LinearSolveReport report;
  report.solution = factor.solve(b);
  report.residual_norm = (0.5 * (a + a.transpose()) * report.solution - b).norm();
  return report;
}

struct NewtonOptions {
  double tol_x = 1e-6;
  double tol_f = 1e-6;
  int max_iter = 50;
  int max_halvings = 30;  // 0 disables damping
};

struct NewtonReport {
  Vec solution;
  int iterations = 0;
  bool converged = false;
  double final_residual = 0.0;  // ||r||_inf at the returned point
};

/// Damped Newton iteration x <- x - alpha J^-1 r(x) with step halving when
/// the residual norm does not decrease. Converged when ||dx||_inf <= tol_x
/// or ||r||_inf <= tol_f. If no Jacobian is supplied it is approximated by
/// forward differences with step 1e-7*(1+|x_i|).
inline NewtonReport newton_solve(const std::function<Vec(const Vec&)>& residual,
                                 const std::function<Mat(const Vec&)>& jacobian_fn, Vec x0,
                                 const NewtonOptions& opts = {}) {
  auto numeric_jacobian = [&residual](const Vec& x, const Vec& r0) {
    Mat j(r0.size(), x.size());
    Vec p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double step = 1e-7 * (1.0 + std::abs(x[i]));
      p[i] = x[i] + step;
      j.col(i) = (residual(p) - r0) / step;
      p[i] = x[i];
    }
    return j;
  };

  NewtonReport report;
  Vec x = std::move(x0);
  Vec r = residual(x);
  double rnorm = r.lpNorm<Eigen::Infinity>();
  if (rnorm <= opts.tol_f) {
    report.solution = x;
    report.converged = true;
    report.final_residual = rnorm;
    return report;
  }

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const Mat j = jacobian_fn ? jacobian_fn(x) : numeric_jacobian(x, r);
    Vec dx = j.partialPivLu().solve(-r);
    if (!dx.allFinite())
      throw SolverError("newton_solve: singular Jacobian (non-finite Newton step)");

    double step_scale = 1.0;
    Vec x_new = x + dx;
    Vec r_new = residual(x_new);
    double rnorm_new = r_new.lpNorm<Eigen::Infinity>();
    for (int halving = 0; halving < opts.max_halvings && rnorm_new > rnorm; ++halving) {
      step_scale *= 0.5;
      x_new = x + step_scale * dx;
      r_new = residual(x_new);
      rnorm_new = r_new.lpNorm<Eigen::Infinity>();
    }

    x = std::move(x_new);
    r = std::move(r_new);
    rnorm = rnorm_new;
    ++report.iterations;

    const double dx_norm = step_scale * dx.lpNorm<Eigen::Infinity>();
    if (dx_norm <= opts.tol_x || rnorm <= opts.tol_f) {
      report.converged = true;
      break;
    }
  }

  report.solution = std::move(x);
  report.final_residual = rnorm;
  return report;
}

}  // namespace geomint
