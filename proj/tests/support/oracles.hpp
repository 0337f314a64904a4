#pragma once

// Test-only oracles, kept independent of the library implementations they
// check: plain central differences with their own step policy, a generic
// dense LU solve, and a deterministic mt19937-based sampler.

#include <Eigen/Dense>

#include <functional>
#include <random>

#include "geomint/core.hpp"

namespace oracles {

using geomint::Mat;
using geomint::Vec;

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& q,
                       double step = 1e-6) {
  Vec g(q.size());
  Vec p = q;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    p[i] = q[i] + step;
    const double fp = f(p);
    p[i] = q[i] - step;
    const double fm = f(p);
    p[i] = q[i];
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& q,
                       double step = 1e-6) {
  Mat j;
  Vec p = q;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    p[i] = q[i] + step;
    const Vec fp = f(p);
    p[i] = q[i] - step;
    const Vec fm = f(p);
    p[i] = q[i];
    if (j.size() == 0) j.resize(fp.size(), q.size());
    j.col(i) = (fp - fm) / (2.0 * step);
  }
  return j;
}

inline Vec lu_solve(const Mat& a, const Vec& b) { return a.fullPivLu().solve(b); }

class Sampler {
 public:
  explicit Sampler(unsigned seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }

  Vec vector(int n, double lo = -1.0, double hi = 1.0) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  /// Random symmetric matrix with eigenvalues of the given magnitudes and
  /// random signs (well conditioned, generally indefinite).
  Mat symmetric(int n, double eig_lo = 0.1, double eig_hi = 10.0, bool indefinite = true) {
    Mat m = Mat::Random(n, n);  // Eigen's Random is deterministic per process; reseed via householder of our vectors
    Mat basis(n, n);
    for (int c = 0; c < n; ++c) basis.col(c) = vector(n);
    Eigen::HouseholderQR<Mat> qr(basis);
    Mat q = qr.householderQ();
    Vec eigs(n);
    for (int i = 0; i < n; ++i) {
      eigs[i] = uniform(eig_lo, eig_hi);
      if (indefinite && uniform(0.0, 1.0) < 0.5) eigs[i] = -eigs[i];
    }
    m = q * eigs.asDiagonal() * q.transpose();
    return 0.5 * (m + m.transpose());
  }

 private:
  std::mt19937 gen_;
};

}  // namespace oracles
