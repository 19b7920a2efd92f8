#pragma once

// Test-only reference implementations, independent of the library's solver
// paths. Deliberately slow and simple.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Projected gradient on min z'Mz + c'z, z >= 0. Projection onto the orthant
// is exact, so this is a valid independent oracle for the nonneg QP.
inline VectorXd nonneg_qp_projected_gradient(const MatrixXd& M, const VectorXd& c,
                                             int iters = 200000, double tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(2.0 * M);
  double Lip = es.eigenvalues().maxCoeff();
  double step = 1.0 / std::max(Lip, 1e-12);
  VectorXd z = VectorXd::Zero(c.size());
  for (int k = 0; k < iters; ++k) {
    VectorXd g = 2.0 * M * z + c;
    VectorXd znew = (z - step * g).cwiseMax(0.0);
    if ((znew - z).cwiseAbs().maxCoeff() < tol) return znew;
    z = znew;
  }
  return z;
}

// Projected gradient ascent on the dual of min 0.5u'Hu + q'u s.t. Gu <= h.
// Recovers the primal through stationarity. Valid for feasible problems.
inline VectorXd qp_dual_projected_gradient(const MatrixXd& H, const VectorXd& q,
                                           const MatrixXd& G, const VectorXd& h,
                                           int iters = 400000, double tol = 1e-12) {
  Eigen::LLT<MatrixXd> Hc(H);
  MatrixXd HiGt = Hc.solve(G.transpose());
  MatrixXd D = G * HiGt;  // dual Hessian
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(D);
  double Lip = std::max(es.eigenvalues().maxCoeff(), 1e-12);
  double step = 1.0 / Lip;
  VectorXd lam = VectorXd::Zero(G.rows());
  VectorXd Hiq = Hc.solve(q);
  for (int k = 0; k < iters; ++k) {
    // grad of dual objective (to maximize): -(G H^{-1}(q + G'lam) + ... ) derives to
    // g = -(G u(lam)) + h with u = -H^{-1}(q + G'lam); ascend then project.
    VectorXd u = -(Hiq + HiGt * lam);
    VectorXd g = G * u - h;  // gradient of the dual function
    VectorXd nxt = (lam + step * g).cwiseMax(0.0);
    if ((nxt - lam).cwiseAbs().maxCoeff() < tol) { lam = nxt; break; }
    lam = nxt;
  }
  return -(Hiq + HiGt * lam);
}

// Scalar DARE fixed-point iteration.
inline double scalar_dare_fixed_point(double a, double b, double q, double r,
                                      int iters = 100000, double tol = 1e-14) {
  double p = q;
  for (int k = 0; k < iters; ++k) {
    double next = a * p * a - a * p * b / (r + b * p * b) * b * p * a + q;
    if (std::abs(next - p) < tol) return next;
    p = next;
  }
  return p;
}

// Enumerates vertices of {x in R^2 : Gx <= h} by intersecting row pairs.
inline std::vector<Eigen::Vector2d> polygon_vertices(const MatrixXd& G, const VectorXd& h,
                                                     double tol = 1e-9) {
  std::vector<Eigen::Vector2d> verts;
  const int p = static_cast<int>(G.rows());
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      Eigen::Matrix2d A;
      A << G(i, 0), G(i, 1), G(j, 0), G(j, 1);
      if (std::abs(A.determinant()) < 1e-12) continue;
      Eigen::Vector2d v = A.inverse() * Eigen::Vector2d(h(i), h(j));
      bool ok = true;
      for (int k = 0; k < p; ++k)
        if (G.row(k).dot(v) > h(k) + tol) { ok = false; break; }
      if (ok) verts.push_back(v);
    }
  return verts;
}

// RK4 integration of xdot = Ax + Bu over [0, T] with constant u.
inline void zoh_rk4(const MatrixXd& A, const MatrixXd& B, double T, int steps,
                    MatrixXd& Ad, MatrixXd& Bd) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  // Integrate the augmented system for each basis vector of [x; u].
  MatrixXd M = MatrixXd::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = A;
  M.topRightCorner(n, m) = B;
  MatrixXd X = MatrixXd::Identity(n + m, n + m);
  double hstep = T / steps;
  for (int k = 0; k < steps; ++k) {
    MatrixXd k1 = M * X;
    MatrixXd k2 = M * (X + 0.5 * hstep * k1);
    MatrixXd k3 = M * (X + 0.5 * hstep * k2);
    MatrixXd k4 = M * (X + hstep * k3);
    X += hstep / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  Ad = X.topLeftCorner(n, n);
  Bd = X.topRightCorner(n, m);
}

inline MatrixXd random_spd(int n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
  return A * A.transpose() + ridge * MatrixXd::Identity(n, n);
}

inline VectorXd random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline MatrixXd random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

}  // namespace oracles
