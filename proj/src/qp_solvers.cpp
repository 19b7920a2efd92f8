#include "qpfit/numkit.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace qpfit {

namespace {

// Tight rows measured at the solution, independent of the working set the
// solver happened to end with. Downstream code treats weakly active rows as
// active.
std::vector<int> tight_rows(const MatrixXd& G, const VectorXd& h, const VectorXd& u, double tol) {
  std::vector<int> out;
  for (int i = 0; i < G.rows(); ++i)
    if (h(i) - G.row(i).dot(u) <= tol) out.push_back(i);
  return out;
}

}  // namespace

double qp_kkt_residual(const MatrixXd& H, const VectorXd& q, const MatrixXd& G,
                       const VectorXd& h, const QPSolution& sol) {
  const VectorXd& u = sol.primal;
  const VectorXd& lam = sol.dual;
  double r = (H * u + q + G.transpose() * lam).cwiseAbs().maxCoeff();
  if (G.rows() > 0) {
    VectorXd slack = h - G * u;
    r = std::max(r, std::max(0.0, -slack.minCoeff()));
    r = std::max(r, std::max(0.0, -lam.minCoeff()));
    r = std::max(r, lam.cwiseProduct(slack).cwiseAbs().maxCoeff());
  }
  return r;
}

QPSolution solve_qp(const MatrixXd& H, const VectorXd& q, const MatrixXd& G,
                    const VectorXd& h, const QPOptions& opts) {
  const int n = static_cast<int>(H.rows());
  const int p = static_cast<int>(G.rows());
  if (H.cols() != n || q.size() != n) throw std::invalid_argument("solve_qp: bad H/q dimensions");
  if (p > 0 && (G.cols() != n || h.size() != p)) throw std::invalid_argument("solve_qp: bad G/h dimensions");

  Eigen::LLT<MatrixXd> Hchol(H);
  if (Hchol.info() != Eigen::Success) throw std::invalid_argument("solve_qp: H must be positive definite");

  QPSolution sol;
  sol.dual = VectorXd::Zero(p);

  const double feas_tol = opts.tol * (1.0 + (p ? h.cwiseAbs().maxCoeff() : 0.0));

  // Unconstrained minimizer; optimal outright when feasible.
  VectorXd u = -Hchol.solve(q);
  if (p == 0 || (h - G * u).minCoeff() >= -feas_tol) {
    sol.primal = u;
    sol.status = SolveStatus::Solved;
    sol.active_set = p ? tight_rows(G, h, u, feas_tol) : std::vector<int>{};
    sol.kkt_residual = qp_kkt_residual(H, q, G, h, sol);
    return sol;
  }

  // Feasible start: try the origin, else phase-1 LP.
  if (h.minCoeff() >= 0.0) {
    u.setZero();
  } else {
    LPResult lp = lp_solve(VectorXd::Zero(n), G, h);
    if (lp.status == LPStatus::Infeasible) {
      sol.status = SolveStatus::Infeasible;
      sol.primal = VectorXd::Zero(n);
      return sol;
    }
    u = lp.x;
    // Clean slight constraint violations from the LP tolerance by nudging
    // along the most violated rows is unnecessary at our scales; the active
    // set loop tolerates O(tol) infeasibility.
  }

  std::vector<int> W;  // working set (row indices into G)
  W.reserve(n);
  const int cap = opts.max_iter_factor * std::max(1, p);

  for (int iter = 0; iter < cap; ++iter) {
    sol.iterations = iter + 1;
    VectorXd grad = H * u + q;

    // Equality-constrained subproblem on the working set:
    //   min 0.5 d'Hd + grad'd  s.t. G_W d = 0
    VectorXd d;
    VectorXd lamW;
    if (W.empty()) {
      d = -Hchol.solve(grad);
    } else {
      MatrixXd GW(W.size(), n);
      for (size_t k = 0; k < W.size(); ++k) GW.row(k) = G.row(W[k]);
      MatrixXd HiGt = Hchol.solve(GW.transpose());
      MatrixXd S = GW * HiGt;
      Eigen::LDLT<MatrixXd> Schol(S);
      lamW = -Schol.solve(GW * Hchol.solve(grad));
      d = -Hchol.solve(grad + GW.transpose() * lamW);
    }

    double dnorm = d.cwiseAbs().maxCoeff();
    double unorm = 1.0 + u.cwiseAbs().maxCoeff();
    if (dnorm <= 1e-12 * unorm) {
      // Stationary on the working set; check multiplier signs.
      if (W.empty() || lamW.minCoeff() >= -opts.tol) {
        sol.primal = u;
        sol.dual.setZero();
        for (size_t k = 0; k < W.size(); ++k) sol.dual(W[k]) = std::max(0.0, lamW(k));
        sol.status = SolveStatus::Solved;
        sol.active_set = tight_rows(G, h, u, feas_tol);
        sol.kkt_residual = qp_kkt_residual(H, q, G, h, sol);
        return sol;
      }
      int drop = 0;
      for (size_t k = 1; k < W.size(); ++k)
        if (lamW(k) < lamW(drop)) drop = static_cast<int>(k);
      W.erase(W.begin() + drop);
      continue;
    }

    // Step length limited by the nearest blocking constraint outside W.
    double alpha = 1.0;
    int blocking = -1;
    for (int i = 0; i < p; ++i) {
      if (std::find(W.begin(), W.end(), i) != W.end()) continue;
      double gd = G.row(i).dot(d);
      if (gd <= 1e-13 * (1.0 + dnorm)) continue;
      double slack = h(i) - G.row(i).dot(u);
      double ai = std::max(0.0, slack) / gd;
      if (ai < alpha - 1e-15) {
        alpha = ai;
        blocking = i;
      }
    }
    u += alpha * d;
    if (blocking >= 0) {
      if (static_cast<int>(W.size()) < n) {
        W.push_back(blocking);
      } else {
        // Working set already full rank; exchange with the least useful row
        // (most recently added) to stay deterministic.
        W.back() = blocking;
      }
    }
  }

  sol.primal = u;
  sol.status = SolveStatus::MaxIter;
  sol.active_set = tight_rows(G, h, u, feas_tol);
  sol.kkt_residual = qp_kkt_residual(H, q, G, h, sol);
  return sol;
}

QPSolution solve_nonneg_qp(const MatrixXd& M, const VectorXd& c, const QPOptions& opts) {
  const int n = static_cast<int>(M.rows());
  if (M.cols() != n || c.size() != n) throw std::invalid_argument("solve_nonneg_qp: bad dimensions");

  QPSolution sol;
  VectorXd z = VectorXd::Zero(n);
  std::vector<bool> free_set(n, false);
  int nfree = 0;

  const int cap = opts.max_iter_factor * std::max(1, n);
  const double scale = 1.0 + c.cwiseAbs().maxCoeff();

  auto grad_at = [&](const VectorXd& zz) -> VectorXd { return 2.0 * M * zz + c; };

  int iter = 0;
  bool converged = false;
  while (iter < cap) {
    ++iter;
    VectorXd grad = grad_at(z);

    // Most negative multiplier among clamped coordinates.
    int enter = -1;
    double worst = -opts.tol * scale;
    for (int i = 0; i < n; ++i)
      if (!free_set[i] && grad(i) < worst) {
        worst = grad(i);
        enter = i;
      }
    if (enter < 0) {
      converged = true;
      break;
    }
    free_set[enter] = true;
    ++nfree;

    // Re-optimize on the free set, clamping any coordinate driven negative.
    for (int inner = 0; inner < cap && nfree > 0; ++inner) {
      std::vector<int> F;
      F.reserve(nfree);
      for (int i = 0; i < n; ++i)
        if (free_set[i]) F.push_back(i);

      MatrixXd MFF(F.size(), F.size());
      VectorXd cF(F.size());
      for (size_t a = 0; a < F.size(); ++a) {
        cF(a) = c(F[a]);
        for (size_t b = 0; b < F.size(); ++b) MFF(a, b) = M(F[a], F[b]);
      }
      Eigen::LLT<MatrixXd> chol(MFF);
      VectorXd zF;
      if (chol.info() == Eigen::Success) {
        zF = -0.5 * chol.solve(cF);
      } else {
        // PD contract violated (possible only for semidefinite callers);
        // fall back to an LDLT solve of the normal system.
        zF = -0.5 * MFF.ldlt().solve(cF);
      }

      bool all_nonneg = true;
      for (Eigen::Index a = 0; a < zF.size(); ++a)
        if (zF(a) < 0.0) { all_nonneg = false; break; }

      if (all_nonneg) {
        for (size_t a = 0; a < F.size(); ++a) z(F[a]) = zF(a);
        break;
      }

      // Partial step to the first coordinate hitting zero.
      double alpha = 1.0;
      for (size_t a = 0; a < F.size(); ++a) {
        double cur = z(F[a]);
        double tgt = zF(a);
        if (tgt < 0.0 && cur > tgt) {
          double ai = cur / (cur - tgt);
          alpha = std::min(alpha, ai);
        }
      }
      for (size_t a = 0; a < F.size(); ++a) {
        z(F[a]) += alpha * (zF(a) - z(F[a]));
        if (z(F[a]) <= 1e-14 * scale) {
          z(F[a]) = 0.0;
          if (free_set[F[a]]) { free_set[F[a]] = false; --nfree; }
        }
      }
    }
  }

  VectorXd grad = grad_at(z);
  sol.primal = z;
  sol.dual = grad.cwiseMax(0.0);
  for (int i = 0; i < n; ++i)
    if (free_set[i]) sol.dual(i) = 0.0;
  sol.iterations = iter;
  sol.status = converged ? SolveStatus::Solved : SolveStatus::MaxIter;
  for (int i = 0; i < n; ++i)
    if (z(i) <= opts.tol * scale) sol.active_set.push_back(i);

  // Residual in the solve_qp convention (H = 2M, G = -I, h = 0).
  double r = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = grad(i);
    if (free_set[i]) {
      r = std::max(r, std::abs(g));
    } else {
      r = std::max(r, std::max(0.0, -g));
    }
    r = std::max(r, std::abs(z(i) * (g - sol.dual(i))));
  }
  sol.kkt_residual = r;
  return sol;
}

}  // namespace qpfit
