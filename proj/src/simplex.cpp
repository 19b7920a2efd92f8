#include "qpfit/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace qpfit {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-10;

// Dense tableau simplex with Bland's rule. Standard form:
//   min c'v  s.t.  T v = b, v >= 0,  b >= 0.
// Returns false on unboundedness.
bool run_simplex(MatrixXd& T, VectorXd& b, VectorXd& cost,
                 std::vector<int>& basis, const std::vector<bool>& banned) {
  const int rows = static_cast<int>(T.rows());
  const int cols = static_cast<int>(T.cols());

  // Reduced costs require the objective row in canonical form w.r.t. basis.
  VectorXd red = cost;
  VectorXd y = VectorXd::Zero(rows);  // basis cost multipliers via elimination
  for (int r = 0; r < rows; ++r) y(r) = cost(basis[r]);
  // red_j = c_j - y' T_j  holds only when basic columns are unit vectors,
  // which the pivoting below maintains.
  for (int j = 0; j < cols; ++j) red(j) = cost(j) - y.dot(T.col(j));

  const int max_pivots = 50 * (rows + cols) + 200;
  for (int it = 0; it < max_pivots; ++it) {
    // Entering column: Bland (lowest index with negative reduced cost).
    int enter = -1;
    for (int j = 0; j < cols; ++j) {
      if (banned[j]) continue;
      if (red(j) < -kCostTol) { enter = j; break; }
    }
    if (enter < 0) return true;  // optimal

    // Leaving row: minimum ratio, ties by lowest basis index.
    int leave = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < rows; ++r) {
      double t = T(r, enter);
      if (t > kPivotTol) {
        double ratio = b(r) / t;
        if (ratio < best - 1e-12 ||
            (ratio < best + 1e-12 && (leave < 0 || basis[r] < basis[leave]))) {
          best = ratio;
          leave = r;
        }
      }
    }
    if (leave < 0) return false;  // unbounded

    // Pivot.
    double piv = T(leave, enter);
    T.row(leave) /= piv;
    b(leave) /= piv;
    for (int r = 0; r < rows; ++r) {
      if (r == leave) continue;
      double f = T(r, enter);
      if (f != 0.0) {
        T.row(r) -= f * T.row(leave);
        b(r) -= f * b(leave);
        if (b(r) < 0.0 && b(r) > -1e-11) b(r) = 0.0;
      }
    }
    double fr = red(enter);
    red -= fr * T.row(leave).transpose();
    red(enter) = 0.0;
    basis[leave] = enter;
  }
  throw std::runtime_error("simplex: pivot cap exceeded");
}

struct StdProblem {
  MatrixXd T;
  VectorXd b;
  std::vector<int> basis;
  int n = 0;       // original variable count
  int p = 0;       // constraint count
  int n_struct = 0;  // structural columns: 2n + p
  int n_art = 0;
};

// Builds the phase-1 tableau for Gx <= h (x free, split, slacks, artificials
// on rows whose rhs started negative) and solves phase 1.
// Returns true when feasible; the tableau is left in a canonical feasible
// basis with artificial columns banned.
bool phase1(const MatrixXd& G, const VectorXd& h, StdProblem& sp, std::vector<bool>& banned) {
  const int p = static_cast<int>(G.rows());
  const int n = static_cast<int>(G.cols());
  sp.n = n;
  sp.p = p;
  sp.n_struct = 2 * n + p;

  // Row scaling keeps pivot tolerances meaningful across problems.
  VectorXd rs(p);
  MatrixXd Gs = G;
  VectorXd hs = h;
  for (int i = 0; i < p; ++i) {
    double s = std::max(G.row(i).cwiseAbs().maxCoeff(), std::abs(h(i)));
    rs(i) = (s > 0.0) ? 1.0 / s : 1.0;
    Gs.row(i) *= rs(i);
    hs(i) *= rs(i);
  }

  std::vector<int> art_rows;
  for (int i = 0; i < p; ++i)
    if (hs(i) < 0.0) art_rows.push_back(i);
  sp.n_art = static_cast<int>(art_rows.size());

  const int cols = sp.n_struct + sp.n_art;
  sp.T = MatrixXd::Zero(p, cols);
  sp.b = hs;
  sp.basis.assign(p, -1);

  for (int i = 0; i < p; ++i) {
    double sgn = (hs(i) < 0.0) ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) {
      sp.T(i, j) = sgn * Gs(i, j);
      sp.T(i, n + j) = -sgn * Gs(i, j);
    }
    sp.T(i, 2 * n + i) = sgn;  // slack
    sp.b(i) = sgn * hs(i);
  }
  for (size_t k = 0; k < art_rows.size(); ++k) {
    sp.T(art_rows[k], sp.n_struct + static_cast<int>(k)) = 1.0;
    sp.basis[art_rows[k]] = sp.n_struct + static_cast<int>(k);
  }
  for (int i = 0; i < p; ++i)
    if (sp.basis[i] < 0) sp.basis[i] = 2 * n + i;  // slack basic

  banned.assign(cols, false);
  if (sp.n_art == 0) return true;

  VectorXd cost = VectorXd::Zero(cols);
  for (int k = 0; k < sp.n_art; ++k) cost(sp.n_struct + k) = 1.0;
  if (!run_simplex(sp.T, sp.b, cost, sp.basis, banned))
    throw std::runtime_error("simplex: phase 1 unbounded");

  double obj = 0.0;
  for (int i = 0; i < p; ++i)
    if (sp.basis[i] >= sp.n_struct) obj += sp.b(i);
  if (obj > 1e-8) return false;

  // Pivot leftover artificials out where possible; ban them from re-entry.
  for (int i = 0; i < p; ++i) {
    if (sp.basis[i] < sp.n_struct) continue;
    int enter = -1;
    for (int j = 0; j < sp.n_struct; ++j)
      if (std::abs(sp.T(i, j)) > kPivotTol) { enter = j; break; }
    if (enter >= 0) {
      double piv = sp.T(i, enter);
      sp.T.row(i) /= piv;
      sp.b(i) /= piv;
      for (int r = 0; r < p; ++r) {
        if (r == i) continue;
        double f = sp.T(r, enter);
        if (f != 0.0) {
          sp.T.row(r) -= f * sp.T.row(i);
          sp.b(r) -= f * sp.b(i);
        }
      }
      sp.basis[i] = enter;
    }
  }
  // Rows still carrying a basic artificial are redundant; drop them so later
  // pivots cannot push the artificial positive.
  std::vector<int> keep;
  for (int i = 0; i < p; ++i)
    if (sp.basis[i] < sp.n_struct) keep.push_back(i);
  if (static_cast<int>(keep.size()) < p) {
    MatrixXd T2(keep.size(), sp.T.cols());
    VectorXd b2(keep.size());
    std::vector<int> basis2(keep.size());
    for (size_t k = 0; k < keep.size(); ++k) {
      T2.row(k) = sp.T.row(keep[k]);
      b2(k) = sp.b(keep[k]);
      basis2[k] = sp.basis[keep[k]];
    }
    sp.T = std::move(T2);
    sp.b = std::move(b2);
    sp.basis = std::move(basis2);
    sp.p = static_cast<int>(keep.size());
  }
  for (int k = 0; k < sp.n_art; ++k) banned[sp.n_struct + k] = true;
  return true;
}

}  // namespace

bool lp_feasible(const MatrixXd& G, const VectorXd& h, double slack) {
  if (G.rows() == 0) return true;
  StdProblem sp;
  std::vector<bool> banned;
  VectorXd hs = h.array() - slack;
  return phase1(G, hs, sp, banned);
}

LPResult lp_solve(const VectorXd& c, const MatrixXd& G, const VectorXd& h) {
  LPResult out;
  const int n = static_cast<int>(c.size());
  if (G.rows() == 0) {
    // No constraints: bounded only for zero cost.
    if (c.cwiseAbs().maxCoeff() == 0.0) {
      out.status = LPStatus::Optimal;
      out.x = VectorXd::Zero(n);
      out.objective = 0.0;
    } else {
      out.status = LPStatus::Unbounded;
    }
    return out;
  }

  StdProblem sp;
  std::vector<bool> banned;
  if (!phase1(G, h, sp, banned)) {
    out.status = LPStatus::Infeasible;
    return out;
  }

  VectorXd cost = VectorXd::Zero(sp.T.cols());
  for (int j = 0; j < n; ++j) {
    cost(j) = c(j);
    cost(n + j) = -c(j);
  }
  if (!run_simplex(sp.T, sp.b, cost, sp.basis, banned)) {
    out.status = LPStatus::Unbounded;
    return out;
  }

  VectorXd v = VectorXd::Zero(sp.T.cols());
  for (int i = 0; i < sp.p; ++i) v(sp.basis[i]) = sp.b(i);
  out.x = v.head(n) - v.segment(n, n);
  out.objective = c.dot(out.x);
  out.status = LPStatus::Optimal;
  return out;
}

}  // namespace qpfit
