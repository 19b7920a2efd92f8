#pragma once

#include "qpfit/numkit.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace qpfit {

struct Polyhedron {
  MatrixXd A;  // A x <= b
  VectorXd b;
  int rows() const { return static_cast<int>(A.rows()); }
  bool empty() const { return A.rows() == 0; }
};

struct Box {
  VectorXd lo, hi;
  int dim() const { return static_cast<int>(lo.size()); }
  bool empty() const { return lo.size() == 0; }
  bool contains(const VectorXd& x, double tol = 0.0) const {
    return ((x - lo).minCoeff() >= -tol) && ((hi - x).minCoeff() >= -tol);
  }
};

// Horizon-H linear-quadratic MPC data in regulation-to-origin form. The
// reference shift (x_ref, u_ref) is bookkeeping for callers that work in
// physical coordinates; the constraint sets here are already shifted.
struct LinearMPCProblem {
  MatrixXd A, B;
  MatrixXd Q, R, P;
  int horizon = 1;
  Box state_box;            // enforced at k = 1..H-1; empty = unconstrained
  Polyhedron input_set;     // H_u u <= h_u at k = 0..H-1; empty = unconstrained
  Polyhedron terminal_set;  // H_t x_H <= h_t; empty = unconstrained
  VectorXd x_ref, u_ref;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  void validate() const;  // throws std::invalid_argument
};

// Dense parametric QP in the first state:
//   min_U U' Lambda U + x0' Gamma U   s.t.  Phi U <= Omega x0 + omega
struct CondensedQP {
  MatrixXd Lambda;  // (H m) x (H m), SPD
  MatrixXd Gamma;   // n x (H m)
  MatrixXd Phi;     // p x (H m)
  MatrixXd Omega;   // p x n
  VectorXd omega;   // p
  int n = 0, m = 0, horizon = 0;
  MatrixXd Sx, Su;  // prediction matrices: X = Sx x0 + Su U (block rows k=1..H)

  int dim() const { return horizon * m; }
  int rows() const { return static_cast<int>(Phi.rows()); }
  std::string hash() const;
};

CondensedQP condense(const LinearMPCProblem& prob);

/// Solves the condensed problem at a given initial state via solve_qp
/// (H = 2 Lambda, q = Gamma' x0).
QPSolution solve_condensed(const CondensedQP& c, const VectorXd& x0,
                           const QPOptions& opts = {});

// Dual of the condensed problem (Lagrangian dual on the inequality rows):
//   min_{lambda >= 0} lambda' M_d lambda + (Lx x0 + l0)' lambda  (+ x0' Cconst x0)
struct DualQP {
  MatrixXd M_d;     // 0.25 Phi Lambda^{-1} Phi'
  MatrixXd Lx;      // Omega + 0.5 Phi Lambda^{-1} Gamma'
  VectorXd l0;      // omega
  MatrixXd Cconst;  // 0.25 Gamma Lambda^{-1} Gamma' (objective bookkeeping)
};

DualQP assemble_dual(const CondensedQP& c);

/// Minimizes the dual at x0. M_d is singular whenever Phi has dependent
/// rows, so a tiny ridge keeps the solve inside the PD contract; any point
/// of the dual optimal face recovers the same primal.
VectorXd solve_dual(const DualQP& d, const VectorXd& x0, double ridge = 1e-10);

/// U* = -0.5 Lambda^{-1} (Phi' lambda + Gamma' x0)
VectorXd recover_primal(const CondensedQP& c, const VectorXd& lambda, const VectorXd& x0);

struct OracleResult {
  bool feasible = false;
  VectorXd u;          // first control move (m components)
  QPSolution solution; // full horizon solution
};

/// The sampled controller pi(x0): first move of the condensed optimum.
/// Infeasible x0 is a valid outcome; a solver iteration cap is not and throws.
OracleResult oracle_control(const CondensedQP& c, const VectorXd& x0,
                            const QPOptions& opts = {});

/// Maximal positively invariant set of x+ = A_cl x inside {C x <= d},
/// computed by the standard pre-set iteration with LP redundancy removal.
/// Throws when the iteration cap is hit before the fixed point.
Polyhedron maximal_invariant_set(const MatrixXd& A_cl, const Polyhedron& base,
                                 int max_iter = 100);

/// Terminal set for the problem under its own LQR controller u = K x:
/// base constraints are the state box plus mapped input constraints H_u K x <= h_u.
Polyhedron terminal_invariant_set(const LinearMPCProblem& prob, const MatrixXd& K,
                                  int max_iter = 100);

struct Dataset {
  MatrixXd states;       // N x n
  MatrixXd labels;       // N x m (first control moves, physical units)
  VectorXd label_scale;  // per-component, strictly positive
  Box box;
  std::uint64_t seed = 0;
  std::string problem_hash;

  int N() const { return static_cast<int>(states.rows()); }
  int n() const { return static_cast<int>(states.cols()); }
  int m() const { return static_cast<int>(labels.cols()); }
};

/// Uniform rejection sampling of feasible states, labeled by oracle_control.
/// Deterministic for a given seed. Throws when the acceptance rate over a
/// probe batch falls below 0.1%.
Dataset sample_dataset(const CondensedQP& c, const Box& box, int N, std::uint64_t seed);

}  // namespace qpfit
