#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace qpfit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Quadratic programming
// ---------------------------------------------------------------------------

enum class SolveStatus { Solved, Infeasible, MaxIter };

struct QPSolution {
  VectorXd primal;
  VectorXd dual;                // one multiplier per inequality, >= 0
  std::vector<int> active_set;  // inequalities tight at the optimum
  SolveStatus status = SolveStatus::MaxIter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;

  bool solved() const { return status == SolveStatus::Solved; }
};

struct QPOptions {
  double tol = 1e-9;          // KKT / feasibility tolerance
  int max_iter_factor = 50;   // iteration cap = factor * max(1, #inequalities)
};

/// Minimizes 0.5 u'Hu + q'u subject to Gu <= h with H symmetric positive
/// definite. Primal active-set method; the returned active set is exact,
/// which downstream sensitivity and region code relies on.
QPSolution solve_qp(const MatrixXd& H, const VectorXd& q, const MatrixXd& G,
                    const VectorXd& h, const QPOptions& opts = {});

/// Minimizes z'Mz + c'z subject to z >= 0 with M symmetric positive definite.
/// Always feasible (z = 0) and bounded below; never returns Infeasible.
/// Multipliers satisfy lambda = 2 M z* + c on the clamped set.
QPSolution solve_nonneg_qp(const MatrixXd& M, const VectorXd& c,
                           const QPOptions& opts = {});

/// Max-norm KKT residual (stationarity, primal/dual feasibility,
/// complementarity) of a candidate solution of 0.5 u'Hu + q'u s.t. Gu <= h.
double qp_kkt_residual(const MatrixXd& H, const VectorXd& q, const MatrixXd& G,
                       const VectorXd& h, const QPSolution& sol);

// ---------------------------------------------------------------------------
// Linear programming (dense two-phase simplex, Bland's rule)
// ---------------------------------------------------------------------------

enum class LPStatus { Optimal, Infeasible, Unbounded };

struct LPResult {
  LPStatus status = LPStatus::Infeasible;
  VectorXd x;
  double objective = 0.0;
};

/// Minimizes c'x subject to Gx <= h, x free.
LPResult lp_solve(const VectorXd& c, const MatrixXd& G, const VectorXd& h);

/// True when {x : Gx <= h - slack} is nonempty.
bool lp_feasible(const MatrixXd& G, const VectorXd& h, double slack = 0.0);

// ---------------------------------------------------------------------------
// Dense matrix kernels
// ---------------------------------------------------------------------------

/// exp(M) for a square real matrix (scaling-and-squaring Pade).
MatrixXd matrix_exponential(const MatrixXd& M);

struct DareResult {
  MatrixXd P;        // stabilizing solution
  MatrixXd K;        // LQR gain, u = K x, K = -(R + B'PB)^{-1} B'PA
  double residual;   // inf-norm DARE residual
  int iterations;
};

/// Solves P = A'PA - A'PB (R + B'PB)^{-1} B'PA + Q by the structure
/// preserving doubling algorithm. Throws on non-convergence.
DareResult dare_solve(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                      const MatrixXd& R, int max_iter = 120);

/// Symmetric positive definite square root via eigendecomposition.
/// Throws std::invalid_argument when M is not SPD.
MatrixXd spd_sqrt(const MatrixXd& M);

/// Moore-Penrose pseudo-inverse via SVD.
MatrixXd pseudo_inverse(const MatrixXd& M);

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// FNV-1a over the raw bytes of the arguments; used for artifact provenance.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 1469598103934665603ull);
std::uint64_t hash_matrix(const MatrixXd& M, std::uint64_t seed = 1469598103934665603ull);
std::string hash_hex(std::uint64_t h);

}  // namespace qpfit
