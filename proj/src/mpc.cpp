#include "qpfit/mpc.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace qpfit {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool is_psd(const MatrixXd& M, double tol = 1e-9) {
  if (!M.isApprox(M.transpose(), 1e-9)) return false;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  return es.eigenvalues().minCoeff() >= -tol * (1.0 + std::abs(es.eigenvalues().maxCoeff()));
}

}  // namespace

void LinearMPCProblem::validate() const {
  const int nn = n(), mm = m();
  require(A.rows() == nn && A.cols() == nn, "A must be square n x n");
  require(B.rows() == nn, "B row count must match A");
  require(horizon >= 1, "horizon must be >= 1");
  require(Q.rows() == nn && Q.cols() == nn && is_psd(Q), "Q must be symmetric PSD");
  require(P.rows() == nn && P.cols() == nn && is_psd(P), "P must be symmetric PSD");
  require(R.rows() == mm && R.cols() == mm, "R must be m x m");
  Eigen::LLT<MatrixXd> rc(R);
  require(R.isApprox(R.transpose(), 1e-9) && rc.info() == Eigen::Success, "R must be symmetric PD");
  if (!state_box.empty()) {
    require(state_box.lo.size() == nn && state_box.hi.size() == nn, "state box dimension mismatch");
    require((state_box.hi - state_box.lo).minCoeff() > 0, "state box must have lo < hi");
  }
  if (!input_set.empty()) {
    require(input_set.A.cols() == mm && input_set.b.size() == input_set.rows(),
            "input polyhedron dimension mismatch");
    require(lp_feasible(input_set.A, input_set.b), "input polyhedron is empty");
  }
  if (!terminal_set.empty()) {
    require(terminal_set.A.cols() == nn && terminal_set.b.size() == terminal_set.rows(),
            "terminal polyhedron dimension mismatch");
    require(lp_feasible(terminal_set.A, terminal_set.b), "terminal polyhedron is empty");
  }
}

CondensedQP condense(const LinearMPCProblem& prob) {
  prob.validate();
  const int n = prob.n(), m = prob.m(), H = prob.horizon;
  const int D = H * m;

  CondensedQP c;
  c.n = n;
  c.m = m;
  c.horizon = H;

  // Prediction matrices over k = 1..H: X = Sx x0 + Su U.
  c.Sx.resize(H * n, n);
  c.Su = MatrixXd::Zero(H * n, D);
  MatrixXd Apow = prob.A;
  for (int k = 1; k <= H; ++k) {
    c.Sx.middleRows((k - 1) * n, n) = Apow;
    Apow = prob.A * Apow;
  }
  for (int k = 1; k <= H; ++k) {
    for (int j = 0; j < k; ++j) {
      // block (k, j) = A^{k-1-j} B
      MatrixXd blk = prob.B;
      for (int e = 0; e < k - 1 - j; ++e) blk = prob.A * blk;
      c.Su.block((k - 1) * n, j * m, n, m) = blk;
    }
  }

  // Predicted-state costs: Q at k = 1..H-1, P at k = H.
  MatrixXd Qbar = MatrixXd::Zero(H * n, H * n);
  for (int k = 1; k < H; ++k) Qbar.block((k - 1) * n, (k - 1) * n, n, n) = prob.Q;
  Qbar.block((H - 1) * n, (H - 1) * n, n, n) = prob.P;
  MatrixXd Rbar = MatrixXd::Zero(D, D);
  for (int k = 0; k < H; ++k) Rbar.block(k * m, k * m, m, m) = prob.R;

  MatrixXd Lam = c.Su.transpose() * Qbar * c.Su + Rbar;
  c.Lambda = 0.5 * (Lam + Lam.transpose());
  c.Gamma = 2.0 * c.Sx.transpose() * Qbar * c.Su;

  // Constraint stack: inputs (k ascending), states (k ascending), terminal.
  const int pu = prob.input_set.rows();
  const bool has_box = !prob.state_box.empty();
  int p = pu * H + (has_box ? 2 * n * (H - 1) : 0) + prob.terminal_set.rows();

  c.Phi = MatrixXd::Zero(p, D);
  c.Omega = MatrixXd::Zero(p, n);
  c.omega = VectorXd::Zero(p);

  int r = 0;
  for (int k = 0; k < H && pu > 0; ++k) {
    c.Phi.block(r, k * m, pu, m) = prob.input_set.A;
    c.omega.segment(r, pu) = prob.input_set.b;
    r += pu;
  }
  if (has_box) {
    MatrixXd Hx(2 * n, n);
    Hx << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
    VectorXd hx(2 * n);
    hx << prob.state_box.hi, -prob.state_box.lo;
    for (int k = 1; k < H; ++k) {
      c.Phi.middleRows(r, 2 * n) = Hx * c.Su.middleRows((k - 1) * n, n);
      c.Omega.middleRows(r, 2 * n) = -Hx * c.Sx.middleRows((k - 1) * n, n);
      c.omega.segment(r, 2 * n) = hx;
      r += 2 * n;
    }
  }
  if (!prob.terminal_set.empty()) {
    const int pt = prob.terminal_set.rows();
    c.Phi.middleRows(r, pt) = prob.terminal_set.A * c.Su.middleRows((H - 1) * n, n);
    c.Omega.middleRows(r, pt) = -prob.terminal_set.A * c.Sx.middleRows((H - 1) * n, n);
    c.omega.segment(r, pt) = prob.terminal_set.b;
    r += pt;
  }

  Eigen::LLT<MatrixXd> lc(c.Lambda);
  if (lc.info() != Eigen::Success)
    throw std::invalid_argument("condense: Lambda is not positive definite (check R > 0)");
  return c;
}

std::string CondensedQP::hash() const {
  std::uint64_t h = hash_matrix(Lambda);
  h = hash_matrix(Gamma, h);
  h = hash_matrix(Phi, h);
  h = hash_matrix(Omega, h);
  h = hash_matrix(omega, h);
  std::int64_t dims[3] = {n, m, horizon};
  h = fnv1a(dims, sizeof(dims), h);
  return hash_hex(h);
}

QPSolution solve_condensed(const CondensedQP& c, const VectorXd& x0, const QPOptions& opts) {
  if (x0.size() != c.n) throw std::invalid_argument("solve_condensed: x0 dimension mismatch");
  VectorXd q = c.Gamma.transpose() * x0;
  VectorXd h = c.Omega * x0 + c.omega;
  return solve_qp(2.0 * c.Lambda, q, c.Phi, h, opts);
}

DualQP assemble_dual(const CondensedQP& c) {
  Eigen::LLT<MatrixXd> lc(c.Lambda);
  if (lc.info() != Eigen::Success) throw std::invalid_argument("assemble_dual: Lambda must be PD");
  MatrixXd LiPhiT = lc.solve(c.Phi.transpose());
  MatrixXd LiGammaT = lc.solve(c.Gamma.transpose());
  DualQP d;
  MatrixXd Md = 0.25 * c.Phi * LiPhiT;
  d.M_d = 0.5 * (Md + Md.transpose());
  d.Lx = c.Omega + 0.5 * c.Phi * LiGammaT;
  d.l0 = c.omega;
  MatrixXd Cc = 0.25 * c.Gamma * LiGammaT;
  d.Cconst = 0.5 * (Cc + Cc.transpose());
  return d;
}

VectorXd solve_dual(const DualQP& d, const VectorXd& x0, double ridge) {
  const int p = static_cast<int>(d.M_d.rows());
  if (p == 0) return VectorXd();
  double delta = ridge * (1.0 + d.M_d.trace() / p);
  MatrixXd M = d.M_d + delta * MatrixXd::Identity(p, p);
  VectorXd ell = d.Lx * x0 + d.l0;
  QPSolution s = solve_nonneg_qp(M, ell);
  if (!s.solved()) throw std::runtime_error("solve_dual: nonneg QP hit iteration cap");
  return s.primal;
}

VectorXd recover_primal(const CondensedQP& c, const VectorXd& lambda, const VectorXd& x0) {
  Eigen::LLT<MatrixXd> lc(c.Lambda);
  VectorXd rhs = c.Gamma.transpose() * x0;
  if (lambda.size() > 0) rhs += c.Phi.transpose() * lambda;
  return -0.5 * lc.solve(rhs);
}

OracleResult oracle_control(const CondensedQP& c, const VectorXd& x0, const QPOptions& opts) {
  OracleResult out;
  QPSolution s = solve_condensed(c, x0, opts);
  if (s.status == SolveStatus::MaxIter)
    throw std::runtime_error("oracle_control: solver iteration cap (problem " + c.hash() + ")");
  out.feasible = (s.status == SolveStatus::Solved);
  if (out.feasible) out.u = s.primal.head(c.m);
  out.solution = std::move(s);
  return out;
}

Polyhedron maximal_invariant_set(const MatrixXd& A_cl, const Polyhedron& base, int max_iter) {
  const double tol = 1e-9;
  Polyhedron cur = base;
  MatrixXd frontier = base.A;
  VectorXd frontier_b = base.b;

  auto redundant = [&](const Eigen::RowVectorXd& g, double rhs) {
    LPResult r = lp_solve(-g.transpose(), cur.A, cur.b);
    if (r.status == LPStatus::Unbounded) return false;
    if (r.status == LPStatus::Infeasible) return true;
    return -r.objective <= rhs + tol;
  };

  for (int it = 0; it < max_iter; ++it) {
    MatrixXd cand = frontier * A_cl;
    std::vector<int> added;
    for (int i = 0; i < cand.rows(); ++i) {
      if (redundant(cand.row(i), frontier_b(i))) continue;
      cur.A.conservativeResize(cur.A.rows() + 1, Eigen::NoChange);
      cur.A.row(cur.A.rows() - 1) = cand.row(i);
      cur.b.conservativeResize(cur.b.size() + 1);
      cur.b(cur.b.size() - 1) = frontier_b(i);
      added.push_back(i);
    }
    if (added.empty()) {
      // Fixed point; strip redundant rows for a minimal description.
      std::vector<int> keep;
      for (int i = 0; i < cur.A.rows(); ++i) {
        MatrixXd rest(cur.A.rows() - 1, cur.A.cols());
        VectorXd rest_b(cur.b.size() - 1);
        int w = 0;
        for (int j = 0; j < cur.A.rows(); ++j) {
          if (j == i) continue;
          rest.row(w) = cur.A.row(j);
          rest_b(w) = cur.b(j);
          ++w;
        }
        LPResult r = lp_solve(-cur.A.row(i).transpose(), rest, rest_b);
        if (!(r.status == LPStatus::Optimal && -r.objective <= cur.b(i) + tol)) keep.push_back(i);
      }
      Polyhedron pruned;
      pruned.A.resize(keep.size(), cur.A.cols());
      pruned.b.resize(keep.size());
      for (size_t k = 0; k < keep.size(); ++k) {
        pruned.A.row(k) = cur.A.row(keep[k]);
        pruned.b(k) = cur.b(keep[k]);
      }
      return pruned;
    }
    MatrixXd nf(added.size(), cand.cols());
    VectorXd nfb(added.size());
    for (size_t k = 0; k < added.size(); ++k) {
      nf.row(k) = cand.row(added[k]);
      nfb(k) = frontier_b(added[k]);
    }
    frontier = std::move(nf);
    frontier_b = std::move(nfb);
  }
  throw std::runtime_error("maximal_invariant_set: no fixed point within iteration cap");
}

Polyhedron terminal_invariant_set(const LinearMPCProblem& prob, const MatrixXd& K, int max_iter) {
  const int n = prob.n();
  Polyhedron base;
  int rows = (!prob.state_box.empty() ? 2 * n : 0) + prob.input_set.rows();
  base.A.resize(rows, n);
  base.b.resize(rows);
  int r = 0;
  if (!prob.state_box.empty()) {
    base.A.middleRows(0, n) = MatrixXd::Identity(n, n);
    base.A.middleRows(n, n) = -MatrixXd::Identity(n, n);
    base.b.head(n) = prob.state_box.hi;
    base.b.segment(n, n) = -prob.state_box.lo;
    r = 2 * n;
  }
  if (!prob.input_set.empty()) {
    base.A.middleRows(r, prob.input_set.rows()) = prob.input_set.A * K;
    base.b.segment(r, prob.input_set.rows()) = prob.input_set.b;
  }
  MatrixXd A_cl = prob.A + prob.B * K;
  return maximal_invariant_set(A_cl, base, max_iter);
}

Dataset sample_dataset(const CondensedQP& c, const Box& box, int N, std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("sample_dataset: N must be >= 1");
  if (box.dim() != c.n) throw std::invalid_argument("sample_dataset: box dimension mismatch");

  Dataset ds;
  ds.states.resize(N, c.n);
  ds.labels.resize(N, c.m);
  ds.box = box;
  ds.seed = seed;
  ds.problem_hash = c.hash();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  int accepted = 0;
  long attempts = 0;
  const long probe = 2000;
  VectorXd x(c.n);
  while (accepted < N) {
    ++attempts;
    for (int j = 0; j < c.n; ++j) x(j) = box.lo(j) + (box.hi(j) - box.lo(j)) * unit(rng);
    OracleResult res = oracle_control(c, x);
    if (!res.feasible) {
      if (attempts >= probe && accepted < attempts / 1000.0)
        throw std::runtime_error(
            "sample_dataset: acceptance rate below 0.1%; shrink the sampling box");
      continue;
    }
    ds.states.row(accepted) = x.transpose();
    ds.labels.row(accepted) = res.u.transpose();
    ++accepted;
  }

  ds.label_scale.resize(c.m);
  for (int j = 0; j < c.m; ++j) {
    double mean = ds.labels.col(j).mean();
    double var = (ds.labels.col(j).array() - mean).square().mean();
    double sd = std::sqrt(var);
    ds.label_scale(j) = (sd > 1e-12) ? 1.0 / sd : 1.0;
  }
  return ds;
}

}  // namespace qpfit
