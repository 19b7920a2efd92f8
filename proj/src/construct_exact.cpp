#include "qpfit/qpnet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace qpfit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Incremental assembly of a block-diagonal pQP network. Each block holds a
// factor L_blk and an affine parameter map y1_blk(x) = Fb x + fb.
struct NetBuilder {
  int n;
  std::vector<MatrixXd> Lb, Fb;
  std::vector<VectorXd> fb;
  std::vector<double> gcoef;  // output coefficient per z coordinate
  int width = 0;

  explicit NetBuilder(int n_in) : n(n_in) {}

  // Returns the z-coordinate offset of the added block.
  int add_block(const MatrixXd& L, const MatrixXd& F, const VectorXd& f,
                const VectorXd& out_coef) {
    int at = width;
    Lb.push_back(L);
    Fb.push_back(F);
    fb.push_back(f);
    for (Eigen::Index i = 0; i < out_coef.size(); ++i) gcoef.push_back(out_coef(i));
    width += static_cast<int>(L.cols());
    return at;
  }

  // z* = (a'x + b)+ ; reads into the output with coefficient w.
  int add_relu(const VectorXd& a, double b, double w) {
    MatrixXd L = MatrixXd::Identity(1, 1);
    MatrixXd F = -a.transpose();
    VectorXd f(1);
    f << -b;
    VectorXd oc(1);
    oc << w;
    return add_block(L, F, f, oc);
  }

  // Cascade unit: out = (beta + sum_k theta_k (alpha_k)+ )+, read with
  // coefficient w. Inner rectifiers are private to the block; only the last
  // coordinate is exact and exposed.
  int add_cascade(const VectorXd& beta_a, double beta_b,
                  const std::vector<std::pair<VectorXd, double>>& alphas,
                  const std::vector<double>& thetas, double w) {
    const int k = static_cast<int>(alphas.size());
    const int d = k + 1;
    MatrixXd M = MatrixXd::Zero(d, d);
    M(k, k) = 1.0;
    for (int i = 0; i < k; ++i) {
      M(i, i) = 1.0 + 4.0 * thetas[i] * thetas[i];
      M(i, k) = M(k, i) = -thetas[i];
    }
    Eigen::LLT<MatrixXd> chol(M);
    if (chol.info() != Eigen::Success)
      throw std::logic_error("construct_exact: cascade block not PD");
    MatrixXd L = MatrixXd(chol.matrixL()).transpose();  // L'L = M

    // gamma(x): inner rows are the alpha_i, last row beta + sum theta_i alpha_i.
    MatrixXd Gm(d, n);
    VectorXd g0(d);
    VectorXd last_a = beta_a;
    double last_b = beta_b;
    for (int i = 0; i < k; ++i) {
      Gm.row(i) = alphas[i].first.transpose();
      g0(i) = alphas[i].second;
      last_a += thetas[i] * alphas[i].first;
      last_b += thetas[i] * alphas[i].second;
    }
    Gm.row(k) = last_a.transpose();
    g0(k) = last_b;

    // q = -2 M gamma  <=>  y1 = -L gamma.
    MatrixXd F = -L * Gm;
    VectorXd f = -L * g0;
    VectorXd oc = VectorXd::Zero(d);
    oc(k) = w;
    return add_block(L, F, f, oc);
  }

  QPNetParams finish(const VectorXd& pass_coef, double bias,
                     const ProjectionSpec& proj) const {
    // Pass-through block first: z = [x+, x-, units...].
    int lift = 2 * n, nz = 2 * n;
    for (const auto& L : Lb) {
      lift += static_cast<int>(L.rows());
      nz += static_cast<int>(L.cols());
    }
    QPNetParams p;
    p.eps = 0.0;
    p.L = MatrixXd::Zero(lift, nz);
    p.F = MatrixXd::Zero(lift, n);
    p.f = VectorXd::Zero(lift);
    p.L.topLeftCorner(2 * n, 2 * n).setIdentity();
    p.F.topRows(n) = -MatrixXd::Identity(n, n);
    p.F.middleRows(n, n) = MatrixXd::Identity(n, n);
    int ro = 2 * n, co = 2 * n;
    for (size_t b = 0; b < Lb.size(); ++b) {
      p.L.block(ro, co, Lb[b].rows(), Lb[b].cols()) = Lb[b];
      p.F.middleRows(ro, Fb[b].rows()) = Fb[b];
      p.f.segment(ro, fb[b].size()) = fb[b];
      ro += static_cast<int>(Lb[b].rows());
      co += static_cast<int>(Lb[b].cols());
    }
    p.G = MatrixXd::Zero(1, nz);
    p.G.block(0, 0, 1, n) = pass_coef.transpose();
    p.G.block(0, n, 1, n) = -pass_coef.transpose();
    for (size_t j = 0; j < gcoef.size(); ++j) p.G(0, 2 * n + static_cast<int>(j)) = gcoef[j];
    p.g = VectorXd::Constant(1, bias);
    p.projection = proj;
    return p;
  }
};

struct BoxBounds {
  VectorXd lo, hi;  // +-inf where absent
};

// Recognizes an input-box constraint system: Omega = 0 and every Phi row
// supported on a single coordinate.
bool extract_box(const CondensedQP& c, BoxBounds& bb) {
  const int D = c.dim();
  if (c.Omega.rows() > 0 && c.Omega.cwiseAbs().maxCoeff() > 1e-12) return false;
  bb.lo = VectorXd::Constant(D, -kInf);
  bb.hi = VectorXd::Constant(D, kInf);
  for (int i = 0; i < c.Phi.rows(); ++i) {
    int nz = -1;
    for (int j = 0; j < D; ++j)
      if (std::abs(c.Phi(i, j)) > 1e-12) {
        if (nz >= 0) return false;
        nz = j;
      }
    if (nz < 0) return false;
    double a = c.Phi(i, nz), b = c.omega(i);
    if (a > 0)
      bb.hi(nz) = std::min(bb.hi(nz), b / a);
    else
      bb.lo(nz) = std::max(bb.lo(nz), b / a);
  }
  return true;
}

// The lifted dual construction of the representation theorem, valid when
// the linear-term equation Phi Ltil y1 = l(x) is solvable exactly.
QPNetParams lifted_dual_construction(const CondensedQP& c, const ProjectionSpec& proj,
                                     double residual_tol, bool& consistent) {
  const int n = c.n, D = c.dim(), p = c.rows();
  Eigen::LLT<MatrixXd> lc(c.Lambda);
  MatrixXd Lam_inv = lc.solve(MatrixXd::Identity(D, D));
  MatrixXd Lam_tilde = spd_sqrt(Lam_inv);

  MatrixXd Gfull(D, 2 * n + p);
  MatrixXd half_LiG = 0.5 * lc.solve(c.Gamma.transpose());  // 0.5 Lambda^{-1} Gamma'
  Gfull.leftCols(n) = -half_LiG;
  Gfull.middleCols(n, n) = half_LiG;
  Gfull.rightCols(p) = -0.5 * lc.solve(c.Phi.transpose());

  QPNetParams net;
  net.eps = 0.0;
  if (p == 0) {
    net.L = MatrixXd::Identity(2 * n, 2 * n);
    net.F = MatrixXd::Zero(2 * n, n);
    net.F.topRows(n) = -MatrixXd::Identity(n, n);
    net.F.bottomRows(n) = MatrixXd::Identity(n, n);
    net.f = VectorXd::Zero(2 * n);
    net.G = Gfull.topRows(c.m).leftCols(2 * n);
    net.g = VectorXd::Zero(c.m);
    net.projection = proj;
    consistent = true;
    return net;
  }

  MatrixXd T = c.Phi * Lam_tilde;  // p x D
  // l(x) = (Omega + 0.5 Phi Lambda^{-1} Gamma') x + omega
  MatrixXd rhs(p, n + 1);
  rhs.leftCols(n) = c.Omega + c.Phi * half_LiG;
  rhs.col(n) = c.omega;
  MatrixXd sol = T.completeOrthogonalDecomposition().solve(rhs);
  double resid = (T * sol - rhs).cwiseAbs().maxCoeff();
  consistent = resid <= residual_tol * (1.0 + rhs.cwiseAbs().maxCoeff());
  if (!consistent) return net;

  MatrixXd Ftil = sol.leftCols(n);
  VectorXd ftil = sol.col(n);

  const int lift = 2 * n + D, nz = 2 * n + p;
  net.L = MatrixXd::Zero(lift, nz);
  net.L.topLeftCorner(2 * n, 2 * n).setIdentity();
  net.L.bottomRightCorner(D, p) = 0.5 * (c.Phi * Lam_tilde).transpose();
  net.F = MatrixXd::Zero(lift, n);
  net.F.topRows(n) = -MatrixXd::Identity(n, n);
  net.F.middleRows(n, n) = MatrixXd::Identity(n, n);
  net.F.bottomRows(D) = Ftil;
  net.f = VectorXd::Zero(lift);
  net.f.tail(D) = ftil;
  net.G = Gfull.topRows(c.m);
  net.g = VectorXd::Zero(c.m);
  net.projection = proj;
  return net;
}

// Exact synthesis for single-input problems with pure input-box constraints.
// The first move's own bounds are delegated to the saturation layer
// (relaxing an active constraint pushes the relaxed optimum past the bound,
// so clipping the relaxed law reproduces the constrained one); the remaining
// moves' box-QP is unrolled into rectifier cascades.
QPNetParams box_cascade_construction(const CondensedQP& c, const BoxBounds& bb) {
  const int n = c.n, D = c.dim();
  if (c.m != 1)
    throw std::runtime_error(
        "construct_exact: constraint system is inconsistent with the lifted dual "
        "construction and the box synthesis needs m = 1");
  if (D > 3)
    throw std::runtime_error(
        "construct_exact: box synthesis implemented for horizon*m <= 3");

  Eigen::LLT<MatrixXd> lc(c.Lambda);
  const double l00 = c.Lambda(0, 0);
  VectorXd gamma0 = c.Gamma.col(0);     // linear-term coefficient of u0
  NetBuilder nb(n);

  // u0 eliminated: u0(w, x) = -(lambda_0w' w + 0.5 gamma0' x)/l00.
  VectorXd c0 = -0.5 * gamma0 / l00;
  double bias = 0.0;
  VectorXd pass = c0;

  const int Dw = D - 1;
  if (Dw > 0) {
    VectorXd l0w = c.Lambda.block(1, 0, Dw, 1);  // column under u0
    MatrixXd Lw = c.Lambda.bottomRightCorner(Dw, Dw) - l0w * l0w.transpose() / l00;
    MatrixXd Gw(n, Dw);  // reduced linear-term coefficients
    for (int k = 0; k < Dw; ++k) Gw.col(k) = c.Gamma.col(k + 1) - gamma0 * (l0w(k) / l00);
    VectorXd d0 = -l0w / l00;

    // Per component k of w: hat_w_k = relaxed law (own bounds dropped),
    // w_k* = sat_k(hat_w_k).
    for (int k = 0; k < Dw; ++k) {
      // beta_k(x) + theta_A h_A + theta_B h_B with h_* inner rectifiers.
      VectorXd beta_a;
      double beta_b = 0.0;
      std::vector<std::pair<VectorXd, double>> inner;
      std::vector<double> theta;

      if (Dw == 1) {
        beta_a = -Gw.col(0) / (2.0 * Lw(0, 0));
      } else {
        const int j = 1 - k;
        double sj = Lw(j, j) - Lw(j, k) * Lw(j, k) / Lw(k, k);
        VectorXd clin = Gw.col(j) - (Lw(j, k) / Lw(k, k)) * Gw.col(k);
        VectorXd alpha = -clin / (2.0 * sj);  // pre-saturation law of w_j
        double rk = -Lw(j, k) / Lw(k, k);
        VectorXd pk = -Gw.col(k) / (2.0 * Lw(k, k));

        beta_a = pk + rk * alpha;
        if (std::isfinite(bb.hi(j + 1))) {
          inner.push_back({alpha, -bb.hi(j + 1)});  // (alpha - hi_j)+
          theta.push_back(-rk);
        }
        if (std::isfinite(bb.lo(j + 1))) {
          inner.push_back({-alpha, bb.lo(j + 1)});  // (lo_j - alpha)+
          theta.push_back(rk);
        }
      }

      // hat_w_k read-out: beta + sum theta_i h_i (clean standalone copies).
      pass += d0(k) * beta_a;
      bias += d0(k) * beta_b;
      for (size_t i = 0; i < inner.size(); ++i)
        nb.add_relu(inner[i].first, inner[i].second, d0(k) * theta[i]);

      // Saturation of hat_w_k at w_k's own bounds. The inner pair is
      // complementary (one saturation expanded), so
      //   (b + t1 h1 + t2 h2)+ = (b + t1 h1)+ + (b + t2 h2)+ - (b)+
      // splits every unit into verified single-inner cascades.
      auto add_sat_hinge = [&](const VectorXd& ba, double bbias, double sign_theta, double w) {
        if (inner.empty()) {
          nb.add_relu(ba, bbias, w);
          return;
        }
        for (size_t i = 0; i < inner.size(); ++i)
          nb.add_cascade(ba, bbias, {inner[i]}, {sign_theta * theta[i]}, w);
        if (inner.size() > 1) nb.add_relu(ba, bbias, -w * (static_cast<double>(inner.size()) - 1.0));
      };
      double wk_hi = bb.hi(k + 1), wk_lo = bb.lo(k + 1);
      if (std::isfinite(wk_hi))
        add_sat_hinge(beta_a, beta_b - wk_hi, 1.0, -d0(k));   // -(hat_w_k - hi)+
      if (std::isfinite(wk_lo))
        add_sat_hinge(-beta_a, wk_lo - beta_b, -1.0, d0(k));  // +(lo - hat_w_k)+
    }
  }

  ProjectionSpec proj = ProjectionSpec::none();
  if (std::isfinite(bb.lo(0)) || std::isfinite(bb.hi(0))) {
    VectorXd lo = VectorXd::Constant(1, std::isfinite(bb.lo(0)) ? bb.lo(0) : -1e30);
    VectorXd hi = VectorXd::Constant(1, std::isfinite(bb.hi(0)) ? bb.hi(0) : 1e30);
    proj = ProjectionSpec::box(lo, hi);
  }
  return nb.finish(pass, bias, proj);
}

void self_verify(const QPNetParams& net, const CondensedQP& c, const ConstructOptions& opts) {
  Box box = opts.verify_box;
  if (box.empty()) {
    box.lo = VectorXd::Constant(c.n, -2.0);
    box.hi = VectorXd::Constant(c.n, 2.0);
  }
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  double worst = 0.0;
  for (int t = 0; t < 20 * opts.verify_samples && checked < opts.verify_samples; ++t) {
    VectorXd x(c.n);
    for (int j = 0; j < c.n; ++j) x(j) = box.lo(j) + (box.hi(j) - box.lo(j)) * unit(rng);
    auto res = oracle_control(c, x);
    if (!res.feasible) continue;
    ++checked;
    VectorXd u_net = forward(net, x).y4;
    worst = std::max(worst, (u_net - res.u).cwiseAbs().maxCoeff());
  }
  if (checked < opts.verify_samples / 2)
    throw std::runtime_error("construct_exact: verification box yields too few feasible states");
  if (worst > opts.verify_tol)
    throw std::runtime_error("construct_exact: self-check failed, max deviation " +
                             std::to_string(worst));
}

}  // namespace

QPNetParams construct_exact(const CondensedQP& c, const ProjectionSpec& input_proj,
                            const ConstructOptions& opts) {
  bool consistent = false;
  QPNetParams net = lifted_dual_construction(c, input_proj, opts.residual_tol, consistent);
  if (!consistent) {
    BoxBounds bb;
    if (!extract_box(c, bb))
      throw std::runtime_error(
          "construct_exact: linear-term equation inconsistent and constraints are not an "
          "input box; no exact construction available");
    net = box_cascade_construction(c, bb);
  }
  self_verify(net, c, opts);
  return net;
}

}  // namespace qpfit
