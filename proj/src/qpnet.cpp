#include "qpfit/qpnet.hpp"

#include <random>
#include <stdexcept>

namespace qpfit {

ProjectionSpec ProjectionSpec::none() {
  ProjectionSpec s;
  s.kind = ProjectionKind::None;
  return s;
}

ProjectionSpec ProjectionSpec::box(const VectorXd& lo, const VectorXd& hi) {
  if (lo.size() != hi.size() || (hi - lo).minCoeff() < 0)
    throw std::invalid_argument("ProjectionSpec::box: need lo <= hi");
  ProjectionSpec s;
  s.kind = ProjectionKind::Box;
  s.lo = lo;
  s.hi = hi;
  return s;
}

ProjectionSpec ProjectionSpec::psi_sat(const MatrixXd& psi, double lo, double hi) {
  if (hi < lo) throw std::invalid_argument("ProjectionSpec::psi_sat: need lo <= hi");
  ProjectionSpec s;
  s.kind = ProjectionKind::PsiSat;
  s.psi = psi;
  s.sat_lo = lo;
  s.sat_hi = hi;
  return s;
}

ProjectionSpec ProjectionSpec::polyhedron(const Polyhedron& p) {
  if (!lp_feasible(p.A, p.b)) throw std::invalid_argument("ProjectionSpec: empty polyhedron");
  ProjectionSpec s;
  s.kind = ProjectionKind::Polyhedron;
  s.poly = p;
  return s;
}

VectorXd ProjectionSpec::apply(const VectorXd& y3) const {
  switch (kind) {
    case ProjectionKind::None:
      return y3;
    case ProjectionKind::Box:
      return y3.cwiseMax(lo).cwiseMin(hi);
    case ProjectionKind::PsiSat:
      return psi * y3.cwiseMax(sat_lo).cwiseMin(sat_hi);
    case ProjectionKind::Polyhedron: {
      // argmin 0.5||u - y3||^2 s.t. A u <= b
      auto s = solve_qp(MatrixXd::Identity(y3.size(), y3.size()), -y3, poly.A, poly.b);
      if (!s.solved()) throw std::runtime_error("projection: QP failed");
      return s.primal;
    }
  }
  throw std::logic_error("unreachable");
}

VectorXd ProjectionSpec::backward(const VectorXd& y3, const VectorXd& dl_dy4) const {
  switch (kind) {
    case ProjectionKind::None:
      return dl_dy4;
    case ProjectionKind::Box: {
      VectorXd out = dl_dy4;
      for (Eigen::Index i = 0; i < y3.size(); ++i)
        if (y3(i) <= lo(i) || y3(i) >= hi(i)) out(i) = 0.0;
      return out;
    }
    case ProjectionKind::PsiSat: {
      VectorXd out = psi.transpose() * dl_dy4;
      for (Eigen::Index i = 0; i < y3.size(); ++i)
        if (y3(i) <= sat_lo || y3(i) >= sat_hi) out(i) = 0.0;
      return out;
    }
    case ProjectionKind::Polyhedron: {
      // Jacobian of the projection: orthogonal projector onto the null
      // space of the strictly active rows.
      auto s = solve_qp(MatrixXd::Identity(y3.size(), y3.size()), -y3, poly.A, poly.b);
      if (!s.solved()) throw std::runtime_error("projection backward: QP failed");
      std::vector<int> act;
      for (int i : s.active_set)
        if (s.dual(i) > 1e-10) act.push_back(i);
      if (act.empty()) return dl_dy4;
      MatrixXd Ca(act.size(), y3.size());
      for (size_t k = 0; k < act.size(); ++k) Ca.row(k) = poly.A.row(act[k]);
      MatrixXd S = Ca * Ca.transpose();
      VectorXd tmp = Ca * dl_dy4;
      return dl_dy4 - Ca.transpose() * S.ldlt().solve(tmp);
    }
  }
  throw std::logic_error("unreachable");
}

MatrixXd QPNetParams::quadratic() const {
  MatrixXd M = L.transpose() * L;
  M.diagonal().array() += eps;
  return 0.5 * (M + M.transpose());
}

ForwardTrace forward(const QPNetParams& p, const VectorXd& x) {
  if (x.size() != p.n()) throw std::invalid_argument("forward: input dimension mismatch");
  if (p.F.rows() != p.L.rows()) throw std::invalid_argument("forward: F rows must match L rows");
  ForwardTrace t;
  t.x = x;
  t.y1 = p.F * x + p.f;
  VectorXd c = 2.0 * p.L.transpose() * t.y1;
  QPSolution s = solve_nonneg_qp(p.quadratic(), c);
  if (!s.solved()) throw std::runtime_error("forward: pQP solver hit iteration cap");
  if (s.kkt_residual > 1e-8 * (1.0 + c.cwiseAbs().maxCoeff()))
    throw std::runtime_error("forward: pQP KKT residual above tolerance");
  t.z = s.primal;
  t.lambda = s.dual;
  t.active = s.active_set;
  t.kkt_residual = s.kkt_residual;
  t.y3 = p.G * t.z + p.g;
  t.y4 = p.projection.apply(t.y3);
  return t;
}

void ParamGradients::setZero(const QPNetParams& p) {
  dF = MatrixXd::Zero(p.F.rows(), p.F.cols());
  df = VectorXd::Zero(p.f.size());
  dL = MatrixXd::Zero(p.L.rows(), p.L.cols());
  dG = MatrixXd::Zero(p.G.rows(), p.G.cols());
  dg = VectorXd::Zero(p.g.size());
}

void ParamGradients::accumulate(const ParamGradients& o, double w) {
  dF += w * o.dF;
  df += w * o.df;
  dL += w * o.dL;
  dG += w * o.dG;
  dg += w * o.dg;
}

void ParamGradients::scale(double s) {
  dF *= s;
  df *= s;
  dL *= s;
  dG *= s;
  dg *= s;
}

void pqp_backward(const ForwardTrace& t, const QPNetParams& p, const VectorXd& dl_dz,
                  MatrixXd& dL, VectorXd& dy1) {
  const int nz = p.nz();
  dL = MatrixXd::Zero(p.L.rows(), nz);
  dy1 = VectorXd::Zero(p.L.rows());

  // Sensitivities live on the strictly positive coordinates; z_i = 0
  // (weakly active included) is treated as pinned.
  std::vector<int> F;
  F.reserve(nz);
  for (int i = 0; i < nz; ++i)
    if (t.z(i) > 0.0) F.push_back(i);
  if (F.empty()) return;

  MatrixXd M = p.quadratic();
  MatrixXd MFF(F.size(), F.size());
  VectorXd wF(F.size());
  for (size_t a = 0; a < F.size(); ++a) {
    wF(a) = dl_dz(F[a]);
    for (size_t b = 0; b < F.size(); ++b) MFF(a, b) = M(F[a], F[b]);
  }
  Eigen::LLT<MatrixXd> chol(MFF);
  VectorXd vF;
  if (chol.info() == Eigen::Success) {
    vF = -0.5 * chol.solve(wF);
  } else {
    Eigen::LDLT<MatrixXd> ldlt(MFF);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("pqp_backward: singular reduced KKT block");
    vF = -0.5 * ldlt.solve(wF);
  }

  VectorXd v = VectorXd::Zero(nz);
  for (size_t a = 0; a < F.size(); ++a) v(F[a]) = vF(a);

  // dloss = v'(dc + 2 dM z) with c = 2 L'y1, M = eps I + L'L:
  //   d/dy1 = 2 L v
  //   d/dL  = 2 [ L (z v' + v z') + y1 v' ]
  dy1 = 2.0 * p.L * v;
  dL = 2.0 * (p.L * (t.z * v.transpose() + v * t.z.transpose()) + t.y1 * v.transpose());
}

ParamGradients backward(const ForwardTrace& t, const QPNetParams& p, const VectorXd& dl_dy4) {
  ParamGradients g;
  g.setZero(p);

  VectorXd dl_dy3 = p.projection.backward(t.y3, dl_dy4);
  g.dG = dl_dy3 * t.z.transpose();
  g.dg = dl_dy3;

  VectorXd dl_dz = p.G.transpose() * dl_dy3;
  VectorXd dy1;
  pqp_backward(t, p, dl_dz, g.dL, dy1);
  g.dF = dy1 * t.x.transpose();
  g.df = dy1;
  return g;
}

namespace {

int saturation_code(const ProjectionSpec& proj, const VectorXd& y3, Eigen::Index i) {
  if (proj.kind == ProjectionKind::Box) {
    if (y3(i) <= proj.lo(i)) return -1;
    if (y3(i) >= proj.hi(i)) return 1;
  } else if (proj.kind == ProjectionKind::PsiSat) {
    if (y3(i) <= proj.sat_lo) return -1;
    if (y3(i) >= proj.sat_hi) return 1;
  }
  return 0;
}

bool same_activation_pattern(const QPNetParams& p, const ForwardTrace& a, const ForwardTrace& b) {
  if (a.active != b.active) return false;
  for (Eigen::Index i = 0; i < a.y3.size(); ++i)
    if (saturation_code(p.projection, a.y3, i) != saturation_code(p.projection, b.y3, i))
      return false;
  return true;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double eps_grid[3] = {1e-4, 1e-2, 1.0};

  GradCheckResult res;
  res.instances = cfg.instances;

  for (int inst = 0; inst < cfg.instances; ++inst) {
    int n = 1 + static_cast<int>(rng() % 4);
    int nz = 1 + static_cast<int>(rng() % 8);
    int m = 1 + static_cast<int>(rng() % 3);
    QPNetParams p;
    p.F.resize(nz, n);
    p.L.resize(nz, nz);
    p.G.resize(m, nz);
    p.f.resize(nz);
    p.g.resize(m);
    for (int i = 0; i < nz; ++i) {
      p.f(i) = nd(rng);
      for (int j = 0; j < n; ++j) p.F(i, j) = nd(rng);
      for (int j = 0; j < nz; ++j) p.L(i, j) = 0.7 * nd(rng);
    }
    for (int i = 0; i < m; ++i) {
      p.g(i) = nd(rng);
      for (int j = 0; j < nz; ++j) p.G(i, j) = nd(rng);
    }
    p.eps = eps_grid[rng() % 3];
    if (inst % 3 == 0)
      p.projection = ProjectionSpec::box(VectorXd::Constant(m, -0.5), VectorXd::Constant(m, 0.5));
    else
      p.projection = ProjectionSpec::none();

    VectorXd x(n), target(m);
    for (int j = 0; j < n; ++j) x(j) = nd(rng);
    for (int j = 0; j < m; ++j) target(j) = nd(rng);

    ForwardTrace t0 = forward(p, x);
    ParamGradients an = backward(t0, p, t0.y4 - target);

    auto probe = [&](double* entry, double analytic) {
      const double orig = *entry;
      *entry = orig + cfg.step;
      ForwardTrace tp = forward(p, x);
      *entry = orig - cfg.step;
      ForwardTrace tm = forward(p, x);
      *entry = orig;
      if (!same_activation_pattern(p, tp, tm)) {
        ++res.entries_skipped;
        return;
      }
      double lp = 0.5 * (tp.y4 - target).squaredNorm();
      double lm = 0.5 * (tm.y4 - target).squaredNorm();
      double fd = (lp - lm) / (2.0 * cfg.step);
      double rel = std::abs(analytic - fd) / std::max({std::abs(fd), std::abs(analytic), 1.0});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.entries_checked;
    };

    for (int i = 0; i < p.F.rows(); ++i)
      for (int j = 0; j < p.F.cols(); ++j) probe(&p.F(i, j), an.dF(i, j));
    for (int i = 0; i < p.f.size(); ++i) probe(&p.f(i), an.df(i));
    for (int i = 0; i < p.L.rows(); ++i)
      for (int j = 0; j < p.L.cols(); ++j) probe(&p.L(i, j), an.dL(i, j));
    for (int i = 0; i < p.G.rows(); ++i)
      for (int j = 0; j < p.G.cols(); ++j) probe(&p.G(i, j), an.dG(i, j));
    for (int i = 0; i < p.g.size(); ++i) probe(&p.g(i), an.dg(i));
  }

  res.pass = res.entries_checked > 0 && res.max_rel_err <= cfg.rel_tol;
  return res;
}

}  // namespace qpfit
