#include "doctest.h"
#include "qpfit/qpnet.hpp"
#include "oracles.hpp"

#include <random>

using namespace qpfit;

namespace {

LinearMPCProblem toy_1d() {
  LinearMPCProblem p;
  p.A = MatrixXd::Ones(1, 1);
  p.B = MatrixXd::Ones(1, 1);
  p.Q = MatrixXd::Ones(1, 1);
  p.R = MatrixXd::Ones(1, 1);
  p.P = MatrixXd::Ones(1, 1);
  p.horizon = 1;
  p.input_set.A = MatrixXd(2, 1);
  p.input_set.A << 1.0, -1.0;
  p.input_set.b = VectorXd::Ones(2);
  return p;
}

LinearMPCProblem double_integrator_box_inputs(int H) {
  LinearMPCProblem p;
  p.A = MatrixXd(2, 2);
  p.A << 1.0, 1.0, 0.0, 1.0;
  p.B = MatrixXd(2, 1);
  p.B << 0.5, 1.0;
  p.Q = MatrixXd::Identity(2, 2);
  p.R = MatrixXd::Identity(1, 1);
  p.P = dare_solve(p.A, p.B, p.Q, p.R).P;
  p.horizon = H;
  p.input_set.A = MatrixXd(2, 1);
  p.input_set.A << 1.0, -1.0;
  p.input_set.b = VectorXd::Ones(2);
  return p;
}

QPNetParams random_net(int n, int nz, int m, double eps, std::mt19937_64& rng,
                       ProjectionSpec proj) {
  QPNetParams p;
  p.F = oracles::random_mat(nz, n, rng);
  p.f = oracles::random_vec(nz, rng);
  p.L = oracles::random_mat(nz, nz, rng, 0.7);
  p.eps = eps;
  p.G = oracles::random_mat(m, nz, rng);
  p.g = oracles::random_vec(m, rng);
  p.projection = std::move(proj);
  return p;
}

double loss_of(const QPNetParams& p, const VectorXd& x, const VectorXd& target) {
  VectorXd y4 = forward(p, x).y4;
  return 0.5 * (y4 - target).squaredNorm();
}

// Central finite differences on every parameter entry, skipping entries where
// the perturbation crosses an active-set or saturation-pattern change.
struct FDCheckStats {
  int checked = 0;
  int skipped = 0;
  double max_rel_err = 0.0;
};

bool same_pattern(const QPNetParams& p, const ForwardTrace& a, const ForwardTrace& b) {
  if (a.active != b.active) return false;
  if (p.projection.kind == ProjectionKind::Box) {
    for (Eigen::Index i = 0; i < a.y3.size(); ++i) {
      auto code = [&](const ForwardTrace& t) {
        if (t.y3(i) <= p.projection.lo(i)) return -1;
        if (t.y3(i) >= p.projection.hi(i)) return 1;
        return 0;
      };
      if (code(a) != code(b)) return false;
    }
  }
  if (p.projection.kind == ProjectionKind::PsiSat) {
    for (Eigen::Index i = 0; i < a.y3.size(); ++i) {
      auto code = [&](const ForwardTrace& t) {
        if (t.y3(i) <= p.projection.sat_lo) return -1;
        if (t.y3(i) >= p.projection.sat_hi) return 1;
        return 0;
      };
      if (code(a) != code(b)) return false;
    }
  }
  return true;
}

FDCheckStats fd_check(QPNetParams p, const VectorXd& x, const VectorXd& target,
                      double h = 1e-5) {
  ForwardTrace t0 = forward(p, x);
  VectorXd dl_dy4 = t0.y4 - target;
  ParamGradients an = backward(t0, p, dl_dy4);

  FDCheckStats st;
  auto probe = [&](double* entry, double analytic) {
    double orig = *entry;
    *entry = orig + h;
    ForwardTrace tp = forward(p, x);
    double lp = 0.5 * (tp.y4 - target).squaredNorm();
    *entry = orig - h;
    ForwardTrace tm = forward(p, x);
    double lm = 0.5 * (tm.y4 - target).squaredNorm();
    *entry = orig;
    if (!same_pattern(p, tp, tm)) {
      ++st.skipped;
      return;
    }
    double fd = (lp - lm) / (2.0 * h);
    double rel = std::abs(analytic - fd) / std::max({std::abs(fd), std::abs(analytic), 1.0});
    st.max_rel_err = std::max(st.max_rel_err, rel);
    ++st.checked;
  };

  for (int i = 0; i < p.F.rows(); ++i)
    for (int j = 0; j < p.F.cols(); ++j) probe(&p.F(i, j), an.dF(i, j));
  for (int i = 0; i < p.f.size(); ++i) probe(&p.f(i), an.df(i));
  for (int i = 0; i < p.L.rows(); ++i)
    for (int j = 0; j < p.L.cols(); ++j) probe(&p.L(i, j), an.dL(i, j));
  for (int i = 0; i < p.G.rows(); ++i)
    for (int j = 0; j < p.G.cols(); ++j) probe(&p.G(i, j), an.dG(i, j));
  for (int i = 0; i < p.g.size(); ++i) probe(&p.g(i), an.dg(i));
  return st;
}

}  // namespace

TEST_SUITE_BEGIN("qpnet");

TEST_CASE("forward: zero pQP input passes the bias through") {
  QPNetParams p;
  p.F = MatrixXd::Zero(2, 3);
  p.f = VectorXd::Zero(2);
  p.L = MatrixXd::Identity(2, 2);
  p.eps = 0.0;
  p.G = MatrixXd::Zero(2, 2);
  p.g = VectorXd(2);
  p.g << 0.3, -0.4;
  p.projection = ProjectionSpec::box(VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 1.0));
  auto t = forward(p, VectorXd::Random(3));
  CHECK((t.y4 - p.g).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward: clamp closed form") {
  QPNetParams p;
  p.F = -MatrixXd::Identity(2, 2);
  p.f = VectorXd::Zero(2);
  p.L = MatrixXd::Identity(2, 2);
  p.eps = 0.0;
  p.G = MatrixXd::Identity(2, 2);
  p.g = VectorXd::Zero(2);
  p.projection = ProjectionSpec::box(VectorXd::Constant(2, -10.0), VectorXd::Constant(2, 10.0));

  VectorXd x(2);
  x << 1.0, 2.0;
  auto t = forward(p, x);
  CHECK(t.y1(0) == doctest::Approx(-1.0));
  CHECK(t.y1(1) == doctest::Approx(-2.0));
  CHECK(t.z(0) == doctest::Approx(1.0));
  CHECK(t.z(1) == doctest::Approx(2.0));
  CHECK(t.y4(0) == doctest::Approx(1.0));
  CHECK(t.y4(1) == doctest::Approx(2.0));

  x << -3.0, 5.0;
  t = forward(p, x);
  CHECK(t.z(0) == doctest::Approx(0.0));
  CHECK(t.z(1) == doctest::Approx(5.0));
  CHECK(t.y4(0) == doctest::Approx(0.0));
  CHECK(t.y4(1) == doctest::Approx(5.0));
}

TEST_CASE("project: saturation and Lunze composition") {
  // clamp(400, 0, 315) = 315
  MatrixXd psi(3, 3);
  psi << 2, -1, -1, -1, 2, -1, 1, 1, 1;
  psi /= 3.0;
  auto ps = ProjectionSpec::psi_sat(psi, 0.0, 315.0);
  VectorXd v(3);
  v << 350.0, 350.0, 350.0;
  VectorXd y = ps.apply(v);
  CHECK(y(0) == doctest::Approx(0.0));
  CHECK(y(1) == doctest::Approx(0.0));
  CHECK(y(2) == doctest::Approx(315.0));

  auto bx = ProjectionSpec::box(VectorXd::Zero(1), VectorXd::Constant(1, 315.0));
  CHECK(bx.apply(VectorXd::Constant(1, 400.0))(0) == doctest::Approx(315.0));
  CHECK(bx.apply(VectorXd::Constant(1, 200.0))(0) == doctest::Approx(200.0));
}

TEST_CASE("pqp_backward: interior optimum has dz/dy1 = -I") {
  QPNetParams p;
  p.F = -MatrixXd::Identity(2, 2);
  p.f = VectorXd::Zero(2);
  p.L = MatrixXd::Identity(2, 2);
  p.eps = 0.0;
  p.G = MatrixXd::Identity(2, 2);
  p.g = VectorXd::Zero(2);
  p.projection = ProjectionSpec::none();

  VectorXd x(2);
  x << 1.0, 2.0;  // interior: z* = (1, 2) > 0
  auto t = forward(p, x);
  VectorXd w(2);
  w << 0.7, -0.3;
  MatrixXd dL;
  VectorXd dy1;
  pqp_backward(t, p, w, dL, dy1);
  CHECK((dy1 + w).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("pqp_backward: fully clamped optimum has zero gradients") {
  QPNetParams p;
  p.F = MatrixXd::Identity(2, 2);
  p.f = VectorXd::Zero(2);
  p.L = MatrixXd::Identity(2, 2);
  p.eps = 0.1;
  p.G = MatrixXd::Identity(2, 2);
  p.g = VectorXd::Zero(2);
  p.projection = ProjectionSpec::none();

  VectorXd x(2);
  x << 3.0, 4.0;  // c = 2 L' y1 > 0 componentwise -> z* = 0
  auto t = forward(p, x);
  REQUIRE(t.z.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  VectorXd w(2);
  w << 1.0, 1.0;
  MatrixXd dL;
  VectorXd dy1;
  pqp_backward(t, p, w, dL, dy1);
  CHECK(dy1.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(dL.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
  std::mt19937_64 rng(21);
  auto p = random_net(3, 4, 2, 1e-2, rng, ProjectionSpec::none());
  VectorXd x = oracles::random_vec(3, rng);
  auto t = forward(p, x);
  auto g = backward(t, p, VectorXd::Zero(2));
  CHECK(g.dF.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(g.dL.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(g.dG.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("backward: saturated output component contributes nothing to G, g") {
  std::mt19937_64 rng(22);
  // intentionally tiny box to force saturation
  VectorXd lo = VectorXd::Constant(2, -0.01);
  VectorXd hi = VectorXd::Constant(2, 0.01);
  auto p = random_net(3, 4, 2, 1e-2, rng, ProjectionSpec::box(lo, hi));
  VectorXd x = oracles::random_vec(3, rng, 3.0);
  auto t = forward(p, x);
  for (int i = 0; i < 2; ++i) {
    if (t.y3(i) > hi(i) || t.y3(i) < lo(i)) {
      VectorXd dl = VectorXd::Zero(2);
      dl(i) = 1.0;
      auto g = backward(t, p, dl);
      CHECK(g.dG.row(i).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
      CHECK(g.dg(i) == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("full-network finite-difference check (n=2, nz=3, m=1)") {
  std::mt19937_64 rng(23);
  auto p = random_net(2, 3, 1, 1e-2, rng, ProjectionSpec::none());
  VectorXd x = oracles::random_vec(2, rng);
  VectorXd target = oracles::random_vec(1, rng);
  auto st = fd_check(p, x, target);
  REQUIRE(st.checked > 0);
  CHECK(st.max_rel_err < 1e-4);
}

TEST_CASE("gradient fidelity across eps, sizes and projections") {
  std::mt19937_64 rng(24);
  std::vector<double> epss = {1e-4, 1e-2, 1.0};
  int total_checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    int n = 1 + static_cast<int>(rng() % 4);
    int nz = 1 + static_cast<int>(rng() % 8);
    int m = 1 + static_cast<int>(rng() % 2);
    double eps = epss[rng() % 3];
    ProjectionSpec proj = (trial % 3 == 0)
                              ? ProjectionSpec::box(VectorXd::Constant(m, -0.5),
                                                    VectorXd::Constant(m, 0.5))
                              : ProjectionSpec::none();
    auto p = random_net(n, nz, m, eps, rng, proj);
    VectorXd x = oracles::random_vec(n, rng);
    VectorXd target = oracles::random_vec(m, rng);
    auto st = fd_check(p, x, target);
    total_checked += st.checked;
    CHECK(st.max_rel_err < 1e-4);
  }
  CHECK(total_checked > 500);
}

TEST_CASE("piecewise affinity inside a fixed active set") {
  std::mt19937_64 rng(25);
  auto p = random_net(2, 4, 2, 1e-2, rng, ProjectionSpec::none());
  for (int t = 0; t < 50; ++t) {
    VectorXd a = oracles::random_vec(2, rng);
    VectorXd b = a + oracles::random_vec(2, rng, 1e-3);
    auto ta = forward(p, a);
    auto tb = forward(p, b);
    if (ta.active != tb.active) continue;
    VectorXd mid_in = 0.5 * (a + b);
    auto tm = forward(p, mid_in);
    if (tm.active != ta.active) continue;
    VectorXd expect = 0.5 * (ta.y4 + tb.y4);
    CHECK((tm.y4 - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("cascade gadget: single-inner unit (beta + theta (alpha)+)+ is exact") {
  // Dense randomized verification of the coupled two-variable block the box
  // synthesis is built from, over both coupling signs and wide magnitudes.
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> ud(-3.0, 3.0);
  for (int inst = 0; inst < 60; ++inst) {
    double th = ud(rng);
    if (std::abs(th) < 1e-3) continue;
    MatrixXd M(2, 2);
    M << 1.0 + 4.0 * th * th, -th, -th, 1.0;
    REQUIRE(Eigen::LLT<MatrixXd>(M).info() == Eigen::Success);

    std::uniform_real_distribution<double> arg(-5.0, 5.0);
    for (int s = 0; s < 400; ++s) {
      double alpha = arg(rng);
      double beta = arg(rng);
      VectorXd gamma(2);
      gamma << alpha, beta + th * alpha;
      VectorXd q = -2.0 * M * gamma;
      auto sol = solve_nonneg_qp(M, q);
      REQUIRE(sol.solved());
      double expect = std::max(beta + th * std::max(alpha, 0.0), 0.0);
      CHECK(sol.primal(1) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("complementary-split identity used by the synthesis") {
  // (b + t1 h1 + t2 h2)+ = (b + t1 h1)+ + (b + t2 h2)+ - (b)+ whenever
  // h1 h2 = 0 pointwise; the synthesis relies on it to keep every coupled
  // block single-inner.
  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> ud(-4.0, 4.0);
  for (int s = 0; s < 2000; ++s) {
    double b = ud(rng), t1 = ud(rng), t2 = ud(rng);
    double alpha = ud(rng), l = -std::abs(ud(rng)), u = std::abs(ud(rng));
    double h1 = std::max(alpha - u, 0.0), h2 = std::max(l - alpha, 0.0);
    double lhs = std::max(b + t1 * h1 + t2 * h2, 0.0);
    double rhs = std::max(b + t1 * h1, 0.0) + std::max(b + t2 * h2, 0.0) - std::max(b, 0.0);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("construct_exact: 1-D toy problem") {
  auto c = condense(toy_1d());
  auto proj = ProjectionSpec::box(VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0));
  ConstructOptions opts;
  opts.verify_box.lo = VectorXd::Constant(1, -6.0);
  opts.verify_box.hi = VectorXd::Constant(1, 6.0);
  auto net = construct_exact(c, proj, opts);

  VectorXd x(1);
  x << 0.0;
  CHECK(forward(net, x).y4(0) == doctest::Approx(0.0));
  x << 1.0;
  CHECK(forward(net, x).y4(0) == doctest::Approx(-0.5));
  x << 4.0;
  CHECK(forward(net, x).y4(0) == doctest::Approx(-1.0));
}

TEST_CASE("construct_exact: lifted dual route on one-sided-bound problem") {
  // Upper bounds only: Phi = I is square and invertible, the representation
  // theorem's own assumption.
  LinearMPCProblem p = double_integrator_box_inputs(2);
  p.input_set.A = MatrixXd::Identity(1, 1);
  p.input_set.b = VectorXd::Constant(1, 0.4);
  auto c = condense(p);
  ConstructOptions opts;
  opts.verify_box.lo = VectorXd::Constant(2, -1.0);
  opts.verify_box.hi = VectorXd::Constant(2, 1.0);
  auto net = construct_exact(c, ProjectionSpec::none(), opts);
  // Lifted route keeps the dual block: nz = 2n + p.
  CHECK(net.nz() == 2 * 2 + c.rows());

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    VectorXd x(2);
    x << ud(rng), ud(rng);
    auto res = oracle_control(c, x);
    if (!res.feasible) continue;
    worst = std::max(worst, std::abs(forward(net, x).y4(0) - res.u(0)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("construct_exact: double integrator H=2 and H=3 with box inputs") {
  for (int H : {2, 3}) {
    auto prob = double_integrator_box_inputs(H);
    auto c = condense(prob);
    auto proj = ProjectionSpec::box(VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0));
    ConstructOptions opts;
    opts.verify_box.lo = VectorXd::Constant(2, -2.0);
    opts.verify_box.hi = VectorXd::Constant(2, 2.0);
    auto net = construct_exact(c, proj, opts);

    std::mt19937_64 rng(300 + H);
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    double worst = 0.0;
    int checked = 0;
    while (checked < 100) {
      VectorXd x(2);
      x << ud(rng), ud(rng);
      auto res = oracle_control(c, x);
      if (!res.feasible) continue;
      ++checked;
      worst = std::max(worst, std::abs(forward(net, x).y4(0) - res.u(0)));
    }
    CAPTURE(H);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("construct_exact: dense grid check on asymmetric-box variants") {
  // A denser sweep over the synthesis path: asymmetric bounds, different
  // weights, and a grid instead of random states.
  for (int variant = 0; variant < 2; ++variant) {
    auto prob = double_integrator_box_inputs(3);
    if (variant == 1) {
      prob.R = MatrixXd::Constant(1, 1, 0.1);
      prob.P = dare_solve(prob.A, prob.B, prob.Q, prob.R).P;
      prob.input_set.b << 0.8, 0.3;  // u in [-0.3, 0.8]
    }
    auto c = condense(prob);
    double lo = -prob.input_set.b(1), hi = prob.input_set.b(0);
    auto proj = ProjectionSpec::box(VectorXd::Constant(1, lo), VectorXd::Constant(1, hi));
    ConstructOptions opts;
    opts.verify_box.lo = VectorXd::Constant(2, -1.5);
    opts.verify_box.hi = VectorXd::Constant(2, 1.5);
    auto net = construct_exact(c, proj, opts);

    double worst = 0.0;
    for (int i = 0; i <= 30; ++i)
      for (int j = 0; j <= 30; ++j) {
        VectorXd x(2);
        x << -2.0 + 4.0 * i / 30.0, -2.0 + 4.0 * j / 30.0;
        auto res = oracle_control(c, x);
        if (!res.feasible) continue;
        worst = std::max(worst, std::abs(forward(net, x).y4(0) - res.u(0)));
      }
    CAPTURE(variant);
    CHECK(worst < 1e-7);
  }
}

TEST_SUITE_END();
