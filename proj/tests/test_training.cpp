#include "doctest.h"
#include "qpfit/training.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <random>

using namespace qpfit;

namespace {

// Reference Adam, straight from the published update equations.
struct RefAdam {
  double m1 = 0.0, m2 = 0.0;
  long t = 0;
  double step(double g, double lr, double b1, double b2, double eps) {
    ++t;
    m1 = b1 * m1 + (1 - b1) * g;
    m2 = b2 * m2 + (1 - b2) * g * g;
    double mh = m1 / (1 - std::pow(b1, t));
    double vh = m2 / (1 - std::pow(b2, t));
    return -lr * mh / (std::sqrt(vh) + eps);
  }
};

Dataset dataset_from_net(const QPNetParams& net, int N, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.states.resize(N, net.n());
  ds.labels.resize(N, net.m());
  for (int i = 0; i < N; ++i) {
    VectorXd x = oracles::random_vec(net.n(), rng);
    ds.states.row(i) = x.transpose();
    ds.labels.row(i) = forward(net, x).y4.transpose();
  }
  ds.label_scale = VectorXd::Ones(net.m());
  ds.seed = seed;
  return ds;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("mse_loss values and finite-difference gradient") {
  VectorXd a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, 0.0;
  auto [l0, g0] = mse_loss(a, a);
  CHECK(l0 == doctest::Approx(0.0));
  CHECK(g0.cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  auto [l1, g1] = mse_loss(a, b);
  CHECK(l1 == doctest::Approx(0.5));

  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    VectorXd p = oracles::random_vec(3, rng), q = oracles::random_vec(3, rng);
    auto [l, g] = mse_loss(p, q);
    (void)l;
    const double h = 1e-7;
    for (int i = 0; i < 3; ++i) {
      VectorXd pp = p, pm = p;
      pp(i) += h;
      pm(i) -= h;
      double fd = (mse_loss(pp, q).first - mse_loss(pm, q).first) / (2 * h);
      CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = init_params(2, 3, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 7);
  auto p0 = p;
  AdamState st;
  st.init(p);
  ParamGradients g;
  g.setZero(p);
  TrainConfig cfg;
  adam_step(st, p, g, cfg);
  CHECK((p.F - p0.F).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK((p.L - p0.L).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK((p.g - p0.g).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("adam matches the reference implementation entrywise") {
  std::mt19937_64 rng(3);
  auto p = init_params(2, 3, 2, 1e-2, ProjectionSpec::none(), VectorXd::Ones(2), 11);
  auto p_ref = p;
  AdamState st;
  st.init(p);
  TrainConfig cfg;

  std::vector<RefAdam> refF(p.F.size());

  for (int step = 0; step < 5; ++step) {
    ParamGradients g;
    g.setZero(p);
    g.dF = oracles::random_mat(3, 2, rng);
    g.dg = oracles::random_vec(2, rng);
    int k = 0;
    for (int j = 0; j < p_ref.F.cols(); ++j)
      for (int i = 0; i < p_ref.F.rows(); ++i, ++k)
        p_ref.F(i, j) += refF[k].step(g.dF(i, j), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    adam_step(st, p, g, cfg);
    CHECK((p.F - p_ref.F).cwiseAbs().maxCoeff() < 1e-14);
    // blocks without gradient stay put: no cross-talk
    CHECK((p.L - p_ref.L).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("adam first step has the sign-scaled magnitude") {
  auto p = init_params(1, 1, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 13);
  double before = p.F(0, 0);
  AdamState st;
  st.init(p);
  ParamGradients g;
  g.setZero(p);
  g.dF(0, 0) = 3.7;
  TrainConfig cfg;
  adam_step(st, p, g, cfg);
  double delta = p.F(0, 0) - before;
  CHECK(delta == doctest::Approx(-cfg.lr * 3.7 / (3.7 + cfg.adam_eps)).epsilon(1e-9));
}

TEST_CASE("one optimizer step on a single sample reduces its loss") {
  auto teacher = init_params(2, 3, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 17);
  auto ds = dataset_from_net(teacher, 1, 5);

  TrainConfig cfg;
  cfg.nz = 3;
  cfg.lr = 1e-6;
  auto p = init_params(2, 3, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 99);
  VectorXd x = ds.states.row(0).transpose();
  VectorXd lbl = ds.labels.row(0).transpose();

  auto loss_at = [&](const QPNetParams& net) {
    return mse_loss(forward(net, x).y4, lbl).first;
  };
  double l0 = loss_at(p);
  ForwardTrace t = forward(p, x);
  auto [loss, dpred] = mse_loss(t.y4, lbl);
  (void)loss;
  ParamGradients g = backward(t, p, dpred);
  AdamState st;
  st.init(p);
  adam_step(st, p, g, cfg);
  double l1 = loss_at(p);
  CHECK(l1 < l0);
}

TEST_CASE("training a realizable target drives the loss to ~zero") {
  auto teacher = init_params(2, 2, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 23);
  teacher.F *= 2.0;
  auto ds = dataset_from_net(teacher, 120, 29);

  TrainConfig cfg;
  cfg.nz = 2;
  cfg.eps_reg = 1e-2;
  cfg.batch_size = 20;
  cfg.epochs = 400;
  cfg.restarts = 3;
  cfg.lr = 5e-3;
  cfg.seed = 31;
  auto [net, rep] = train(ds, ProjectionSpec::none(), cfg);
  (void)net;
  CHECK(rep.best_loss < 1e-5);
  CHECK(rep.best_loss == doctest::Approx(*std::min_element(rep.final_loss.begin(),
                                                           rep.final_loss.end())));
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto teacher = init_params(2, 2, 1, 1e-2, ProjectionSpec::none(), VectorXd::Ones(1), 37);
  auto ds = dataset_from_net(teacher, 40, 41);

  TrainConfig cfg;
  cfg.nz = 2;
  cfg.batch_size = 10;
  cfg.epochs = 5;
  cfg.restarts = 2;
  cfg.seed = 43;
  auto [n1, r1] = train(ds, ProjectionSpec::none(), cfg);
  auto [n2, r2] = train(ds, ProjectionSpec::none(), cfg);
  CHECK(r1.best_restart == r2.best_restart);
  REQUIRE(r1.epoch_loss.size() == r2.epoch_loss.size());
  for (size_t r = 0; r < r1.epoch_loss.size(); ++r)
    for (size_t e = 0; e < r1.epoch_loss[r].size(); ++e)
      CHECK(r1.epoch_loss[r][e] == r2.epoch_loss[r][e]);
  CHECK((n1.F - n2.F).cwiseAbs().maxCoeff() == 0.0);
  CHECK((n1.L - n2.L).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scaled-space training keeps physical-unit bookkeeping exact") {
  auto teacher = init_params(2, 2, 2, 1e-2, ProjectionSpec::none(), VectorXd::Ones(2), 47);
  auto ds = dataset_from_net(teacher, 30, 53);
  ds.label_scale = VectorXd(2);
  ds.label_scale << 2.0, 0.5;

  TrainConfig cfg;
  cfg.nz = 2;
  cfg.batch_size = 10;
  cfg.epochs = 3;
  cfg.restarts = 1;
  cfg.seed = 59;
  auto [net, rep] = train(ds, ProjectionSpec::none(), cfg);
  (void)rep;
  CHECK((net.label_scale - ds.label_scale).cwiseAbs().maxCoeff() == 0.0);
  VectorXd x = ds.states.row(0).transpose();
  VectorXd y_phys = forward(net, x).y4;
  VectorXd y_scaled = y_phys.cwiseProduct(net.label_scale);
  CHECK((y_scaled.cwiseQuotient(net.label_scale) - y_phys).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_SUITE_END();
