#include "qpfit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <future>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace qpfit {

std::pair<double, VectorXd> mse_loss(const VectorXd& pred, const VectorXd& label) {
  if (pred.size() != label.size()) throw std::invalid_argument("mse_loss: size mismatch");
  const double m = static_cast<double>(pred.size());
  VectorXd diff = pred - label;
  double loss = diff.squaredNorm() / m;
  return {loss, (2.0 / m) * diff};
}

void AdamState::init(const QPNetParams& p) {
  m1.setZero(p);
  m2.setZero(p);
  t = 0;
}

namespace {

void adam_update_block(MatrixXd& theta, MatrixXd& m1, MatrixXd& m2, const MatrixXd& g,
                       const TrainConfig& c, double bc1, double bc2) {
  m1 = c.beta1 * m1 + (1.0 - c.beta1) * g;
  m2 = c.beta2 * m2.array().matrix() + (1.0 - c.beta2) * g.cwiseProduct(g);
  theta -= (c.lr * (m1 / bc1).array() / ((m2 / bc2).array().sqrt() + c.adam_eps)).matrix();
}

void adam_update_block(VectorXd& theta, VectorXd& m1, VectorXd& m2, const VectorXd& g,
                       const TrainConfig& c, double bc1, double bc2) {
  m1 = c.beta1 * m1 + (1.0 - c.beta1) * g;
  m2 = c.beta2 * m2 + (1.0 - c.beta2) * g.cwiseProduct(g).eval();
  theta -= (c.lr * (m1 / bc1).array() / ((m2 / bc2).array().sqrt() + c.adam_eps)).matrix();
}

}  // namespace

void adam_step(AdamState& st, QPNetParams& p, const ParamGradients& g, const TrainConfig& c) {
  ++st.t;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  adam_update_block(p.F, st.m1.dF, st.m2.dF, g.dF, c, bc1, bc2);
  adam_update_block(p.f, st.m1.df, st.m2.df, g.df, c, bc1, bc2);
  adam_update_block(p.L, st.m1.dL, st.m2.dL, g.dL, c, bc1, bc2);
  adam_update_block(p.G, st.m1.dG, st.m2.dG, g.dG, c, bc1, bc2);
  adam_update_block(p.g, st.m1.dg, st.m2.dg, g.dg, c, bc1, bc2);
}

QPNetParams init_params(int n, int nz, int m, double eps_reg, const ProjectionSpec& proj,
                        const VectorXd& label_scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double bound = 1.0 / std::sqrt(static_cast<double>(nz));
  std::uniform_real_distribution<double> ub(-bound, bound);
  std::uniform_real_distribution<double> un(-0.01, 0.01);

  QPNetParams p;
  p.F.resize(nz, n);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < n; ++j) p.F(i, j) = ub(rng);
  p.f = VectorXd::Zero(nz);
  p.L = MatrixXd::Identity(nz, nz);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j) p.L(i, j) += un(rng);
  p.eps = eps_reg;
  p.G.resize(m, nz);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < nz; ++j) p.G(i, j) = ub(rng);
  p.g = VectorXd::Zero(m);
  p.projection = proj;
  p.label_scale = label_scale;
  return p;
}

int resolve_thread_count(int requested, int jobs) {
  int t = requested;
  if (t <= 0) {
    if (const char* env = std::getenv("QPFIT_THREADS")) t = std::atoi(env);
  }
  if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
  if (t <= 0) t = 1;
  return std::max(1, std::min(t, jobs));
}

namespace {

struct RestartResult {
  QPNetParams params;
  std::vector<double> epoch_loss;
  double final_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

RestartResult run_restart(const Dataset& ds, const ProjectionSpec& proj, const TrainConfig& cfg,
                          int restart) {
  const int N = ds.N(), n = ds.n(), m = ds.m();
  RestartResult out;
  // Stream layout keeps restarts independent of scheduling.
  std::uint64_t seed = cfg.seed * 0x9E3779B97F4A7C15ull + 1000003ull * (restart + 1);
  out.params = init_params(n, cfg.nz, m, cfg.eps_reg, proj, ds.label_scale, seed);
  std::mt19937_64 shuffle_rng(seed ^ 0xD1B54A32D192ED03ull);

  AdamState adam;
  adam.init(out.params);

  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);

  MatrixXd labels_scaled = ds.labels;
  for (int j = 0; j < m; ++j) labels_scaled.col(j) *= ds.label_scale(j);

  ParamGradients batch_grad;
  VectorXd x(n), lbl(m);
  out.epoch_loss.reserve(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (int start = 0; start < N; start += cfg.batch_size) {
      int bs = std::min(cfg.batch_size, N - start);
      batch_grad.setZero(out.params);
      double wsum = 1.0 / bs;
      for (int b = 0; b < bs; ++b) {
        int idx = order[start + b];
        x = ds.states.row(idx).transpose();
        lbl = labels_scaled.row(idx).transpose();
        ForwardTrace t = forward(out.params, x);
        VectorXd pred_scaled = t.y4.cwiseProduct(ds.label_scale);
        auto [loss, dpred] = mse_loss(pred_scaled, lbl);
        epoch_sum += loss;
        VectorXd dl_dy4 = dpred.cwiseProduct(ds.label_scale);
        ParamGradients g = backward(t, out.params, dl_dy4);
        batch_grad.accumulate(g, wsum);
      }
      adam_step(adam, out.params, batch_grad, cfg);
    }
    double mean_loss = epoch_sum / N;
    out.epoch_loss.push_back(mean_loss);
    if (!std::isfinite(mean_loss)) {
      out.diverged = true;
      return out;
    }
  }
  out.final_loss = out.epoch_loss.empty() ? 0.0 : out.epoch_loss.back();
  return out;
}

}  // namespace

std::pair<QPNetParams, TrainReport> train(const Dataset& ds, const ProjectionSpec& proj,
                                          const TrainConfig& cfg) {
  if (ds.N() < 1) throw std::invalid_argument("train: dataset is empty");
  if (cfg.batch_size < 1 || cfg.batch_size > ds.N())
    throw std::invalid_argument("train: batch size must be in [1, N]");
  if (cfg.lr <= 0 || cfg.epochs < 1 || cfg.restarts < 1 || cfg.nz < 1)
    throw std::invalid_argument("train: invalid configuration");

  auto t0 = std::chrono::steady_clock::now();
  std::vector<RestartResult> results(cfg.restarts);
  int threads = resolve_thread_count(cfg.threads, cfg.restarts);

  if (threads <= 1) {
    for (int r = 0; r < cfg.restarts; ++r) results[r] = run_restart(ds, proj, cfg, r);
  } else {
    std::vector<std::future<RestartResult>> futs;
    futs.reserve(cfg.restarts);
    int inflight = 0, next = 0;
    std::vector<int> pending;
    // Simple bounded pool: launch `threads` at a time.
    while (next < cfg.restarts || inflight > 0) {
      while (inflight < threads && next < cfg.restarts) {
        int r = next++;
        futs.push_back(std::async(std::launch::async,
                                  [&, r] { return run_restart(ds, proj, cfg, r); }));
        pending.push_back(r);
        ++inflight;
      }
      results[pending.front()] = futs.front().get();
      futs.erase(futs.begin());
      pending.erase(pending.begin());
      --inflight;
    }
  }

  TrainReport rep;
  rep.epoch_loss.resize(cfg.restarts);
  rep.final_loss.resize(cfg.restarts);
  rep.diverged.resize(cfg.restarts);
  int best = -1;
  for (int r = 0; r < cfg.restarts; ++r) {
    rep.epoch_loss[r] = results[r].epoch_loss;
    rep.final_loss[r] = results[r].final_loss;
    rep.diverged[r] = results[r].diverged ? 1 : 0;
    if (!results[r].diverged &&
        (best < 0 || results[r].final_loss < results[best].final_loss))
      best = r;
  }
  if (best < 0) throw std::runtime_error("train: every restart diverged");
  rep.best_restart = best;
  rep.best_loss = results[best].final_loss;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {results[best].params, rep};
}

}  // namespace qpfit
