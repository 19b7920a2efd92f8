#pragma once

#include "qpfit/qpnet.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace qpfit {

struct TrainConfig {
  int nz = 4;
  int batch_size = 50;
  int epochs = 150;
  int restarts = 10;           // models trained per size
  double lr = 3e-3;            // reaches the converter's loss floor within 150 epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double eps_reg = 1e-4;       // pQP regularizer during training
  std::uint64_t seed = 0;
  int threads = 0;             // 0 = decide from QPFIT_THREADS / hardware
};

struct TrainReport {
  std::vector<std::vector<double>> epoch_loss;  // [restart][epoch], mean loss
  std::vector<double> final_loss;               // per restart (inf when diverged)
  std::vector<char> diverged;                   // per restart
  int best_restart = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  double wall_seconds = 0.0;
};

/// Mean squared error over components; inputs already in scaled label space.
/// Gradient w.r.t. pred is 2 (pred - label) / m.
std::pair<double, VectorXd> mse_loss(const VectorXd& pred, const VectorXd& label);

// Adam with bias correction, one slot per parameter block.
struct AdamState {
  ParamGradients m1, m2;
  long t = 0;
  void init(const QPNetParams& p);
};

void adam_step(AdamState& st, QPNetParams& p, const ParamGradients& grads,
               const TrainConfig& cfg);

/// Supervised fit: `restarts` independent seeded initializations, mini-batch
/// SGD with Adam, loss in scaled label space. Returns the restart with the
/// lowest final training loss. Deterministic for a fixed config.
std::pair<QPNetParams, TrainReport> train(const Dataset& ds, const ProjectionSpec& proj,
                                          const TrainConfig& cfg);

/// Initial weights for one restart (uniform F, G; L near identity).
QPNetParams init_params(int n, int nz, int m, double eps_reg, const ProjectionSpec& proj,
                        const VectorXd& label_scale, std::uint64_t seed);

int resolve_thread_count(int requested, int jobs);

}  // namespace qpfit
