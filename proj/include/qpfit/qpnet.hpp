#pragma once

#include "qpfit/mpc.hpp"
#include "qpfit/numkit.hpp"

#include <vector>

namespace qpfit {

enum class ProjectionKind { None, Box, PsiSat, Polyhedron };

// Final-layer projection onto the feasible input set. Box and PsiSat have
// closed forms; a general polyhedron projects through solve_qp.
struct ProjectionSpec {
  ProjectionKind kind = ProjectionKind::None;
  VectorXd lo, hi;      // Box
  MatrixXd psi;         // PsiSat: y4 = psi * clamp(y3, sat_lo, sat_hi)
  double sat_lo = 0.0, sat_hi = 0.0;
  Polyhedron poly;      // Polyhedron: argmin ||y4 - y3|| s.t. A y4 <= b

  static ProjectionSpec none();
  static ProjectionSpec box(const VectorXd& lo, const VectorXd& hi);
  static ProjectionSpec psi_sat(const MatrixXd& psi, double lo, double hi);
  static ProjectionSpec polyhedron(const Polyhedron& p);  // throws if empty

  VectorXd apply(const VectorXd& y3) const;
  /// Chain rule through the projection; saturated components use the zero
  /// subgradient on the flat side.
  VectorXd backward(const VectorXd& y3, const VectorXd& dl_dy4) const;
};

// The four-layer approximator: affine -> nonneg pQP -> affine -> projection.
// L may be rectangular (lift_rows x n_z); training keeps it square.
struct QPNetParams {
  MatrixXd F;  // n_z-lift rows x n
  VectorXd f;
  MatrixXd L;  // lift rows x n_z
  double eps = 0.0;
  MatrixXd G;  // m x n_z
  VectorXd g;
  ProjectionSpec projection;
  VectorXd label_scale;  // optional; deployment bookkeeping

  int n() const { return static_cast<int>(F.cols()); }
  int nz() const { return static_cast<int>(L.cols()); }
  int m() const { return static_cast<int>(G.rows()); }
  /// eps I + L'L, the pQP quadratic form.
  MatrixXd quadratic() const;
};

struct ForwardTrace {
  VectorXd x, y1, z, lambda, y3, y4;
  std::vector<int> active;  // coordinates with z = 0 (weakly active included)
  double kkt_residual = 0.0;
};

/// y1 = Fx+f; z* = argmin_{z>=0} z'(eps I + L'L)z + (2L'y1)'z; y3 = Gz*+g;
/// y4 = projection(y3). Throws when the inner solve fails.
ForwardTrace forward(const QPNetParams& p, const VectorXd& x);

struct ParamGradients {
  MatrixXd dF;
  VectorXd df;
  MatrixXd dL;
  MatrixXd dG;
  VectorXd dg;
  void setZero(const QPNetParams& p);
  void accumulate(const ParamGradients& other, double w = 1.0);
  void scale(double s);
};

/// Implicit differentiation of the pQP KKT system. Returns gradients w.r.t.
/// L and y1 given dloss/dz*. Weakly active coordinates are treated as active
/// (zero sensitivity), a valid subgradient selection.
void pqp_backward(const ForwardTrace& t, const QPNetParams& p, const VectorXd& dl_dz,
                  MatrixXd& dL, VectorXd& dy1);

/// Full chain: projection -> second affine -> pQP -> first affine.
ParamGradients backward(const ForwardTrace& t, const QPNetParams& p, const VectorXd& dl_dy4);

struct ConstructOptions {
  double residual_tol = 1e-8;   // linear-term consistency tolerance
  double verify_tol = 1e-8;     // self-check tolerance vs the oracle
  int verify_samples = 200;
  Box verify_box;               // sampling region for the self-check
  std::uint64_t seed = 20250809;
};

/// Builds network weights that reproduce the condensed controller exactly.
/// Two routes: the lifted dual construction when the constraint system
/// admits it (the linear-term equation is consistent), otherwise an exact
/// piecewise-affine synthesis for single-input problems whose first-move
/// bounds are delegated to the saturation layer. Throws with a diagnostic
/// when neither applies.
QPNetParams construct_exact(const CondensedQP& c, const ProjectionSpec& input_proj,
                            const ConstructOptions& opts = {});

struct GradCheckConfig {
  int instances = 200;
  std::uint64_t seed = 20240901;
  double step = 1e-5;
  double rel_tol = 1e-4;
};

struct GradCheckResult {
  int instances = 0;
  long entries_checked = 0;
  long entries_skipped = 0;  // active-set or saturation crossings at +-h
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Central finite differences against the analytic backward pass over random
/// network instances (n <= 4, n_z <= 8, eps in {1e-4, 1e-2, 1}), skipping
/// entries whose perturbation crosses an active-set change.
GradCheckResult run_gradcheck(const GradCheckConfig& cfg = {});

}  // namespace qpfit
