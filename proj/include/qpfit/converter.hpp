#pragma once

#include "qpfit/mpc.hpp"

#include <functional>
#include <optional>

namespace qpfit {

// Multicell step-down converter parameters (SI units).
struct ConverterParams {
  double V_in = 350.0;
  double L_s = 4e-3;
  double L_m = -2e-3;   // negative mutual coupling
  double R = 10e-3;
  double L_f = 270e-6;
  double C_o = 20e-6;
  double R_o = 6.25;
  double f_sw = 15e3;
  double d_max = 0.9;
};

// Averaged model in Lunze coordinates: x = (i_dm1, i_dm2, i_cm, v_out),
// u = (v_dm1, v_dm2, v_cm).
struct ConverterModel {
  MatrixXd Psi, Psi_inv;
  MatrixXd A_ct, B_ct;   // continuous time, exactly the printed structure
  MatrixXd A, B;         // zero-order hold at f_sw
  VectorXd x_eq, u_eq;   // regulation target and its sustaining input
  double T = 0.0;
  double eq_residual = 0.0;  // || A x_eq + B u_eq - x_eq ||_inf
};

ConverterModel build_model(const ConverterParams& prm = {});

/// Deviation-coordinate MPC problem around (x_eq, u_eq): Q, R, H and
/// constraint data per the case study; terminal set is the maximal invariant
/// set under the LQR gain; P solves the Riccati equation.
LinearMPCProblem assemble_mpc(const ConverterModel& mdl, const ConverterParams& prm = {});

// Controller on deviation coordinates; nullopt = infeasible at this state.
using Controller = std::function<std::optional<VectorXd>(const VectorXd&)>;

struct SimResult {
  MatrixXd states;  // (steps_done+1) x 4, physical units
  MatrixXd inputs;  // steps_done x 3, physical units
  MatrixXd duties;  // steps_done x 3
  bool completed = false;
  int steps_done = 0;
};

/// x+ = A x + B u in physical coordinates; the controller sees deviations
/// and its output is shifted back by u_eq. Halts early when the controller
/// reports infeasibility.
SimResult simulate(const ConverterModel& mdl, const Controller& ctrl, const VectorXd& x0,
                   int steps, const ConverterParams& prm = {});

struct SSMetrics {
  double idm1_abs = 0.0;   // A
  double idm2_abs = 0.0;   // A
  double icm_rel_pct = 0.0;
  double vout_rel_pct = 0.0;
  bool settled = false;
};

/// Worst deviation from x_eq over the trailing window (default 10 steps);
/// absolute for the differential currents, relative for i_cm and v_out.
SSMetrics steady_state_metrics(const MatrixXd& states, const VectorXd& x_eq, int window = 10);

/// Default start-up and corner initial conditions used by the closed-loop
/// studies (physical units).
std::vector<VectorXd> default_initial_conditions();

}  // namespace qpfit
