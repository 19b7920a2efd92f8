#include "qpfit/converter.hpp"

#include <stdexcept>

namespace qpfit {

ConverterModel build_model(const ConverterParams& prm) {
  ConverterModel m;
  m.T = 1.0 / prm.f_sw;

  m.Psi.resize(3, 3);
  m.Psi << 2, -1, -1, -1, 2, -1, 1, 1, 1;
  m.Psi /= 3.0;
  m.Psi_inv.resize(3, 3);
  m.Psi_inv << 1, 0, 1, 0, 1, 1, -1, -1, 1;

  const double Ldm = prm.L_s + prm.L_m;            // differential-mode inductance
  const double Lcm = prm.L_s + 2 * prm.L_m + 3 * prm.L_f;  // common-mode path
  if (Ldm <= 0 || Lcm <= 0) throw std::invalid_argument("build_model: inductances must be positive");

  m.A_ct = MatrixXd::Zero(4, 4);
  m.A_ct(0, 0) = -prm.R / Ldm;
  m.A_ct(1, 1) = -prm.R / Ldm;
  m.A_ct(2, 2) = -prm.R / Lcm;
  m.A_ct(2, 3) = -1.0 / Lcm;
  m.A_ct(3, 2) = 3.0 / prm.C_o;
  m.A_ct(3, 3) = -1.0 / (prm.R_o * prm.C_o);

  // B_ct uses 1/L_s on the differential rows, as printed in the source model.
  m.B_ct = MatrixXd::Zero(4, 3);
  m.B_ct(0, 0) = 1.0 / prm.L_s;
  m.B_ct(1, 1) = 1.0 / prm.L_s;
  m.B_ct(2, 2) = 1.0 / Lcm;

  // ZOH via the augmented exponential: exp([A B; 0 0] T) = [A_d B_d; 0 I].
  MatrixXd aug = MatrixXd::Zero(7, 7);
  aug.topLeftCorner(4, 4) = m.A_ct;
  aug.topRightCorner(4, 3) = m.B_ct;
  MatrixXd E = matrix_exponential(aug * m.T);
  m.A = E.topLeftCorner(4, 4);
  m.B = E.topRightCorner(4, 3);

  m.x_eq.resize(4);
  m.x_eq << 0.0, 0.0, 16.0, 300.0;
  m.u_eq = pseudo_inverse(m.B) * (MatrixXd::Identity(4, 4) - m.A) * m.x_eq;
  m.eq_residual = (m.A * m.x_eq + m.B * m.u_eq - m.x_eq).cwiseAbs().maxCoeff();
  return m;
}

LinearMPCProblem assemble_mpc(const ConverterModel& mdl, const ConverterParams& prm) {
  LinearMPCProblem p;
  p.A = mdl.A;
  p.B = mdl.B;
  p.Q = VectorXd{{10.0, 10.0, 0.1, 0.1}}.asDiagonal();
  p.R = 0.1 * MatrixXd::Identity(3, 3);
  p.horizon = 10;
  auto dare = dare_solve(mdl.A, mdl.B, p.Q, p.R);
  p.P = dare.P;
  p.x_ref = mdl.x_eq;
  p.u_ref = mdl.u_eq;

  VectorXd lo_phys(4), hi_phys(4);
  lo_phys << -5.0, -5.0, -10.0, -20.0;
  hi_phys << 5.0, 5.0, 30.0, 400.0;
  p.state_box.lo = lo_phys - mdl.x_eq;
  p.state_box.hi = hi_phys - mdl.x_eq;

  // Duty saturation 0 <= (Psi^{-1}(u + u_eq))_i <= d_max V_in mapped to the
  // Lunze domain, six rows.
  VectorXd v_eq = mdl.Psi_inv * mdl.u_eq;  // per-arm voltages at equilibrium
  p.input_set.A.resize(6, 3);
  p.input_set.A.topRows(3) = mdl.Psi_inv;
  p.input_set.A.bottomRows(3) = -mdl.Psi_inv;
  p.input_set.b.resize(6);
  p.input_set.b.head(3) = VectorXd::Constant(3, prm.d_max * prm.V_in) - v_eq;
  p.input_set.b.tail(3) = v_eq;
  if (p.input_set.b.minCoeff() <= 0)
    throw std::runtime_error("assemble_mpc: equilibrium duty cycles not interior");

  p.terminal_set = terminal_invariant_set(p, dare.K);
  return p;
}

SimResult simulate(const ConverterModel& mdl, const Controller& ctrl, const VectorXd& x0,
                   int steps, const ConverterParams& prm) {
  if (x0.size() != 4) throw std::invalid_argument("simulate: state dimension must be 4");
  SimResult out;
  out.states.resize(steps + 1, 4);
  out.inputs.resize(steps, 3);
  out.duties.resize(steps, 3);
  out.states.row(0) = x0.transpose();

  VectorXd x = x0;
  for (int k = 0; k < steps; ++k) {
    std::optional<VectorXd> u_dev = ctrl(x - mdl.x_eq);
    if (!u_dev) {
      out.states.conservativeResize(k + 1, Eigen::NoChange);
      out.inputs.conservativeResize(k, Eigen::NoChange);
      out.duties.conservativeResize(k, Eigen::NoChange);
      out.steps_done = k;
      out.completed = false;
      return out;
    }
    VectorXd u = *u_dev + mdl.u_eq;
    out.inputs.row(k) = u.transpose();
    out.duties.row(k) = (mdl.Psi_inv * u / prm.V_in).transpose();
    x = mdl.A * x + mdl.B * u;
    out.states.row(k + 1) = x.transpose();
  }
  out.steps_done = steps;
  out.completed = true;
  return out;
}

SSMetrics steady_state_metrics(const MatrixXd& states, const VectorXd& x_eq, int window) {
  if (states.rows() < window)
    throw std::invalid_argument("steady_state_metrics: trajectory shorter than the window");
  SSMetrics m;
  const int start = static_cast<int>(states.rows()) - window;
  VectorXd err_max = VectorXd::Zero(4);
  VectorXd lo = states.row(start).transpose(), hi = states.row(start).transpose();
  for (int i = start; i < states.rows(); ++i) {
    VectorXd xi = states.row(i).transpose();
    err_max = err_max.cwiseMax((xi - x_eq).cwiseAbs());
    lo = lo.cwiseMin(xi);
    hi = hi.cwiseMax(xi);
  }
  m.idm1_abs = err_max(0);
  m.idm2_abs = err_max(1);
  m.icm_rel_pct = 100.0 * err_max(2) / std::abs(x_eq(2));
  m.vout_rel_pct = 100.0 * err_max(3) / std::abs(x_eq(3));
  // Settled when the window variation stays within 10x the reported error.
  m.settled = true;
  for (int j = 0; j < 4; ++j)
    if (hi(j) - lo(j) > 10.0 * err_max(j) + 1e-12) m.settled = false;
  return m;
}

std::vector<VectorXd> default_initial_conditions() {
  // Corners of a feasible sub-box exercising every constraint direction.
  std::vector<VectorXd> ics;
  VectorXd ic(4);
  ic << 2.0, -2.0, 5.0, 50.0;
  ics.push_back(ic);
  ic << -2.0, 2.0, 25.0, 350.0;
  ics.push_back(ic);
  ic << 2.0, 2.0, 25.0, 50.0;
  ics.push_back(ic);
  ic << -2.0, -2.0, 5.0, 350.0;
  ics.push_back(ic);
  return ics;
}

}  // namespace qpfit
