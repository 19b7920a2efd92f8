// qpfit: learn reduced-complexity explicit MPC controllers by fitting a
// pQP-layer network to samples of an optimal controller, export the result
// as a piecewise-affine law, and validate it in closed loop.

#include "qpfit/converter.hpp"
#include "qpfit/explicit_pwa.hpp"
#include "qpfit/mpc.hpp"
#include "qpfit/qpnet.hpp"
#include "qpfit/serialize.hpp"
#include "qpfit/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>

namespace fs = std::filesystem;
using namespace qpfit;

namespace {

struct Pipeline {
  json config;
  fs::path out_dir;
  std::string config_hash;

  bool is_converter = false;
  ConverterParams conv_params;
  std::optional<ConverterModel> conv_model;
  LinearMPCProblem problem;
};

json default_config() {
  json j;
  j["problem"] = "converter";
  j["out_dir"] = "out";
  j["sample"] = {{"N", 5000}, {"seed", 1}};
  j["train"] = {{"nz_list", {6, 7}}, {"batch_size", 50}, {"epochs", 150},
                {"restarts", 10},    {"lr", 3e-3},       {"eps", 1e-4},
                {"seed", 1}};
  j["simulate"] = {{"steps", 50}};
  j["evaluate"] = {{"equiv_samples", 10000}, {"storage_budget_bytes", 65536},
                   {"equiv_tol", 1e-6}};
  j["gradcheck"] = {{"instances", 200}, {"seed", 20240901}};
  return j;
}

LinearMPCProblem problem_from_file(const fs::path& path) {
  json j = read_json_file(path);
  LinearMPCProblem p;
  p.A = matrix_from_json(j.at("A"));
  p.B = matrix_from_json(j.at("B"));
  p.Q = matrix_from_json(j.at("Q"));
  p.R = matrix_from_json(j.at("R"));
  p.horizon = j.at("horizon").get<int>();
  if (j.contains("P"))
    p.P = matrix_from_json(j.at("P"));
  else
    p.P = dare_solve(p.A, p.B, p.Q, p.R).P;
  if (j.contains("state_box")) {
    p.state_box.lo = vector_from_json(j.at("state_box").at("lo"));
    p.state_box.hi = vector_from_json(j.at("state_box").at("hi"));
  }
  if (j.contains("input_set")) {
    p.input_set.A = matrix_from_json(j.at("input_set").at("A"));
    p.input_set.b = vector_from_json(j.at("input_set").at("b"));
  }
  if (j.contains("terminal_set")) {
    if (j.at("terminal_set").is_string() && j.at("terminal_set") == "auto") {
      MatrixXd K = dare_solve(p.A, p.B, p.Q, p.R).K;
      p.terminal_set = terminal_invariant_set(p, K);
    } else {
      p.terminal_set.A = matrix_from_json(j.at("terminal_set").at("A"));
      p.terminal_set.b = vector_from_json(j.at("terminal_set").at("b"));
    }
  }
  p.validate();
  return p;
}

Pipeline load_pipeline(const std::string& config_path, const std::string& out_override,
                       std::optional<std::uint64_t> seed_override) {
  Pipeline pl;
  pl.config = default_config();
  if (!config_path.empty()) {
    json user = read_json_file(config_path);
    pl.config.merge_patch(user);
  }
  if (seed_override) {
    pl.config["sample"]["seed"] = *seed_override;
    pl.config["train"]["seed"] = *seed_override;
    pl.config["gradcheck"]["seed"] = *seed_override;
  }
  std::string dumped = pl.config.dump();
  pl.config_hash = hash_hex(fnv1a(dumped.data(), dumped.size()));

  pl.out_dir = out_override.empty() ? fs::path(pl.config.value("out_dir", "out"))
                                    : fs::path(out_override);
  fs::create_directories(pl.out_dir);

  const json& prob = pl.config.at("problem");
  if (prob.is_string() && prob.get<std::string>() == "converter") {
    pl.is_converter = true;
    pl.conv_model = build_model(pl.conv_params);
    pl.problem = assemble_mpc(*pl.conv_model, pl.conv_params);
  } else if (prob.is_object() && prob.contains("file")) {
    pl.problem = problem_from_file(prob.at("file").get<std::string>());
  } else {
    throw std::runtime_error("config: problem must be \"converter\" or {\"file\": path}");
  }
  return pl;
}

// Projection used by training and deployment. The converter keeps the
// Lunze-sat form with limits shifted into deviation coordinates; generic
// problems fall back to a box when the input set is one, else the
// polyhedral projection.
ProjectionSpec projection_for(const Pipeline& pl) {
  if (pl.is_converter) {
    const auto& m = *pl.conv_model;
    VectorXd v_eq = m.Psi_inv * m.u_eq;
    double v0 = v_eq(0);  // arms share the equilibrium duty by symmetry
    return ProjectionSpec::psi_sat(m.Psi, -v0, pl.conv_params.d_max * pl.conv_params.V_in - v0);
  }
  const Polyhedron& U = pl.problem.input_set;
  if (U.empty()) return ProjectionSpec::none();
  const int m = pl.problem.m();
  VectorXd lo = VectorXd::Constant(m, -std::numeric_limits<double>::infinity());
  VectorXd hi = VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  bool is_box = true;
  for (int i = 0; i < U.rows() && is_box; ++i) {
    int nz = -1;
    for (int j = 0; j < m; ++j)
      if (std::abs(U.A(i, j)) > 1e-12) {
        if (nz >= 0) is_box = false;
        nz = j;
      }
    if (nz < 0) continue;
    double a = U.A(i, nz);
    if (a > 0)
      hi(nz) = std::min(hi(nz), U.b(i) / a);
    else
      lo(nz) = std::max(lo(nz), U.b(i) / a);
  }
  if (is_box && lo.allFinite() && hi.allFinite()) return ProjectionSpec::box(lo, hi);
  return ProjectionSpec::polyhedron(U);
}

Box sampling_box(const Pipeline& pl) {
  if (pl.config.at("sample").contains("box")) {
    Box b;
    b.lo = vector_from_json(pl.config["sample"]["box"]["lo"]);
    b.hi = vector_from_json(pl.config["sample"]["box"]["hi"]);
    return b;
  }
  if (!pl.problem.state_box.empty()) return pl.problem.state_box;
  Box b;
  b.lo = VectorXd::Constant(pl.problem.n(), -1.0);
  b.hi = VectorXd::Constant(pl.problem.n(), 1.0);
  return b;
}

std::vector<int> nz_list(const Pipeline& pl) {
  std::vector<int> out;
  for (const auto& v : pl.config.at("train").at("nz_list")) out.push_back(v.get<int>());
  return out;
}

int cmd_condense(Pipeline& pl) {
  CondensedQP c = condense(pl.problem);
  json j = condensed_to_json(c);
  j["config_hash"] = pl.config_hash;
  write_json_file(j, pl.out_dir / "condensed.json");
  std::cout << "condensed: " << c.dim() << " variables, " << c.rows()
            << " rows, hash " << c.hash() << "\n";
  return 0;
}

int cmd_sample(Pipeline& pl) {
  CondensedQP c = condense(pl.problem);
  const json& sj = pl.config.at("sample");
  Dataset ds = sample_dataset(c, sampling_box(pl), sj.at("N").get<int>(),
                              sj.at("seed").get<std::uint64_t>());
  dataset_write_csv(ds, pl.out_dir / "dataset.csv", pl.out_dir / "dataset.json");
  std::cout << "sampled " << ds.N() << " labeled states (seed " << ds.seed << ", problem "
            << ds.problem_hash << ")\n";
  return 0;
}

TrainConfig train_config_for(const Pipeline& pl, int nz) {
  const json& tj = pl.config.at("train");
  TrainConfig cfg;
  cfg.nz = nz;
  cfg.batch_size = tj.at("batch_size").get<int>();
  cfg.epochs = tj.at("epochs").get<int>();
  cfg.restarts = tj.at("restarts").get<int>();
  cfg.lr = tj.at("lr").get<double>();
  cfg.eps_reg = tj.at("eps").get<double>();
  cfg.seed = tj.at("seed").get<std::uint64_t>() + 7919ull * nz;
  return cfg;
}

int cmd_train(Pipeline& pl) {
  Dataset ds = dataset_read_csv(pl.out_dir / "dataset.csv", pl.out_dir / "dataset.json");
  ProjectionSpec proj = projection_for(pl);
  for (int nz : nz_list(pl)) {
    TrainConfig cfg = train_config_for(pl, nz);
    auto [net, rep] = train(ds, proj, cfg);
    json mj = model_to_json(net);
    mj["config_hash"] = pl.config_hash;
    mj["best_restart"] = rep.best_restart;
    mj["best_loss"] = rep.best_loss;
    write_json_file(mj, pl.out_dir / ("model_nz" + std::to_string(nz) + ".json"));
    train_report_write_csv(rep, pl.out_dir / ("loss_nz" + std::to_string(nz) + ".csv"));
    std::cout << "nz=" << nz << ": best loss " << rep.best_loss << " (restart "
              << rep.best_restart << ", " << std::fixed << std::setprecision(1)
              << rep.wall_seconds << "s)\n"
              << std::defaultfloat;
  }
  return 0;
}

int cmd_export(Pipeline& pl) {
  Box dom = sampling_box(pl);
  for (int nz : nz_list(pl)) {
    fs::path mp = pl.out_dir / ("model_nz" + std::to_string(nz) + ".json");
    QPNetParams net = model_from_json(read_json_file(mp));
    PWAController ctrl = enumerate_regions(net);
    json pj = pwa_to_json(ctrl);
    pj["config_hash"] = pl.config_hash;
    write_json_file(pj, pl.out_dir / ("pwa_nz" + std::to_string(nz) + ".json"));
    pwa_write_binary(ctrl, pl.out_dir / ("pwa_nz" + std::to_string(nz) + ".bin"));
    auto rep = complexity_report(ctrl, dom);
    json cj;
    cj["region_count"] = rep.region_count;
    cj["storage_bytes"] = rep.storage_bytes;
    cj["eval_median_us"] = rep.eval_median_us;
    cj["eval_max_us"] = rep.eval_max_us;
    cj["config_hash"] = pl.config_hash;
    write_json_file(cj, pl.out_dir / ("complexity_nz" + std::to_string(nz) + ".json"));
    std::cout << "nz=" << nz << ": " << rep.region_count << " regions, "
              << rep.storage_bytes << " bytes\n";
  }
  return 0;
}

std::vector<VectorXd> simulate_ics(const Pipeline& pl) {
  std::vector<VectorXd> ics;
  const json& sj = pl.config.at("simulate");
  if (sj.contains("initial_conditions"))
    for (const auto& v : sj.at("initial_conditions")) ics.push_back(vector_from_json(v));
  else
    ics = default_initial_conditions();
  return ics;
}

Controller oracle_controller(const CondensedQP& c) {
  return [&c](const VectorXd& xdev) -> std::optional<VectorXd> {
    auto r = oracle_control(c, xdev);
    if (!r.feasible) return std::nullopt;
    return r.u;
  };
}

int cmd_simulate(Pipeline& pl) {
  if (!pl.is_converter)
    throw std::runtime_error("simulate: closed-loop study is defined for the converter preset");
  const auto& mdl = *pl.conv_model;
  CondensedQP c = condense(pl.problem);
  int steps = pl.config.at("simulate").at("steps").get<int>();

  auto ics = simulate_ics(pl);
  ics.push_back(VectorXd::Zero(4));  // start-up

  struct Entry {
    std::string name;
    Controller ctrl;
  };
  std::vector<Entry> ctrls;
  ctrls.push_back({"oracle", oracle_controller(c)});

  std::vector<QPNetParams> nets;
  std::vector<PWAController> pwas;
  for (int nz : nz_list(pl)) {
    fs::path mp = pl.out_dir / ("model_nz" + std::to_string(nz) + ".json");
    fs::path pp = pl.out_dir / ("pwa_nz" + std::to_string(nz) + ".json");
    if (fs::exists(mp)) {
      nets.push_back(model_from_json(read_json_file(mp)));
      const QPNetParams& net = nets.back();
      ctrls.push_back({"implicit_nz" + std::to_string(nz),
                       [&net](const VectorXd& x) -> std::optional<VectorXd> {
                         return forward(net, x).y4;
                       }});
    }
    if (fs::exists(pp)) {
      pwas.push_back(pwa_from_json(read_json_file(pp)));
      const PWAController& pc = pwas.back();
      ctrls.push_back({"explicit_nz" + std::to_string(nz),
                       [&pc](const VectorXd& x) -> std::optional<VectorXd> {
                         return locate_and_eval(pc, x);
                       }});
    }
  }

  for (const auto& e : ctrls)
    for (size_t i = 0; i < ics.size(); ++i) {
      auto sim = simulate(mdl, e.ctrl, ics[i], steps, pl.conv_params);
      std::string tag = (i + 1 == ics.size()) ? "startup" : ("ic" + std::to_string(i + 1));
      trajectory_write_csv(sim, pl.out_dir / ("traj_" + e.name + "_" + tag + ".csv"));
      if (!sim.completed)
        std::cout << "warning: " << e.name << " infeasible after " << sim.steps_done
                  << " steps from " << tag << "\n";
    }
  std::cout << "wrote " << ctrls.size() * ics.size() << " trajectories\n";
  return 0;
}

int cmd_evaluate(Pipeline& pl) {
  if (!pl.is_converter)
    throw std::runtime_error("evaluate: closed-loop study is defined for the converter preset");
  const auto& mdl = *pl.conv_model;
  CondensedQP c = condense(pl.problem);
  const json& ej = pl.config.at("evaluate");
  const int equiv_samples = ej.at("equiv_samples").get<int>();
  const double equiv_tol = ej.at("equiv_tol").get<double>();
  const std::size_t budget = ej.at("storage_budget_bytes").get<std::size_t>();
  int steps = pl.config.at("simulate").at("steps").get<int>();
  Box dom = sampling_box(pl);

  bool all_ok = true;
  json report;
  report["config_hash"] = pl.config_hash;
  report["controllers"] = json::array();

  // Oracle reference row.
  {
    json row;
    row["name"] = "oracle";
    double worst[4] = {0, 0, 0, 0};
    bool settled = true;
    for (const auto& ic : default_initial_conditions()) {
      auto sim = simulate(mdl, oracle_controller(c), ic, steps, pl.conv_params);
      if (!sim.completed) { all_ok = false; continue; }
      auto met = steady_state_metrics(sim.states, mdl.x_eq);
      settled = settled && met.settled;
      worst[0] = std::max(worst[0], met.idm1_abs);
      worst[1] = std::max(worst[1], met.idm2_abs);
      worst[2] = std::max(worst[2], met.icm_rel_pct);
      worst[3] = std::max(worst[3], met.vout_rel_pct);
    }
    row["ss_idm1_A"] = worst[0];
    row["ss_idm2_A"] = worst[1];
    row["ss_icm_pct"] = worst[2];
    row["ss_vout_pct"] = worst[3];
    row["settled"] = settled;
    report["controllers"].push_back(row);
  }

  std::ostringstream table;
  table << std::left << std::setw(16) << "controller" << std::right << std::setw(9) << "regions"
        << std::setw(12) << "storage" << std::setw(13) << "eval med us" << std::setw(12)
        << "SS idm [A]" << std::setw(12) << "SS icm [%]" << std::setw(13) << "SS vout [%]"
        << "\n";

  for (int nz : nz_list(pl)) {
    fs::path mp = pl.out_dir / ("model_nz" + std::to_string(nz) + ".json");
    fs::path pp = pl.out_dir / ("pwa_nz" + std::to_string(nz) + ".json");
    QPNetParams net = model_from_json(read_json_file(mp));
    PWAController ctrl = pwa_from_json(read_json_file(pp));

    json row;
    row["name"] = "nz" + std::to_string(nz);

    // Region bound and storage.
    bool bound_ok = ctrl.regions.size() <= (1ull << nz);
    auto comp = complexity_report(ctrl, dom);
    bool storage_ok = comp.storage_bytes <= budget;
    row["region_count"] = comp.region_count;
    row["region_bound_ok"] = bound_ok;
    row["storage_bytes"] = comp.storage_bytes;
    row["storage_ok"] = storage_ok;
    row["eval_median_us"] = comp.eval_median_us;
    row["eval_max_us"] = comp.eval_max_us;

    // Explicit/implicit equivalence on random states.
    std::mt19937_64 rng(1234567 + nz);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double max_dev = 0.0;
    VectorXd x(ctrl.n);
    for (int s = 0; s < equiv_samples; ++s) {
      for (int j = 0; j < ctrl.n; ++j)
        x(j) = dom.lo(j) + (dom.hi(j) - dom.lo(j)) * unit(rng);
      max_dev = std::max(max_dev,
                         (locate_and_eval(ctrl, x) - forward(net, x).y4).cwiseAbs().maxCoeff());
    }
    bool equiv_ok = max_dev <= equiv_tol;
    row["explicit_implicit_max_dev"] = max_dev;
    row["equiv_ok"] = equiv_ok;

    // Closed-loop steady state from the four corner states.
    double worst[4] = {0, 0, 0, 0};
    bool settled = true, completed = true;
    for (const auto& ic : default_initial_conditions()) {
      Controller impl = [&net](const VectorXd& xd) -> std::optional<VectorXd> {
        return forward(net, xd).y4;
      };
      auto sim = simulate(mdl, impl, ic, steps, pl.conv_params);
      if (!sim.completed) { completed = false; continue; }
      auto met = steady_state_metrics(sim.states, mdl.x_eq);
      settled = settled && met.settled;
      worst[0] = std::max(worst[0], met.idm1_abs);
      worst[1] = std::max(worst[1], met.idm2_abs);
      worst[2] = std::max(worst[2], met.icm_rel_pct);
      worst[3] = std::max(worst[3], met.vout_rel_pct);
    }
    bool ss_ok = completed && worst[0] <= 0.2 && worst[1] <= 0.2 && worst[2] <= 5.0 &&
                 worst[3] <= 5.0;
    row["ss_idm1_A"] = worst[0];
    row["ss_idm2_A"] = worst[1];
    row["ss_icm_pct"] = worst[2];
    row["ss_vout_pct"] = worst[3];
    row["settled"] = settled;
    row["completed"] = completed;
    row["ss_ok"] = ss_ok;

    bool ok = bound_ok && storage_ok && equiv_ok && ss_ok;
    row["ok"] = ok;
    all_ok = all_ok && ok;
    report["controllers"].push_back(row);

    table << std::left << std::setw(16) << ("nz=" + std::to_string(nz)) << std::right
          << std::setw(9) << comp.region_count << std::setw(10) << comp.storage_bytes << " B"
          << std::setw(13) << std::fixed << std::setprecision(2) << comp.eval_median_us
          << std::setw(12) << std::setprecision(3) << std::max(worst[0], worst[1])
          << std::setw(12) << worst[2] << std::setw(13) << worst[3] << std::defaultfloat
          << (ok ? "   pass" : "   FAIL") << "\n";
  }

  report["pass"] = all_ok;
  write_json_file(report, pl.out_dir / "evaluate_report.json");
  std::ofstream txt(pl.out_dir / "evaluate_report.txt");
  txt << table.str();
  std::cout << table.str();
  std::cout << (all_ok ? "evaluate: PASS" : "evaluate: FAIL") << "\n";
  return all_ok ? 0 : 1;
}

int cmd_gradcheck(Pipeline& pl) {
  const json& gj = pl.config.at("gradcheck");
  GradCheckConfig cfg;
  cfg.instances = gj.at("instances").get<int>();
  cfg.seed = gj.at("seed").get<std::uint64_t>();
  auto res = run_gradcheck(cfg);
  json j;
  j["instances"] = res.instances;
  j["entries_checked"] = res.entries_checked;
  j["entries_skipped"] = res.entries_skipped;
  j["max_rel_err"] = res.max_rel_err;
  j["pass"] = res.pass;
  j["config_hash"] = pl.config_hash;
  write_json_file(j, pl.out_dir / "gradcheck.json");
  std::cout << "gradcheck: " << res.entries_checked << " entries, "
            << res.entries_skipped << " skipped, max rel err " << res.max_rel_err
            << (res.pass ? " -> PASS" : " -> FAIL") << "\n";
  return res.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qpfit: reduced-complexity explicit MPC via pQP-layer networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "pipeline configuration (JSON)");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  std::uint64_t seed_raw = 0;
  auto* seed_opt = app.add_option("--seed", seed_raw, "override sampling/training seeds");

  auto* c1 = app.add_subcommand("condense", "condense the MPC problem to its dense QP");
  auto* c2 = app.add_subcommand("sample", "sample the oracle controller into a dataset");
  auto* c3 = app.add_subcommand("train", "fit networks for each configured pQP size");
  auto* c4 = app.add_subcommand("export", "enumerate critical regions and export PWA controllers");
  auto* c5 = app.add_subcommand("simulate", "closed-loop trajectories for all controllers");
  auto* c6 = app.add_subcommand("evaluate", "consolidated report with pass/fail thresholds");
  auto* c7 = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) seed = seed_raw;

  try {
    Pipeline pl = load_pipeline(config_path, out_dir, seed);
    if (*c1) return cmd_condense(pl);
    if (*c2) return cmd_sample(pl);
    if (*c3) return cmd_train(pl);
    if (*c4) return cmd_export(pl);
    if (*c5) return cmd_simulate(pl);
    if (*c6) return cmd_evaluate(pl);
    if (*c7) return cmd_gradcheck(pl);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 2;
}
