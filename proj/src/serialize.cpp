#include "qpfit/serialize.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qpfit {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error("serialize: " + msg);
}

void append_f32(std::vector<unsigned char>& buf, double v) {
  float f = static_cast<float>(v);
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

void append_u32(std::vector<unsigned char>& buf, std::uint32_t u) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

}  // namespace

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

json matrix_to_json(const MatrixXd& M) {
  json rows = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  require(j.is_array(), "matrix must be an array of rows");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return MatrixXd(0, 0);
  const int cols = static_cast<int>(j[0].size());
  MatrixXd M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    require(static_cast<int>(j[i].size()) == cols, "ragged matrix rows");
    for (int c = 0; c < cols; ++c) M(i, c) = j[i][c].get<double>();
  }
  return M;
}

json vector_to_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VectorXd vector_from_json(const json& j) {
  require(j.is_array(), "vector must be an array");
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

json projection_to_json(const ProjectionSpec& p) {
  json j;
  switch (p.kind) {
    case ProjectionKind::None:
      j["kind"] = "none";
      break;
    case ProjectionKind::Box:
      j["kind"] = "box";
      j["lo"] = vector_to_json(p.lo);
      j["hi"] = vector_to_json(p.hi);
      break;
    case ProjectionKind::PsiSat:
      j["kind"] = "psi_sat";
      j["psi"] = matrix_to_json(p.psi);
      j["lo"] = p.sat_lo;
      j["hi"] = p.sat_hi;
      break;
    case ProjectionKind::Polyhedron:
      j["kind"] = "polyhedron";
      j["A"] = matrix_to_json(p.poly.A);
      j["b"] = vector_to_json(p.poly.b);
      break;
  }
  return j;
}

ProjectionSpec projection_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") return ProjectionSpec::none();
  if (kind == "box") return ProjectionSpec::box(vector_from_json(j.at("lo")), vector_from_json(j.at("hi")));
  if (kind == "psi_sat")
    return ProjectionSpec::psi_sat(matrix_from_json(j.at("psi")), j.at("lo").get<double>(),
                                   j.at("hi").get<double>());
  if (kind == "polyhedron") {
    Polyhedron p;
    p.A = matrix_from_json(j.at("A"));
    p.b = vector_from_json(j.at("b"));
    return ProjectionSpec::polyhedron(p);
  }
  throw std::runtime_error("serialize: unknown projection kind " + kind);
}

json model_to_json(const QPNetParams& p) {
  json j;
  j["schema"] = "qpfit-model-v1";
  j["n"] = p.n();
  j["m"] = p.m();
  j["n_z"] = p.nz();
  j["eps"] = p.eps;
  j["F"] = matrix_to_json(p.F);
  j["f"] = vector_to_json(p.f);
  j["L"] = matrix_to_json(p.L);
  j["G"] = matrix_to_json(p.G);
  j["g"] = vector_to_json(p.g);
  j["projection"] = projection_to_json(p.projection);
  j["label_scale"] = vector_to_json(p.label_scale);
  return j;
}

QPNetParams model_from_json(const json& j) {
  require(j.at("schema").get<std::string>() == "qpfit-model-v1", "unknown model schema");
  QPNetParams p;
  p.F = matrix_from_json(j.at("F"));
  p.f = vector_from_json(j.at("f"));
  p.L = matrix_from_json(j.at("L"));
  p.eps = j.at("eps").get<double>();
  p.G = matrix_from_json(j.at("G"));
  p.g = vector_from_json(j.at("g"));
  p.projection = projection_from_json(j.at("projection"));
  p.label_scale = vector_from_json(j.at("label_scale"));
  require(p.n() == j.at("n").get<int>() && p.m() == j.at("m").get<int>() &&
              p.nz() == j.at("n_z").get<int>(),
          "model dimension fields disagree with matrix shapes");
  return p;
}

json condensed_to_json(const CondensedQP& c) {
  json j;
  j["schema"] = "qpfit-condensed-v1";
  j["n"] = c.n;
  j["m"] = c.m;
  j["horizon"] = c.horizon;
  j["Lambda"] = matrix_to_json(c.Lambda);
  j["Gamma"] = matrix_to_json(c.Gamma);
  j["Phi"] = matrix_to_json(c.Phi);
  j["Omega"] = matrix_to_json(c.Omega);
  j["omega"] = vector_to_json(c.omega);
  j["Sx"] = matrix_to_json(c.Sx);
  j["Su"] = matrix_to_json(c.Su);
  j["hash"] = c.hash();
  return j;
}

CondensedQP condensed_from_json(const json& j) {
  require(j.at("schema").get<std::string>() == "qpfit-condensed-v1", "unknown condensed schema");
  CondensedQP c;
  c.n = j.at("n").get<int>();
  c.m = j.at("m").get<int>();
  c.horizon = j.at("horizon").get<int>();
  c.Lambda = matrix_from_json(j.at("Lambda"));
  c.Gamma = matrix_from_json(j.at("Gamma"));
  c.Phi = matrix_from_json(j.at("Phi"));
  c.Omega = matrix_from_json(j.at("Omega"));
  c.omega = vector_from_json(j.at("omega"));
  c.Sx = matrix_from_json(j.at("Sx"));
  c.Su = matrix_from_json(j.at("Su"));
  if (c.Phi.rows() == 0) c.Phi.resize(0, c.dim());
  if (c.Omega.rows() == 0) c.Omega.resize(0, c.n);
  return c;
}

json pwa_to_json(const PWAController& c) {
  json j;
  j["schema"] = "qpfit-pwa-v1";
  j["n"] = c.n;
  j["m"] = c.m;
  j["n_z"] = c.nz;
  j["projection"] = projection_to_json(c.projection);
  json regions = json::array();
  for (const auto& r : c.regions) {
    json jr;
    jr["E"] = matrix_to_json(r.E);
    jr["e"] = vector_to_json(r.e);
    jr["K"] = matrix_to_json(r.K);
    jr["k"] = vector_to_json(r.k);
    jr["active_mask"] = r.active_mask;
    regions.push_back(std::move(jr));
  }
  j["regions"] = std::move(regions);
  return j;
}

PWAController pwa_from_json(const json& j) {
  require(j.at("schema").get<std::string>() == "qpfit-pwa-v1", "unknown pwa schema");
  PWAController c;
  c.n = j.at("n").get<int>();
  c.m = j.at("m").get<int>();
  c.nz = j.at("n_z").get<int>();
  c.projection = projection_from_json(j.at("projection"));
  for (const auto& jr : j.at("regions")) {
    Region r;
    r.E = matrix_from_json(jr.at("E"));
    r.e = vector_from_json(jr.at("e"));
    r.K = matrix_from_json(jr.at("K"));
    r.k = vector_from_json(jr.at("k"));
    r.active_mask = jr.at("active_mask").get<std::uint64_t>();
    if (r.E.rows() == 0) r.E.resize(0, c.n);
    c.regions.push_back(std::move(r));
  }
  return c;
}

void pwa_write_binary(const PWAController& c, const std::filesystem::path& path) {
  std::vector<unsigned char> buf;
  buf.reserve(4 * pwa_storage_words(c));
  append_u32(buf, static_cast<std::uint32_t>(c.n));
  append_u32(buf, static_cast<std::uint32_t>(c.m));
  append_u32(buf, static_cast<std::uint32_t>(c.regions.size()));
  for (const auto& r : c.regions) {
    append_u32(buf, static_cast<std::uint32_t>(r.E.rows()));
    for (int i = 0; i < r.E.rows(); ++i)
      for (int j = 0; j < r.E.cols(); ++j) append_f32(buf, r.E(i, j));
    for (int i = 0; i < r.e.size(); ++i) append_f32(buf, r.e(i));
    for (int i = 0; i < r.K.rows(); ++i)
      for (int j = 0; j < r.K.cols(); ++j) append_f32(buf, r.K(i, j));
    for (int i = 0; i < r.k.size(); ++i) append_f32(buf, r.k(i));
  }
  switch (c.projection.kind) {
    case ProjectionKind::None:
      append_u32(buf, 0);
      break;
    case ProjectionKind::Box:
      append_u32(buf, 1);
      for (int i = 0; i < c.projection.lo.size(); ++i) append_f32(buf, c.projection.lo(i));
      for (int i = 0; i < c.projection.hi.size(); ++i) append_f32(buf, c.projection.hi(i));
      break;
    case ProjectionKind::PsiSat:
      append_u32(buf, 2);
      for (int i = 0; i < c.projection.psi.rows(); ++i)
        for (int j = 0; j < c.projection.psi.cols(); ++j) append_f32(buf, c.projection.psi(i, j));
      append_f32(buf, c.projection.sat_lo);
      append_f32(buf, c.projection.sat_hi);
      break;
    case ProjectionKind::Polyhedron:
      append_u32(buf, 3);
      append_u32(buf, static_cast<std::uint32_t>(c.projection.poly.rows()));
      for (int i = 0; i < c.projection.poly.A.rows(); ++i)
        for (int j = 0; j < c.projection.poly.A.cols(); ++j)
          append_f32(buf, c.projection.poly.A(i, j));
      for (int i = 0; i < c.projection.poly.b.size(); ++i) append_f32(buf, c.projection.poly.b(i));
      break;
  }
  require(buf.size() == 4 * pwa_storage_words(c), "binary layout disagrees with storage formula");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void dataset_write_csv(const Dataset& ds, const std::filesystem::path& csv_path,
                       const std::filesystem::path& sidecar_path) {
  std::ofstream out(csv_path);
  require(out.good(), "cannot open " + csv_path.string());
  for (int j = 0; j < ds.n(); ++j) out << "x" << (j + 1) << ",";
  for (int j = 0; j < ds.m(); ++j) out << "u" << (j + 1) << (j + 1 == ds.m() ? "" : ",");
  out << "\n";
  for (int i = 0; i < ds.N(); ++i) {
    for (int j = 0; j < ds.n(); ++j) out << format_double(ds.states(i, j)) << ",";
    for (int j = 0; j < ds.m(); ++j)
      out << format_double(ds.labels(i, j)) << (j + 1 == ds.m() ? "" : ",");
    out << "\n";
  }
  json side;
  side["schema"] = "qpfit-dataset-v1";
  side["N"] = ds.N();
  side["n"] = ds.n();
  side["m"] = ds.m();
  side["label_scale"] = vector_to_json(ds.label_scale);
  side["seed"] = ds.seed;
  side["box"] = {{"lo", vector_to_json(ds.box.lo)}, {"hi", vector_to_json(ds.box.hi)}};
  side["problem_hash"] = ds.problem_hash;
  write_json_file(side, sidecar_path);
}

Dataset dataset_read_csv(const std::filesystem::path& csv_path,
                         const std::filesystem::path& sidecar_path) {
  json side = read_json_file(sidecar_path);
  require(side.at("schema").get<std::string>() == "qpfit-dataset-v1", "unknown dataset schema");
  Dataset ds;
  const int N = side.at("N").get<int>();
  const int n = side.at("n").get<int>();
  const int m = side.at("m").get<int>();
  ds.label_scale = vector_from_json(side.at("label_scale"));
  ds.seed = side.at("seed").get<std::uint64_t>();
  ds.box.lo = vector_from_json(side.at("box").at("lo"));
  ds.box.hi = vector_from_json(side.at("box").at("hi"));
  ds.problem_hash = side.at("problem_hash").get<std::string>();
  ds.states.resize(N, n);
  ds.labels.resize(N, m);

  std::ifstream in(csv_path);
  require(in.good(), "cannot open " + csv_path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty dataset csv");
  for (int i = 0; i < N; ++i) {
    require(static_cast<bool>(std::getline(in, line)), "dataset csv truncated");
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < n + m; ++j) {
      require(static_cast<bool>(std::getline(ss, cell, ',')), "dataset csv row too short");
      double v = std::stod(cell);
      if (j < n)
        ds.states(i, j) = v;
      else
        ds.labels(i, j - n) = v;
    }
  }
  return ds;
}

void train_report_write_csv(const TrainReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path.string());
  out << "epoch";
  for (size_t r = 0; r < rep.epoch_loss.size(); ++r) out << ",loss_r" << r;
  out << "\n";
  size_t epochs = 0;
  for (const auto& e : rep.epoch_loss) epochs = std::max(epochs, e.size());
  for (size_t e = 0; e < epochs; ++e) {
    out << e;
    for (const auto& rl : rep.epoch_loss)
      out << "," << (e < rl.size() ? format_double(rl[e]) : std::string("nan"));
    out << "\n";
  }
}

void trajectory_write_csv(const SimResult& sim, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path.string());
  out << "step,i_dm1,i_dm2,i_cm,v_out,u1,u2,u3,d1,d2,d3\n";
  for (int k = 0; k < sim.states.rows(); ++k) {
    out << k;
    for (int j = 0; j < 4; ++j) out << "," << format_double(sim.states(k, j));
    if (k < sim.inputs.rows()) {
      for (int j = 0; j < 3; ++j) out << "," << format_double(sim.inputs(k, j));
      for (int j = 0; j < 3; ++j) out << "," << format_double(sim.duties(k, j));
    } else {
      out << ",,,,,,";
    }
    out << "\n";
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

}  // namespace qpfit
