#include "qpfit/explicit_pwa.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <stdexcept>

namespace qpfit {

namespace {

constexpr double kSlack = 1e-9;

// Normalizes rows to unit norm; drops trivial rows; returns false when a row
// is infeasible outright (0'x <= negative).
bool normalize_region(MatrixXd& E, VectorXd& e) {
  std::vector<int> keep;
  for (int i = 0; i < E.rows(); ++i) {
    double nrm = E.row(i).norm();
    if (nrm < 1e-14) {
      if (e(i) < -1e-12) return false;
      continue;  // trivially satisfied
    }
    E.row(i) /= nrm;
    e(i) /= nrm;
    keep.push_back(i);
  }
  if (static_cast<int>(keep.size()) != E.rows()) {
    MatrixXd E2(keep.size(), E.cols());
    VectorXd e2(keep.size());
    for (size_t k = 0; k < keep.size(); ++k) {
      E2.row(k) = E.row(keep[k]);
      e2(k) = e(keep[k]);
    }
    E = std::move(E2);
    e = std::move(e2);
  }
  return true;
}

void drop_redundant_rows(MatrixXd& E, VectorXd& e) {
  if (E.rows() <= 1) return;
  std::vector<int> keep;
  for (int i = 0; i < E.rows(); ++i) {
    MatrixXd rest(E.rows() - 1, E.cols());
    VectorXd rest_b(e.size() - 1);
    int w = 0;
    for (int j = 0; j < E.rows(); ++j) {
      if (j == i) continue;
      rest.row(w) = E.row(j);
      rest_b(w) = e(j);
      ++w;
    }
    LPResult r = lp_solve(-E.row(i).transpose(), rest, rest_b);
    bool redundant = (r.status == LPStatus::Optimal && -r.objective <= e(i) + kSlack);
    if (!redundant) keep.push_back(i);
  }
  if (static_cast<int>(keep.size()) == E.rows()) return;
  MatrixXd E2(keep.size(), E.cols());
  VectorXd e2(keep.size());
  for (size_t k = 0; k < keep.size(); ++k) {
    E2.row(k) = E.row(keep[k]);
    e2(k) = e(keep[k]);
  }
  E = std::move(E2);
  e = std::move(e2);
}

}  // namespace

PWAController enumerate_regions(const QPNetParams& p) {
  const int nz = p.nz();
  const int n = p.n();
  const int m = p.m();
  if (nz > 24)
    throw std::invalid_argument("enumerate_regions: 2^nz candidates infeasible for nz > 24");

  PWAController out;
  out.n = n;
  out.m = m;
  out.nz = nz;
  out.projection = p.projection;

  const MatrixXd M = p.quadratic();
  const MatrixXd Cx = 2.0 * p.L.transpose() * p.F;  // c(x) = Cx x + c0
  const VectorXd c0 = 2.0 * p.L.transpose() * p.f;

  for (std::uint64_t mask = 0; mask < (1ull << nz); ++mask) {
    std::vector<int> F, A;
    for (int i = 0; i < nz; ++i)
      if (mask & (1ull << i))
        A.push_back(i);
      else
        F.push_back(i);

    // z_F(x) = -0.5 M_FF^{-1} c_F(x); affine in x.
    MatrixXd Zx = MatrixXd::Zero(nz, n);
    VectorXd Z0 = VectorXd::Zero(nz);
    if (!F.empty()) {
      MatrixXd MFF(F.size(), F.size());
      MatrixXd CxF(F.size(), n);
      VectorXd c0F(F.size());
      for (size_t a = 0; a < F.size(); ++a) {
        CxF.row(a) = Cx.row(F[a]);
        c0F(a) = c0(F[a]);
        for (size_t b = 0; b < F.size(); ++b) MFF(a, b) = M(F[a], F[b]);
      }
      Eigen::LLT<MatrixXd> chol(MFF);
      MatrixXd ZxF;
      VectorXd Z0F;
      if (chol.info() == Eigen::Success) {
        ZxF = -0.5 * chol.solve(CxF);
        Z0F = -0.5 * chol.solve(c0F);
      } else {
        Eigen::FullPivLU<MatrixXd> lu(MFF);
        if (!lu.isInvertible()) continue;  // singular reduced block: skip candidate
        ZxF = -0.5 * lu.solve(CxF);
        Z0F = -0.5 * lu.solve(c0F);
      }
      for (size_t a = 0; a < F.size(); ++a) {
        Zx.row(F[a]) = ZxF.row(a);
        Z0(F[a]) = Z0F(a);
      }
    }

    // Region: z_F(x) >= 0 and lambda_A(x) = 2 M_{A,:} z(x) + c_A(x) >= 0.
    MatrixXd E(nz, n);
    VectorXd e(nz);
    int r = 0;
    for (int i : F) {
      E.row(r) = -Zx.row(i);
      e(r) = Z0(i);
      ++r;
    }
    for (int i : A) {
      Eigen::RowVectorXd lam_x = 2.0 * M.row(i) * Zx + Cx.row(i);
      double lam_0 = 2.0 * M.row(i) * Z0 + c0(i);
      E.row(r) = -lam_x;
      e(r) = lam_0;
      ++r;
    }

    if (!normalize_region(E, e)) continue;
    if (E.rows() > 0 && !lp_feasible(E, e, kSlack)) continue;
    drop_redundant_rows(E, e);

    Region reg;
    reg.E = std::move(E);
    reg.e = std::move(e);
    reg.K = p.G * Zx;
    reg.k = p.G * Z0 + p.g;
    reg.active_mask = mask;
    out.regions.push_back(std::move(reg));
  }

  std::sort(out.regions.begin(), out.regions.end(),
            [](const Region& a, const Region& b) { return a.active_mask < b.active_mask; });
  return out;
}

const Region* locate(const PWAController& c, const VectorXd& x, double tol) {
  for (const auto& r : c.regions) {
    if (r.E.rows() == 0) return &r;
    if (((r.E * x - r.e).array() <= tol).all()) return &r;
  }
  return nullptr;
}

VectorXd locate_and_eval(const PWAController& c, const VectorXd& x) {
  const Region* r = locate(c, x);
  if (!r) throw std::runtime_error("locate_and_eval: no region contains the query point");
  return c.projection.apply(r->K * x + r->k);
}

std::size_t pwa_storage_words(const PWAController& c) {
  // Flat layout: n, m, region_count | per region: n_h, E, e, K, k |
  // proj_kind, proj params. Every number is one 4-byte word.
  std::size_t words = 3;
  for (const auto& r : c.regions)
    words += 1 + static_cast<std::size_t>(r.E.rows()) * (c.n + 1) +
             static_cast<std::size_t>(c.m) * (c.n + 1);
  words += 1;  // projection kind tag
  switch (c.projection.kind) {
    case ProjectionKind::None:
      break;
    case ProjectionKind::Box:
      words += 2 * c.m;
      break;
    case ProjectionKind::PsiSat:
      words += static_cast<std::size_t>(c.projection.psi.size()) + 2;
      break;
    case ProjectionKind::Polyhedron:
      words += 1 + static_cast<std::size_t>(c.projection.poly.rows()) * (c.m + 1);
      break;
  }
  return words;
}

ComplexityReport complexity_report(const PWAController& c, const Box& domain,
                                   int timing_samples, std::uint64_t seed) {
  ComplexityReport rep;
  rep.region_count = static_cast<int>(c.regions.size());
  rep.storage_bytes = 4 * pwa_storage_words(c);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> times;
  times.reserve(timing_samples);
  VectorXd x(c.n);
  for (int s = 0; s < timing_samples; ++s) {
    for (int j = 0; j < c.n; ++j) x(j) = domain.lo(j) + (domain.hi(j) - domain.lo(j)) * unit(rng);
    auto t0 = std::chrono::steady_clock::now();
    volatile double sink = locate_and_eval(c, x)(0);
    (void)sink;
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  if (!times.empty()) {
    std::sort(times.begin(), times.end());
    rep.eval_median_us = times[times.size() / 2];
    rep.eval_max_us = times.back();
  }
  return rep;
}

}  // namespace qpfit
