#include "qpfit/numkit.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cstring>
#include <sstream>
#include <stdexcept>

namespace qpfit {

MatrixXd matrix_exponential(const MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("matrix_exponential: matrix must be square");
  if (!M.allFinite()) throw std::invalid_argument("matrix_exponential: non-finite entries");
  return M.exp();
}

DareResult dare_solve(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                      const MatrixXd& R, int max_iter) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  if (A.cols() != n || B.rows() != n) throw std::invalid_argument("dare_solve: dimension mismatch");
  if (Q.rows() != n || Q.cols() != n) throw std::invalid_argument("dare_solve: Q must be n x n");
  if (R.rows() != m || R.cols() != m) throw std::invalid_argument("dare_solve: R must be m x m");

  Eigen::LLT<MatrixXd> Rchol(R);
  if (Rchol.info() != Eigen::Success) throw std::invalid_argument("dare_solve: R must be positive definite");

  // Structure-preserving doubling: quadratic convergence to the
  // stabilizing solution for stabilizable/detectable data.
  MatrixXd Ak = A;
  MatrixXd Gk = B * Rchol.solve(B.transpose());
  MatrixXd Hk = Q;
  const MatrixXd I = MatrixXd::Identity(n, n);

  int iters = 0;
  for (; iters < max_iter; ++iters) {
    MatrixXd W = I + Gk * Hk;
    Eigen::PartialPivLU<MatrixXd> lu(W);
    MatrixXd V1 = lu.solve(Ak);                          // W V1 = Ak
    MatrixXd V2 = lu.solve(Gk.transpose()).transpose();  // V2 W' = Gk
    MatrixXd Hnext = Hk + V1.transpose() * Hk * Ak;
    MatrixXd Gnext = Gk + Ak * V2 * Ak.transpose();
    MatrixXd Anext = Ak * V1;
    double delta = (Hnext - Hk).cwiseAbs().maxCoeff();
    double scale = 1.0 + Hnext.cwiseAbs().maxCoeff();
    Ak = Anext;
    Gk = Gnext;
    Hk = 0.5 * (Hnext + Hnext.transpose());
    if (delta <= 1e-15 * scale) {
      ++iters;
      break;
    }
  }
  if (iters >= max_iter) throw std::runtime_error("dare_solve: no convergence within iteration cap");

  DareResult out;
  out.P = Hk;
  MatrixXd S = R + B.transpose() * out.P * B;
  out.K = -S.ldlt().solve(B.transpose() * out.P * A);
  MatrixXd resid = out.P - (A.transpose() * out.P * A -
                            A.transpose() * out.P * B * S.ldlt().solve(B.transpose() * out.P * A) + Q);
  out.residual = resid.cwiseAbs().maxCoeff();
  out.iterations = iters;
  return out;
}

MatrixXd spd_sqrt(const MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spd_sqrt: matrix must be square");
  if (!M.isApprox(M.transpose(), 1e-10)) throw std::invalid_argument("spd_sqrt: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  if (es.info() != Eigen::Success) throw std::runtime_error("spd_sqrt: eigendecomposition failed");
  const VectorXd& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) throw std::invalid_argument("spd_sqrt: matrix is not positive definite");
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd pseudo_inverse(const MatrixXd& M) {
  if (M.size() == 0) return MatrixXd(M.cols(), M.rows());
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  double tol = std::max(M.rows(), M.cols()) * Eigen::NumTraits<double>::epsilon() * (s.size() ? s(0) : 0.0);
  VectorXd sinv = VectorXd::Zero(s.size());
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > tol) sinv(i) = 1.0 / s(i);
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_matrix(const MatrixXd& M, std::uint64_t seed) {
  std::uint64_t h = seed;
  std::int64_t dims[2] = {M.rows(), M.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      double v = M(i, j);
      h = fnv1a(&v, sizeof(v), h);
    }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace qpfit
