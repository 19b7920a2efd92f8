#include "doctest.h"
#include "qpfit/numkit.hpp"
#include "oracles.hpp"

#include <random>

using namespace qpfit;

TEST_SUITE_BEGIN("numkit");

TEST_CASE("matrix_exponential basics") {
  CHECK(matrix_exponential(MatrixXd::Zero(3, 3)).isApprox(MatrixXd::Identity(3, 3), 1e-14));

  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 1.3;
  D(1, 1) = -0.7;
  MatrixXd E = matrix_exponential(D);
  CHECK(E(0, 0) == doctest::Approx(std::exp(1.3)).epsilon(1e-12));
  CHECK(E(1, 1) == doctest::Approx(std::exp(-0.7)).epsilon(1e-12));
  CHECK(std::abs(E(0, 1)) < 1e-15);

  MatrixXd N = MatrixXd::Zero(2, 2);
  N(0, 1) = 1.0;
  MatrixXd EN = matrix_exponential(N);
  CHECK(EN(0, 0) == doctest::Approx(1.0));
  CHECK(EN(0, 1) == doctest::Approx(1.0));
  CHECK(EN(1, 0) == doctest::Approx(0.0));
  CHECK(EN(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("matrix_exponential inverse property on random 4x4") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    MatrixXd M = oracles::random_mat(4, 4, rng);
    MatrixXd P = matrix_exponential(M) * matrix_exponential(-M);
    CHECK((P - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("dare A=0 gives P=Q") {
  std::mt19937_64 rng(3);
  MatrixXd A = MatrixXd::Zero(3, 3);
  MatrixXd B = MatrixXd::Identity(3, 3);
  MatrixXd Q = oracles::random_spd(3, rng);
  MatrixXd R = MatrixXd::Identity(3, 3);
  auto res = dare_solve(A, B, Q, R);
  CHECK((res.P - Q).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("dare scalar matches fixed-point oracle") {
  double a = 0.5, b = 1.0, q = 1.0, r = 1.0;
  double p_oracle = oracles::scalar_dare_fixed_point(a, b, q, r);
  MatrixXd A(1, 1), B(1, 1), Q(1, 1), R(1, 1);
  A << a; B << b; Q << q; R << r;
  auto res = dare_solve(A, B, Q, R);
  CHECK(res.P(0, 0) == doctest::Approx(p_oracle).epsilon(1e-12));
  CHECK(res.residual < 1e-8);
}

TEST_CASE("dare gain stabilizes random systems") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 10; ++t) {
    int n = 2 + static_cast<int>(rng() % 3);
    int m = 1 + static_cast<int>(rng() % 2);
    MatrixXd A = oracles::random_mat(n, n, rng);
    MatrixXd B = oracles::random_mat(n, m, rng);
    MatrixXd Q = oracles::random_spd(n, rng, 0.1);
    MatrixXd R = oracles::random_spd(m, rng, 0.5);
    auto res = dare_solve(A, B, Q, R);
    CHECK(res.residual < 1e-8 * (1.0 + res.P.cwiseAbs().maxCoeff()));
    Eigen::EigenSolver<MatrixXd> es(A + B * res.K);
    CHECK(es.eigenvalues().cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("spd_sqrt") {
  CHECK(spd_sqrt(MatrixXd::Identity(3, 3)).isApprox(MatrixXd::Identity(3, 3), 1e-12));
  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 4.0;
  D(1, 1) = 9.0;
  MatrixXd S = spd_sqrt(D);
  CHECK(S(0, 0) == doctest::Approx(2.0));
  CHECK(S(1, 1) == doctest::Approx(3.0));

  std::mt19937_64 rng(5);
  MatrixXd M = oracles::random_spd(4, rng);
  MatrixXd R = spd_sqrt(M);
  CHECK((R * R - M).cwiseAbs().maxCoeff() < 1e-10);

  MatrixXd neg = -MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(spd_sqrt(neg), std::invalid_argument);
}

TEST_CASE("pseudo_inverse Penrose identities") {
  CHECK(pseudo_inverse(MatrixXd::Identity(3, 3)).isApprox(MatrixXd::Identity(3, 3), 1e-12));
  MatrixXd two(1, 1);
  two << 2.0;
  CHECK(pseudo_inverse(two)(0, 0) == doctest::Approx(0.5));

  std::mt19937_64 rng(9);
  MatrixXd B = oracles::random_mat(4, 3, rng);
  MatrixXd Bp = pseudo_inverse(B);
  CHECK((B * Bp * B - B).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((Bp * B * Bp - Bp).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((B * Bp) - (B * Bp).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((Bp * B) - (Bp * B).transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_SUITE_END();
