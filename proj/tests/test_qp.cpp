#include <doctest.h>

#include <functional>
#include <random>

#include "sfilter/qp.hpp"
#include "test_support.hpp"

using namespace sfilter;



TEST_CASE("unconstrained projection returns the target") {
  Eigen::VectorXd t(3);
  t << 1, -2, 0.5;
  const QpResult r = solve_projection_qp(t, Eigen::MatrixXd(0, 3), Eigen::VectorXd(0));
  CHECK(r.feasible);
  CHECK((r.x - t).norm() == 0.0);
}

TEST_CASE("single constraint closed-form projection") {
  // v* = v_des + max(0, b - a.v_des)/(a.a) * a, frozen: (-2,0) -> (-1,0).
  Eigen::VectorXd t(2);
  t << -2, 0;
  Eigen::MatrixXd A(1, 2);
  A << 1, 0;
  Eigen::VectorXd b(1);
  b << -1;
  const QpResult r = solve_projection_qp(t, A, b);
  CHECK(r.feasible);
  CHECK(std::abs(r.x(0) - (-1.0)) < 1e-9);
  CHECK(std::abs(r.x(1) - 0.0) < 1e-9);

  // Inactive constraint passes through.
  b << -5;
  const QpResult r2 = solve_projection_qp(t, A, b);
  CHECK((r2.x - t).norm() < 1e-12);
  CHECK(r2.active_set.empty());
}

TEST_CASE("random instances match the enumeration oracle") {
  std::mt19937_64 rng(424242);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_int_distribution<int> rows(0, 8);
  std::normal_distribution<double> gauss(0.0, 1.0);

  int feasible_count = 0, infeasible_count = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const long n = dim(rng);
    const long m = rows(rng);
    Eigen::VectorXd t(n);
    for (long i = 0; i < n; ++i) t(i) = gauss(rng);
    Eigen::MatrixXd A(m + 2 * n, n);
    Eigen::VectorXd b(m + 2 * n);
    for (long i = 0; i < m; ++i) {
      for (long k = 0; k < n; ++k) A(i, k) = gauss(rng);
      b(i) = gauss(rng);
    }
    // Velocity-style box keeps every instance bounded.
    const double box = 1.5;
    for (long k = 0; k < n; ++k) {
      A.row(m + 2 * k).setZero();
      A(m + 2 * k, k) = 1.0;
      b(m + 2 * k) = -box;
      A.row(m + 2 * k + 1).setZero();
      A(m + 2 * k + 1, k) = -1.0;
      b(m + 2 * k + 1) = -box;
    }

    bool oracle_feasible = false;
    const double oracle_obj = oracle::qp_enumeration_oracle(t, A, b, &oracle_feasible);

    const QpResult r = solve_projection_qp(t, A, b);
    if (!oracle_feasible) {
      CHECK_FALSE(r.feasible);
      ++infeasible_count;
      continue;
    }
    ++feasible_count;
    REQUIRE(r.feasible);
    CHECK((r.x - t).squaredNorm() == doctest::Approx(oracle_obj).epsilon(1e-6));
    CHECK(r.slack.minCoeff() > -1e-8);
  }
  CHECK(feasible_count > 200);
  CHECK(infeasible_count > 10);
}

TEST_CASE("redundant constraints do not break the pivoting") {
  Eigen::VectorXd t(2);
  t << -3, 0;
  Eigen::MatrixXd A(3, 2);
  A << 1, 0, 1, 0, 1, 1e-9;  // nearly/exactly dependent rows
  Eigen::VectorXd b(3);
  b << -1, -1, -1;
  const QpResult r = solve_projection_qp(t, A, b);
  CHECK(r.feasible);
  CHECK(std::abs(r.x(0) - (-1.0)) < 1e-6);
}

TEST_CASE("detects inconsistent constraints") {
  Eigen::VectorXd t(1);
  t << 0;
  Eigen::MatrixXd A(2, 1);
  A << 1, -1;
  Eigen::VectorXd b(2);
  b << 1, 1;  // x >= 1 and x <= -1
  const QpResult r = solve_projection_qp(t, A, b);
  CHECK_FALSE(r.feasible);
}

TEST_CASE("weighted projection biases toward heavy coordinates") {
  Eigen::VectorXd t(2);
  t << 1, 1;
  Eigen::MatrixXd A(1, 2);
  A << -1, -1;  // x + y <= 0
  Eigen::VectorXd b(1);
  b << 0;
  Eigen::VectorXd w(2);
  w << 100.0, 1.0;
  const QpResult r = solve_projection_qp(t, A, b, w);
  CHECK(r.feasible);
  // The cheap coordinate absorbs nearly all of the correction.
  CHECK(r.x(0) > 0.9);
  CHECK(r.x(1) < -0.9);
  CHECK(std::abs(r.x(0) + r.x(1)) < 1e-8);
}

TEST_CASE("projection is idempotent") {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd t(3);
    Eigen::MatrixXd A(4, 3);
    Eigen::VectorXd b(4);
    for (long i = 0; i < 3; ++i) t(i) = gauss(rng);
    for (long i = 0; i < 4; ++i) {
      for (long k = 0; k < 3; ++k) A(i, k) = gauss(rng);
      b(i) = gauss(rng) - 1.0;
    }
    const QpResult r1 = solve_projection_qp(t, A, b);
    if (!r1.feasible) continue;
    const QpResult r2 = solve_projection_qp(r1.x, A, b);
    CHECK((r2.x - r1.x).norm() < 1e-9);
  }
}
