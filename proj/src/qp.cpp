#include "sfilter/qp.hpp"

#include <cmath>
#include <limits>

namespace sfilter {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

QpResult solve_projection_qp(const Eigen::VectorXd& target, const Eigen::MatrixXd& A,
                             const Eigen::VectorXd& b, const Eigen::VectorXd& weights) {
  const long n = target.size();
  const long m = A.rows();
  if (m != b.size()) throw std::invalid_argument("qp: A and b sizes disagree");
  if (m > 0 && A.cols() != n) throw std::invalid_argument("qp: A column count mismatch");

  Eigen::VectorXd w_inv(n);
  for (long i = 0; i < n; ++i) {
    const double w = weights.size() ? weights(i) : 1.0;
    if (!(w > 0.0)) throw std::invalid_argument("qp: weights must be positive");
    w_inv(i) = 1.0 / w;
  }

  QpResult res;
  res.x = target;
  res.feasible = true;

  const double scale = std::max(1.0, b.size() ? b.cwiseAbs().maxCoeff() : 0.0);
  const double tol_feas = 1e-11 * scale;
  const double tol_dir = 1e-13;
  const int max_iterations = 50 * static_cast<int>(m + 1) + 50;

  std::vector<int> active;
  std::vector<double> u;

  auto lowest_violated = [&]() -> int {
    for (long i = 0; i < m; ++i) {
      bool is_active = false;
      for (int a : active)
        if (a == i) {
          is_active = true;
          break;
        }
      if (is_active) continue;
      if (A.row(i).dot(res.x) < b(i) - tol_feas) return static_cast<int>(i);
    }
    return -1;
  };

  int iter = 0;
  while (true) {
    if (++iter > max_iterations) throw SolverError("qp: iteration budget exhausted");
    const int p = lowest_violated();
    if (p < 0) break;

    const Eigen::VectorXd a_p = A.row(p).transpose();
    double u_plus = 0.0;

    while (true) {
      if (++iter > max_iterations) throw SolverError("qp: iteration budget exhausted");
      const int k = static_cast<int>(active.size());

      Eigen::VectorXd r(k), z(n);
      if (k > 0) {
        Eigen::MatrixXd N(k, n);
        for (int i = 0; i < k; ++i) N.row(i) = A.row(active[i]);
        const Eigen::MatrixXd NW = N * w_inv.asDiagonal();           // k x n
        const Eigen::MatrixXd B = NW * N.transpose();                // k x k
        r = B.ldlt().solve(NW * a_p);
        z = w_inv.asDiagonal() * (a_p - N.transpose() * r);
      } else {
        z = w_inv.asDiagonal() * a_p;
      }

      // Dual blocking step: first active constraint whose multiplier hits zero.
      double t1 = kInf;
      int blocking = -1;
      for (int i = 0; i < k; ++i) {
        if (r(i) > tol_dir) {
          const double t = u[i] / r(i);
          if (t < t1) {
            t1 = t;
            blocking = i;
          }
        }
      }

      const double a_p_z = a_p.dot(z);
      const double t2 = a_p_z > tol_dir ? (b(p) - a_p.dot(res.x)) / a_p_z : kInf;

      const double t = std::min(t1, t2);
      if (t == kInf) {
        res.feasible = false;  // constraint p cannot be satisfied
        break;
      }

      if (t2 < kInf) res.x += t * z;
      for (int i = 0; i < k; ++i) u[i] -= t * r(i);
      u_plus += t;

      if (t == t2) {
        active.push_back(p);
        u.push_back(u_plus);
        break;
      }
      active.erase(active.begin() + blocking);
      u.erase(u.begin() + blocking);
    }

    if (!res.feasible) break;
  }

  res.iterations = iter;
  res.active_set = active;
  res.multipliers = Eigen::Map<Eigen::VectorXd>(u.data(), static_cast<long>(u.size()));
  res.slack = m > 0 ? Eigen::VectorXd(A * res.x - b) : Eigen::VectorXd();
  return res;
}

}  // namespace sfilter
