#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace sfilter {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QpResult {
  Eigen::VectorXd x;
  bool feasible = false;
  int iterations = 0;
  std::vector<int> active_set;       // constraint indices, insertion order
  Eigen::VectorXd multipliers;       // matching active_set
  Eigen::VectorXd slack;             // A x - b for every constraint
};

/// Strictly convex projection QP
///
///   minimize    (x - target)' diag(weights) (x - target) / 2
///   subject to  A.row(i) . x >= b(i)
///
/// solved with a dual active-set method (Goldfarb-Idnani). Pivoting is
/// deterministic: the lowest-index violated constraint enters and the
/// lowest-index blocking constraint leaves. When the constraints are
/// inconsistent the result carries feasible = false and x is left at the
/// last dual iterate; callers decide the fallback.
///
/// Throws SolverError when the iteration budget is exhausted.
QpResult solve_projection_qp(const Eigen::VectorXd& target, const Eigen::MatrixXd& A,
                             const Eigen::VectorXd& b,
                             const Eigen::VectorXd& weights = Eigen::VectorXd());

}  // namespace sfilter
