#pragma once

#include <optional>
#include <string>

#include "scbf/common.hpp"

namespace scbf {

/// Dense convex QP:
///   min  1/2 z^T P z + q^T z
///   s.t. A z <= ub,  lo <= z <= hi   (+/-inf bounds allowed)
struct QpProblem {
  Matrix P;
  Vector q;
  Matrix A;   ///< rows x k (rows may be 0)
  Vector ub;  ///< per-row upper bounds
  Vector lo;
  Vector hi;

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_rows() const { return static_cast<int>(ub.size()); }
};

enum class QpStatus { Optimal, Infeasible, MaxIter, Unbounded };

const char* to_string(QpStatus s);

struct KktReport {
  double stationarity = 0.0;    ///< inf-norm of the Lagrangian gradient
  double primal = 0.0;          ///< max constraint violation
  double complementarity = 0.0; ///< max |dual * slack|
  double max() const;
};

struct QpSolution {
  Vector z;
  QpStatus status = QpStatus::MaxIter;
  double objective = 0.0;
  KktReport kkt;
  int iterations = 0;
  Vector row_duals;  ///< multipliers for A z <= ub
  Vector lo_duals;   ///< multipliers for lo <= z
  Vector hi_duals;   ///< multipliers for z <= hi
  /// Infeasible problems: smallest max row violation found (phase-1 value)
  /// and the norm of the phase-1 multipliers acting as a certificate.
  double min_violation = 0.0;
  double certificate_norm = 0.0;
};

/// Primal active-set solver for small dense convex QPs.
///
/// Inequality rows are scaled to unit norm, ties are broken by smallest
/// constraint index (Bland-style), and feasibility is established by a
/// phase-1 least-violation subproblem, so identical inputs always produce
/// identical output. Keeps private workspace; use one instance per thread.
class QpSolver {
 public:
  double tol = 1e-8;
  int max_iter = 200;

  QpSolution solve(const QpProblem& p);
  /// Warm start from a previous iterate (clipped into the box first).
  QpSolution solve(const QpProblem& p, const Vector& warm_start);

 private:
  QpSolution solve_impl(const QpProblem& p, const Vector* warm_start);
};

/// KKT residuals at (z, duals) for the given problem; duals for infinite
/// bounds are ignored.
KktReport kkt_residual(const QpProblem& p, const Vector& z,
                       const Vector& row_duals, const Vector& lo_duals,
                       const Vector& hi_duals);

}  // namespace scbf
