#include "scbf/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace scbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-sided inequality a.z <= ub in solver-internal form. `origin` encodes
// where the constraint came from so duals can be mapped back:
//   0..m-1: problem row, m..m+k-1: upper bound, m+k..m+2k-1: lower bound,
//   >= m+2k: phase-1 internals.
struct Cons {
  Vector a;
  double ub;
  int origin;
  double scale = 1.0;  // original row norm (rows are normalized to unit norm)
};

struct InnerResult {
  Vector z;
  std::vector<double> duals;  // one per constraint, nonnegative at optimum
  std::vector<int> active;    // final working set
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
};

// Primal active-set loop for min 1/2 z^T P z + q^T z s.t. cons, starting
// from a feasible z. Handles positive semidefinite P: flat descent
// directions are followed to the nearest blocking constraint. Constraint
// adds and drops break ties toward the smallest index (Bland), which also
// serves as the anti-cycling rule.
InnerResult active_set_minimize(const Matrix& P, const Vector& q,
                                const std::vector<Cons>& cons, Vector z,
                                int max_iter, double tol) {
  const int k = static_cast<int>(z.size());
  const int nc = static_cast<int>(cons.size());

  std::vector<int> working;
  std::vector<char> in_working(nc, 0);

  InnerResult out;
  out.duals.assign(nc, 0.0);

  Eigen::HouseholderQR<Matrix> qr;
  for (int iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter + 1;
    const Vector g = P * z + q;
    const int w = static_cast<int>(working.size());

    Matrix AWt(k, w);
    for (int i = 0; i < w; ++i) AWt.col(i) = cons[working[i]].a;

    Matrix Z;
    if (w == 0) {
      Z = Matrix::Identity(k, k);
    } else {
      qr.compute(AWt);
      const Matrix Qfull = qr.householderQ();
      Z = Qfull.rightCols(k - w);
    }

    Vector dir = Vector::Zero(k);
    bool have_dir = false;
    bool ray = false;  // flat (zero-curvature) descent direction
    if (k - w > 0) {
      const Matrix Hr = Z.transpose() * P * Z;
      const Vector gr = Z.transpose() * g;
      Eigen::SelfAdjointEigenSolver<Matrix> es(Hr);
      const Vector& evals = es.eigenvalues();
      const Matrix& evecs = es.eigenvectors();
      const double curv_tol = std::max(evals.cwiseAbs().maxCoeff(), 1.0) * 1e-12;

      Vector newton = Vector::Zero(k - w);
      Vector flat = Vector::Zero(k - w);
      for (int i = 0; i < k - w; ++i) {
        const double c = evecs.col(i).dot(gr);
        if (evals[i] > curv_tol) {
          newton += (c / evals[i]) * evecs.col(i);
        } else {
          flat += c * evecs.col(i);
        }
      }
      if (flat.norm() > 1e-11 * std::max(1.0, g.norm())) {
        dir = -(Z * flat);
        dir.normalize();
        have_dir = true;
        ray = true;
      } else {
        const Vector p = -(Z * newton);
        if (p.lpNorm<Eigen::Infinity>() >
            1e-11 * std::max(1.0, z.lpNorm<Eigen::Infinity>())) {
          dir = p;
          have_dir = true;
        }
      }
    }

    if (!have_dir) {
      // Minimizer on the current face: check multipliers.
      if (w == 0) {
        out.z = z;
        out.status = QpStatus::Optimal;
        return out;
      }
      const Vector lambda = qr.solve(-g);  // least squares A_W^T lambda = -g
      int drop = -1;
      for (int i = 0; i < w; ++i) {
        if (lambda[i] < -tol &&
            (drop == -1 || working[i] < working[drop])) {
          drop = i;
        }
      }
      if (drop == -1) {
        // Polish: land exactly on the active face so complementarity does
        // not suffer from large multipliers times roundoff-sized slacks.
        Vector gap(w);
        for (int i = 0; i < w; ++i) {
          gap[i] = cons[working[i]].a.dot(z) - cons[working[i]].ub;
        }
        const Matrix AW = AWt.transpose();
        z -= AWt * (AW * AWt).ldlt().solve(gap);

        out.z = z;
        out.status = QpStatus::Optimal;
        out.active = working;
        std::fill(out.duals.begin(), out.duals.end(), 0.0);
        for (int i = 0; i < w; ++i) {
          out.duals[working[i]] = std::max(lambda[i], 0.0);
        }
        return out;
      }
      in_working[working[drop]] = 0;
      working.erase(working.begin() + drop);
      continue;
    }

    // Ratio test over constraints outside the working set.
    const double cap = ray ? kInf : 1.0;
    double alpha = cap;
    for (int i = 0; i < nc; ++i) {
      if (in_working[i]) continue;
      const double ad = cons[i].a.dot(dir);
      if (ad <= 1e-10 * std::max(1.0, dir.norm())) continue;
      const double slack = std::max(cons[i].ub - cons[i].a.dot(z), 0.0);
      alpha = std::min(alpha, slack / ad);
    }
    int blocker = -1;
    if (alpha < cap - 1e-12 || ray) {
      for (int i = 0; i < nc; ++i) {
        if (in_working[i]) continue;
        const double ad = cons[i].a.dot(dir);
        if (ad <= 1e-10 * std::max(1.0, dir.norm())) continue;
        const double slack = std::max(cons[i].ub - cons[i].a.dot(z), 0.0);
        if (slack / ad <= alpha + 1e-12) {
          blocker = i;
          break;  // constraints scanned in index order: smallest wins
        }
      }
    }
    if (ray && blocker == -1) {
      out.z = z;
      out.status = QpStatus::Unbounded;
      return out;
    }
    z += alpha * dir;
    if (blocker >= 0) {
      in_working[blocker] = 1;
      working.insert(std::lower_bound(working.begin(), working.end(), blocker),
                     blocker);
    }
  }
  out.z = z;
  out.status = QpStatus::MaxIter;
  return out;
}

void validate_problem(const QpProblem& p) {
  const int k = p.num_vars();
  const int m = p.num_rows();
  require(k > 0, "qp_solve: problem has no variables");
  require(p.P.rows() == k && p.P.cols() == k, "qp_solve: P must be k x k");
  require(p.lo.size() == k && p.hi.size() == k, "qp_solve: box bounds must be k-vectors");
  require(m == 0 || (p.A.rows() == m && p.A.cols() == k),
          "qp_solve: A shape must match ub and q");
  const double pscale = std::max(1.0, p.P.cwiseAbs().maxCoeff());
  require((p.P - p.P.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * pscale,
          "qp_solve: P must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (p.P + p.P.transpose()));
  require(es.eigenvalues().minCoeff() >= -1e-10 * pscale,
          "qp_solve: P must be positive semidefinite");
  for (int j = 0; j < k; ++j) {
    require(p.lo[j] <= p.hi[j], "qp_solve: lo must not exceed hi");
  }
}

Vector clip_to_box(Vector z, const Vector& lo, const Vector& hi) {
  for (int j = 0; j < z.size(); ++j) {
    z[j] = std::clamp(z[j], lo[j], hi[j]);
    if (!std::isfinite(z[j])) z[j] = 0.0;
  }
  return z;
}

}  // namespace

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::Unbounded: return "unbounded";
  }
  return "unknown";
}

double KktReport::max() const {
  return std::max({stationarity, primal, complementarity});
}

KktReport kkt_residual(const QpProblem& p, const Vector& z,
                       const Vector& row_duals, const Vector& lo_duals,
                       const Vector& hi_duals) {
  const int k = p.num_vars();
  const int m = p.num_rows();
  require(z.size() == k && lo_duals.size() == k && hi_duals.size() == k &&
              row_duals.size() == m,
          "kkt_residual: dimension mismatch");

  Vector grad = p.P * z + p.q;
  if (m > 0) grad += p.A.transpose() * row_duals;
  grad += hi_duals - lo_duals;

  KktReport rep;
  rep.stationarity = grad.lpNorm<Eigen::Infinity>();

  double primal = 0.0;
  double comp = 0.0;
  if (m > 0) {
    const Vector slack = p.A * z - p.ub;
    for (int i = 0; i < m; ++i) {
      primal = std::max(primal, slack[i]);
      comp = std::max(comp, std::abs(row_duals[i] * slack[i]));
    }
  }
  for (int j = 0; j < k; ++j) {
    if (std::isfinite(p.lo[j])) {
      primal = std::max(primal, p.lo[j] - z[j]);
      comp = std::max(comp, std::abs(lo_duals[j] * (p.lo[j] - z[j])));
    }
    if (std::isfinite(p.hi[j])) {
      primal = std::max(primal, z[j] - p.hi[j]);
      comp = std::max(comp, std::abs(hi_duals[j] * (z[j] - p.hi[j])));
    }
  }
  rep.primal = std::max(primal, 0.0);
  rep.complementarity = comp;
  return rep;
}

QpSolution QpSolver::solve(const QpProblem& p) { return solve_impl(p, nullptr); }

QpSolution QpSolver::solve(const QpProblem& p, const Vector& warm_start) {
  return solve_impl(p, &warm_start);
}

QpSolution QpSolver::solve_impl(const QpProblem& p, const Vector* warm_start) {
  validate_problem(p);
  const int k = p.num_vars();
  const int m = p.num_rows();

  QpSolution sol;
  sol.row_duals = Vector::Zero(m);
  sol.lo_duals = Vector::Zero(k);
  sol.hi_duals = Vector::Zero(k);

  // Normalized constraint list; fixed ordering defines the Bland indices.
  std::vector<Cons> cons;
  cons.reserve(m + 2 * k);
  for (int i = 0; i < m; ++i) {
    Cons c{p.A.row(i).transpose(), p.ub[i], i, 1.0};
    const double s = c.a.norm();
    if (s < 1e-14) {
      if (c.ub < -tol) {
        sol.status = QpStatus::Infeasible;
        sol.z = clip_to_box(Vector::Zero(k), p.lo, p.hi);
        sol.min_violation = -c.ub;
        return sol;
      }
      continue;  // vacuous 0 <= ub row
    }
    c.a /= s;
    c.ub /= s;
    c.scale = s;
    cons.push_back(std::move(c));
  }
  for (int j = 0; j < k; ++j) {
    if (std::isfinite(p.hi[j])) {
      Cons c{Vector::Unit(k, j), p.hi[j], m + j, 1.0};
      cons.push_back(std::move(c));
    }
  }
  for (int j = 0; j < k; ++j) {
    if (std::isfinite(p.lo[j])) {
      Cons c{-Vector::Unit(k, j), -p.lo[j], m + k + j, 1.0};
      cons.push_back(std::move(c));
    }
  }

  Vector z = warm_start != nullptr && warm_start->size() == k
                 ? clip_to_box(*warm_start, p.lo, p.hi)
                 : clip_to_box(Vector::Zero(k), p.lo, p.hi);

  double violation = 0.0;
  for (const Cons& c : cons) violation = std::max(violation, c.a.dot(z) - c.ub);

  int iterations = 0;
  const double feas_tol = std::max(10.0 * tol, 1e-9);

  if (violation > feas_tol) {
    // Phase 1: min 1/2 |t|^2 with one violation variable per general row.
    // Box constraints stay hard (the start point already satisfies them).
    std::vector<int> soft;  // indices into cons with a t variable
    for (std::size_t c = 0; c < cons.size(); ++c) {
      if (cons[c].origin < m) soft.push_back(static_cast<int>(c));
    }
    const int nviol = static_cast<int>(soft.size());
    const int kk = k + nviol;
    Matrix P1 = Matrix::Zero(kk, kk);
    P1.bottomRightCorner(nviol, nviol).setIdentity();
    const Vector q1 = Vector::Zero(kk);

    std::vector<Cons> cons1;
    cons1.reserve(cons.size() + 2 * nviol);
    for (int i = 0; i < nviol; ++i) {
      Cons c;
      c.a = Vector::Zero(kk);
      c.a.head(k) = cons[soft[i]].a;
      c.a[k + i] = -1.0;
      c.a /= std::sqrt(2.0);  // keep unit norm
      c.ub = cons[soft[i]].ub / std::sqrt(2.0);
      c.origin = m + 2 * k + i;
      cons1.push_back(std::move(c));
    }
    for (const Cons& box : cons) {
      if (box.origin < m) continue;
      Cons c;
      c.a = Vector::Zero(kk);
      c.a.head(k) = box.a;
      c.ub = box.ub;
      c.origin = box.origin;
      cons1.push_back(std::move(c));
    }
    for (int i = 0; i < nviol; ++i) {
      Cons c;
      c.a = Vector::Zero(kk);
      c.a[k + i] = -1.0;
      c.ub = 0.0;
      c.origin = m + 2 * k + nviol + i;
      cons1.push_back(std::move(c));
    }

    Vector z1 = Vector::Zero(kk);
    z1.head(k) = z;
    for (int i = 0; i < nviol; ++i) {
      z1[k + i] = std::max(cons[soft[i]].a.dot(z) - cons[soft[i]].ub, 0.0);
    }
    const InnerResult r1 =
        active_set_minimize(P1, q1, cons1, z1, std::max(max_iter, 4 * kk), tol);
    iterations += r1.iterations;
    const double resid =
        nviol > 0 ? r1.z.tail(nviol).lpNorm<Eigen::Infinity>() : 0.0;
    if (r1.status != QpStatus::Optimal || resid > feas_tol) {
      sol.status = QpStatus::Infeasible;
      sol.z = clip_to_box(r1.z.head(k), p.lo, p.hi);
      sol.min_violation = resid;
      double cert = 0.0;
      for (int i = 0; i < nviol; ++i) cert += r1.duals[i] * r1.duals[i];
      sol.certificate_norm = std::sqrt(cert);
      sol.iterations = iterations;
      sol.objective = 0.5 * sol.z.dot(p.P * sol.z) + p.q.dot(sol.z);
      return sol;
    }
    z = clip_to_box(r1.z.head(k), p.lo, p.hi);
  }

  const InnerResult r2 = active_set_minimize(p.P, p.q, cons, z, max_iter, tol);
  iterations += r2.iterations;

  sol.z = clip_to_box(r2.z, p.lo, p.hi);
  sol.status = r2.status;
  sol.iterations = iterations;
  sol.objective = 0.5 * sol.z.dot(p.P * sol.z) + p.q.dot(sol.z);
  for (std::size_t c = 0; c < cons.size(); ++c) {
    const double lam = r2.duals[c] / cons[c].scale;
    const int origin = cons[c].origin;
    if (origin < m) {
      sol.row_duals[origin] = lam;
    } else if (origin < m + k) {
      sol.hi_duals[origin - m] = lam;
    } else {
      sol.lo_duals[origin - m - k] = lam;
    }
  }
  sol.kkt = kkt_residual(p, sol.z, sol.row_duals, sol.lo_duals, sol.hi_duals);
  if (sol.status == QpStatus::Optimal && sol.kkt.max() > std::max(tol, 1e-8)) {
    sol.status = QpStatus::MaxIter;  // do not certify a sloppy optimum
  }
  return sol;
}

}  // namespace scbf
