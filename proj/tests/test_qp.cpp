#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "scbf/qp.hpp"
#include "scbf/rng.hpp"

using namespace scbf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem box_only(Matrix P, Vector q, Vector lo, Vector hi) {
  QpProblem p;
  p.P = std::move(P);
  p.q = std::move(q);
  const int k = static_cast<int>(p.q.size());
  p.A = Matrix::Zero(0, k);
  p.ub = Vector::Zero(0);
  p.lo = std::move(lo);
  p.hi = std::move(hi);
  return p;
}

// Exhaustive active-set enumeration: solve the equality KKT system for every
// subset of constraints (rows and finite bounds) of size <= k, keep the best
// candidate that is feasible for the full problem. With a positive definite
// P the optimum's own active set is among the subsets, so the best feasible
// candidate is the global optimum; no candidate means infeasible.
struct OracleResult {
  bool feasible = false;
  Vector z;
  double objective = kInf;
};

OracleResult enumerate_oracle(const QpProblem& p) {
  const int k = p.num_vars();
  std::vector<Vector> normals;
  std::vector<double> ubs;
  for (int i = 0; i < p.num_rows(); ++i) {
    normals.push_back(p.A.row(i).transpose());
    ubs.push_back(p.ub[i]);
  }
  for (int j = 0; j < k; ++j) {
    if (std::isfinite(p.hi[j])) {
      normals.push_back(Vector::Unit(k, j));
      ubs.push_back(p.hi[j]);
    }
    if (std::isfinite(p.lo[j])) {
      normals.push_back(-Vector::Unit(k, j));
      ubs.push_back(-p.lo[j]);
    }
  }
  const int nc = static_cast<int>(normals.size());
  REQUIRE(nc <= 20);

  auto feasible = [&](const Vector& z) {
    for (int i = 0; i < nc; ++i) {
      if (normals[i].dot(z) > ubs[i] + 1e-8) return false;
    }
    return true;
  };

  OracleResult best;
  std::vector<int> subset;
  auto try_subset = [&](const std::vector<int>& S) {
    const int s = static_cast<int>(S.size());
    Matrix kkt = Matrix::Zero(k + s, k + s);
    kkt.topLeftCorner(k, k) = p.P;
    Vector rhs(k + s);
    rhs.head(k) = -p.q;
    for (int i = 0; i < s; ++i) {
      kkt.block(0, k + i, k, 1) = normals[S[i]];
      kkt.block(k + i, 0, 1, k) = normals[S[i]].transpose();
      rhs[k + i] = ubs[S[i]];
    }
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) return;
    const Vector sol = lu.solve(rhs);
    const Vector z = sol.head(k);
    if (!feasible(z)) return;
    const double obj = 0.5 * z.dot(p.P * z) + p.q.dot(z);
    if (obj < best.objective) {
      best.feasible = true;
      best.z = z;
      best.objective = obj;
    }
  };

  // All subsets of size <= k via bitmask (nc <= 20 keeps this cheap).
  for (unsigned mask = 0; mask < (1u << nc); ++mask) {
    if (__builtin_popcount(mask) > k) continue;
    subset.clear();
    for (int i = 0; i < nc; ++i) {
      if (mask & (1u << i)) subset.push_back(i);
    }
    try_subset(subset);
  }
  return best;
}

QpProblem random_instance(NoiseStream& stream) {
  // Sized so the enumeration oracle stays cheap.
  const int k = 1 + static_cast<int>(stream.uniform() * 5);
  const int rows = static_cast<int>(stream.uniform() * 7);
  QpProblem p;
  Matrix M(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) M(i, j) = stream.gaussian();
  p.P = M.transpose() * M + 0.3 * Matrix::Identity(k, k);
  p.q = 2.0 * stream.gaussian_vector(k);
  p.A = Matrix(rows, k);
  p.ub = Vector(rows);
  Vector z0 = stream.gaussian_vector(k);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < k; ++j) p.A(i, j) = stream.gaussian();
    if (stream.uniform() < 0.75) {
      p.ub[i] = p.A.row(i).dot(z0) + std::abs(stream.gaussian());
    } else {
      p.ub[i] = stream.gaussian();  // possibly infeasible
    }
  }
  p.lo = Vector::Constant(k, -kInf);
  p.hi = Vector::Constant(k, kInf);
  for (int j = 0; j < k; ++j) {
    if (stream.uniform() < 0.35) p.lo[j] = -2.0 - stream.uniform();
    if (stream.uniform() < 0.35) p.hi[j] = 2.0 + stream.uniform();
  }
  return p;
}

}  // namespace

TEST_CASE("active lower bound") {
  // min 1/2 z^2 s.t. z >= 1
  const QpProblem p = box_only(Matrix::Identity(1, 1), Vector::Zero(1),
                               Vector::Constant(1, 1.0), Vector::Constant(1, kInf));
  QpSolver solver;
  const QpSolution sol = solver.solve(p);
  CHECK(sol.status == QpStatus::Optimal);
  CHECK(sol.z[0] == doctest::Approx(1.0));
  CHECK(sol.kkt.max() <= 1e-8);
}

TEST_CASE("clipped unconstrained optimum") {
  // min (z - 2)^2 s.t. z <= 1
  const QpProblem p =
      box_only(2.0 * Matrix::Identity(1, 1), Vector::Constant(1, -4.0),
               Vector::Constant(1, -kInf), Vector::Constant(1, 1.0));
  QpSolver solver;
  const QpSolution sol = solver.solve(p);
  CHECK(sol.status == QpStatus::Optimal);
  CHECK(sol.z[0] == doctest::Approx(1.0));
}

TEST_CASE("semidefinite objective with a linear cost variable") {
  // min 1/2 u^2 + 10 b  s.t.  u - b <= -1, b >= 0: optimum (-1, 0).
  QpProblem p;
  p.P = Matrix::Zero(2, 2);
  p.P(0, 0) = 1.0;
  p.q = Vector(2);
  p.q << 0.0, 10.0;
  p.A = Matrix(1, 2);
  p.A << 1.0, -1.0;
  p.ub = Vector::Constant(1, -1.0);
  p.lo = Vector(2);
  p.lo << -kInf, 0.0;
  p.hi = Vector::Constant(2, kInf);
  QpSolver solver;
  const QpSolution sol = solver.solve(p);
  CHECK(sol.status == QpStatus::Optimal);
  CHECK(sol.z[0] == doctest::Approx(-1.0));
  CHECK(sol.z[1] == doctest::Approx(0.0));
}

TEST_CASE("infeasible rows produce a certificate") {
  QpProblem p;
  p.P = Matrix::Identity(1, 1);
  p.q = Vector::Zero(1);
  p.A = Matrix(2, 1);
  p.A << 1.0, -1.0;
  p.ub = Vector(2);
  p.ub << 0.0, -1.0;  // z <= 0 and z >= 1
  p.lo = Vector::Constant(1, -kInf);
  p.hi = Vector::Constant(1, kInf);
  QpSolver solver;
  const QpSolution sol = solver.solve(p);
  CHECK(sol.status == QpStatus::Infeasible);
  CHECK(sol.min_violation > 0.1);
  CHECK(sol.certificate_norm > 0.0);
}

TEST_CASE("indefinite objective is rejected before iterating") {
  QpProblem p = box_only(-Matrix::Identity(1, 1), Vector::Zero(1),
                         Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  QpSolver solver;
  CHECK_THROWS_AS(solver.solve(p), ConfigError);
}

TEST_CASE("unbounded descent is detected") {
  QpProblem p = box_only(Matrix::Zero(1, 1), Vector::Constant(1, -1.0),
                         Vector::Constant(1, -kInf), Vector::Constant(1, kInf));
  QpSolver solver;
  const QpSolution sol = solver.solve(p);
  CHECK(sol.status == QpStatus::Unbounded);
}

TEST_CASE("random instances match the enumeration oracle") {
  NoiseStream stream(2024);
  QpSolver solver;
  int optimal_seen = 0, infeasible_seen = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const QpProblem p = random_instance(stream);
    const OracleResult oracle = enumerate_oracle(p);
    const QpSolution sol = solver.solve(p);
    CAPTURE(trial);
    if (oracle.feasible) {
      ++optimal_seen;
      REQUIRE(sol.status == QpStatus::Optimal);
      CHECK((sol.z - oracle.z).lpNorm<Eigen::Infinity>() < 1e-6);
      CHECK(std::abs(sol.objective - oracle.objective) < 1e-6);
      CHECK(sol.kkt.max() <= 1e-8);
    } else {
      ++infeasible_seen;
      CHECK(sol.status == QpStatus::Infeasible);
    }
  }
  CHECK(optimal_seen > 50);
  CHECK(infeasible_seen > 0);
}

TEST_CASE("determinism: identical problems give identical iterates") {
  NoiseStream stream(5150);
  QpSolver solver;
  for (int trial = 0; trial < 20; ++trial) {
    const QpProblem p = random_instance(stream);
    const QpSolution a = solver.solve(p);
    const QpSolution b = solver.solve(p);
    REQUIRE(a.status == b.status);
    if (a.z.size() > 0) CHECK((a.z - b.z).norm() == 0.0);
  }
}

TEST_CASE("warm start agrees with cold solve on a control-tick sequence") {
  NoiseStream stream(808);
  QpSolver solver;
  QpProblem p = random_instance(stream);
  while (!enumerate_oracle(p).feasible) p = random_instance(stream);
  Vector prev;
  for (int step = 0; step < 25; ++step) {
    p.q += 0.05 * stream.gaussian_vector(p.num_vars());
    const QpSolution cold = solver.solve(p);
    if (cold.status != QpStatus::Optimal) continue;
    if (prev.size() == p.num_vars()) {
      const QpSolution warm = solver.solve(p, prev);
      REQUIRE(warm.status == QpStatus::Optimal);
      CHECK((warm.z - cold.z).lpNorm<Eigen::Infinity>() <= 10 * solver.tol);
    }
    prev = cold.z;
  }
}

TEST_CASE("scaling the objective leaves the argmin unchanged") {
  NoiseStream stream(911);
  QpSolver solver;
  for (int trial = 0; trial < 20; ++trial) {
    QpProblem p = random_instance(stream);
    const QpSolution base = solver.solve(p);
    if (base.status != QpStatus::Optimal) continue;
    QpProblem scaled = p;
    const double c = 1.0 + 50.0 * stream.uniform();
    scaled.P *= c;
    scaled.q *= c;
    const QpSolution s = solver.solve(scaled);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK((s.z - base.z).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("kkt_residual reports zero at an unconstrained optimum") {
  Matrix P(2, 2);
  P << 2, 0.5, 0.5, 1.5;
  Vector q(2);
  q << 1.0, -2.0;
  QpProblem p = box_only(P, q, Vector::Constant(2, -kInf), Vector::Constant(2, kInf));
  const Vector z = -P.inverse() * q;
  const KktReport rep = kkt_residual(p, z, Vector::Zero(0), Vector::Zero(2),
                                     Vector::Zero(2));
  CHECK(rep.stationarity < 1e-12);
  CHECK(rep.primal == 0.0);
  CHECK(rep.complementarity == 0.0);

  // A feasible non-optimal point has a positive stationarity residual.
  const KktReport bad = kkt_residual(p, z + Vector::Constant(2, 0.5),
                                     Vector::Zero(0), Vector::Zero(2),
                                     Vector::Zero(2));
  CHECK(bad.stationarity > 0.1);
}
