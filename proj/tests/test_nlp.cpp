#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <numbers>
#include <random>

#include "bmpc/nlp.hpp"

using namespace bmpc;

namespace {

AffineMap identity_map(int n)
{
  AffineMap m(n);
  for (int i = 0; i < n; ++i) { m.add(i, i, 1.0); }
  return m;
}

// r^2 - |x - c|^2 <= 0 for a 2-D point
struct OutsideCircle
{
  double cx, cy, r;
  template<class T>
  void operator()(std::span<const T> z, std::span<T> out) const
  {
    const T dx = z[0] - cx, dy = z[1] - cy;
    out[0]     = r * r - (dx * dx + dy * dy);
  }
};

NlpProblem circle_problem(double tx, double ty, const OutsideCircle & circle, Eigen::Vector2d x0)
{
  NlpBuilder b(2);
  AffineMap target = identity_map(2);
  target.set_offset(0, -tx).set_offset(1, -ty);
  b.add_linear(TermKind::kCost, "target", target);
  b.add_nonlinear(TermKind::kInequality, "circle", identity_map(2), 1, circle);
  b.set_initial(x0);
  return b.assemble();
}

// brute force over the feasible region in polar coordinates about the center,
// refined twice around the best point
Eigen::Vector2d grid_search(double tx, double ty, const OutsideCircle & c)
{
  auto point = [&](double rad, double ang) { return Eigen::Vector2d(c.cx + rad * std::cos(ang), c.cy + rad * std::sin(ang)); };
  double best_rad = c.r, best_ang = 0.0, best_cost = std::numeric_limits<double>::infinity();
  double rad_lo = c.r, rad_hi = c.r + 3.0, ang_lo = -std::numbers::pi, ang_hi = std::numbers::pi;
  for (int level = 0; level < 3; ++level) {
    const int n = 400;
    for (int i = 0; i <= n; ++i) {
      for (int k = 0; k <= n; ++k) {
        const double rad = rad_lo + (rad_hi - rad_lo) * i / n, ang = ang_lo + (ang_hi - ang_lo) * k / n;
        const double f = (point(rad, ang) - Eigen::Vector2d(tx, ty)).squaredNorm();
        if (f < best_cost) {
          best_cost = f;
          best_rad  = rad;
          best_ang  = ang;
        }
      }
    }
    const double dr = 4.0 * (rad_hi - rad_lo) / n, da = 4.0 * (ang_hi - ang_lo) / n;
    rad_lo = std::max(c.r, best_rad - dr);
    rad_hi = best_rad + dr;
    ang_lo = best_ang - da;
    ang_hi = best_ang + da;
  }
  return point(best_rad, best_ang);
}

struct SmoothTerm
{
  template<class T>
  void operator()(std::span<const T> z, std::span<T> out) const
  {
    using std::exp;
    using std::sin;
    out[0] = sin(z[0]) * z[1] - 0.5;
    out[1] = exp(0.3 * z[1]) + z[2] * z[0];
  }
};

}  // namespace

TEST(Nlp, LinearLeastSquaresMatchesNormalEquations)
{
  std::mt19937 rng(21);
  std::normal_distribution<double> n;
  Eigen::MatrixXd a(8, 4);
  Eigen::VectorXd rhs(8);
  for (Eigen::Index i = 0; i < a.size(); ++i) { a.data()[i] = n(rng); }
  for (Eigen::Index i = 0; i < rhs.size(); ++i) { rhs[i] = n(rng); }
  AffineMap m(8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 4; ++c) { m.add(r, c, a(r, c)); }
    m.set_offset(r, -rhs[r]);
  }
  NlpBuilder b(4);
  b.add_linear(TermKind::kCost, "ls", m);
  const NlpSolution sol = solve(b.assemble());
  ASSERT_TRUE(sol.converged) << sol.message;
  const Eigen::VectorXd ref = (a.transpose() * a).ldlt().solve(a.transpose() * rhs);
  EXPECT_LT((sol.x - ref).norm(), 1e-6);
}

TEST(Nlp, EqualityQpMatchesKkt)
{
  // min |x - c|^2 subject to C x = d
  const Eigen::Vector3d c(1.0, -2.0, 0.5);
  Eigen::Matrix<double, 2, 3> cm;
  cm << 1.0, 1.0, 1.0, 1.0, -1.0, 2.0;
  const Eigen::Vector2d d(0.3, 1.0);
  NlpBuilder b(3);
  AffineMap cost = identity_map(3);
  for (int i = 0; i < 3; ++i) { cost.set_offset(i, -c[i]); }
  b.add_linear(TermKind::kCost, "cost", cost);
  AffineMap eq(2);
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 3; ++k) { eq.add(r, k, cm(r, k)); }
    eq.set_offset(r, -d[r]);
  }
  b.add_linear(TermKind::kEquality, "eq", eq);
  const NlpSolution sol = solve(b.assemble());
  ASSERT_TRUE(sol.converged) << sol.message;

  Eigen::Matrix<double, 5, 5> kkt = Eigen::Matrix<double, 5, 5>::Zero();
  kkt.topLeftCorner<3, 3>()    = 2.0 * Eigen::Matrix3d::Identity();
  kkt.topRightCorner<3, 2>()   = cm.transpose();
  kkt.bottomLeftCorner<2, 3>() = cm;
  Eigen::Matrix<double, 5, 1> rhs;
  rhs << 2.0 * c, d;
  const Eigen::Matrix<double, 5, 1> ref = kkt.fullPivLu().solve(rhs);
  EXPECT_LT((sol.x - ref.head<3>()).norm(), 1e-6);
  EXPECT_LT(sol.max_constraint_violation, 1e-6);
}

TEST(Nlp, SphereExclusionMatchesGridSearch)
{
  const OutsideCircle circle{0.2, -0.1, 1.0};
  for (const auto & [tx, ty] : std::vector<std::pair<double, double>>{{0.5, 0.1}, {-0.3, -0.6}, {0.25, 0.6}}) {
    const NlpSolution sol = solve(circle_problem(tx, ty, circle, Eigen::Vector2d(2.0, 2.0)));
    ASSERT_TRUE(sol.converged) << sol.message;
    const Eigen::Vector2d ref = grid_search(tx, ty, circle);
    EXPECT_LT((sol.x - ref).norm(), 1e-3) << tx << " " << ty;
    // recheck at the returned point
    const Evaluation e = evaluate(circle_problem(tx, ty, circle, sol.x), sol.x, false);
    EXPECT_LE(e.g.maxCoeff(), 1e-6);
  }
}

TEST(Nlp, InactiveConstraintLeavesTheUnconstrainedMinimum)
{
  const OutsideCircle circle{0.0, 0.0, 0.5};
  const NlpSolution sol = solve(circle_problem(1.0, 1.0, circle, Eigen::Vector2d(2.0, 0.0)));
  ASSERT_TRUE(sol.converged);
  EXPECT_LT((sol.x - Eigen::Vector2d(1.0, 1.0)).norm(), 1e-6);
}

TEST(Nlp, BoundsAreRespected)
{
  NlpBuilder b(2);
  AffineMap m = identity_map(2);
  m.set_offset(0, -3.0).set_offset(1, 0.5);
  b.add_linear(TermKind::kCost, "cost", m);
  b.set_bounds(0, 0.0, 1.0).fix(1, 0.25);
  const NlpSolution sol = solve(b.assemble());
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(sol.x[0], 1.0, 1e-12);
  EXPECT_EQ(sol.x[1], 0.25);
}

TEST(Nlp, InfeasibleProblemDoesNotConverge)
{
  NlpBuilder b(1);
  b.add_linear(TermKind::kCost, "cost", identity_map(1));
  AffineMap above(1), below(1);
  above.add(0, 0, -1.0).set_offset(0, 1.0);  // x >= 1
  below.add(0, 0, 1.0);                      // x <= 0
  b.add_linear(TermKind::kInequality, "above", above);
  b.add_linear(TermKind::kInequality, "below", below);
  SolverOptions opt;
  opt.max_outer = 12;
  const NlpSolution sol = solve(b.assemble(), opt);
  EXPECT_FALSE(sol.converged);
  EXPECT_GT(sol.max_constraint_violation, 0.1);
}

TEST(Nlp, DerivativesMatchFiniteDifferences)
{
  NlpBuilder b(3);
  b.add_nonlinear(TermKind::kCost, "r", identity_map(3), 2, SmoothTerm{}, Eigen::Vector2d(2.0, 0.5));
  b.add_nonlinear(TermKind::kEquality, "h", identity_map(3), 2, SmoothTerm{});
  const NlpProblem p = b.assemble();
  const Eigen::Vector3d x(0.4, -0.7, 1.3);
  const Derivatives d = differentiate(p, x);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const Evaluation ep = evaluate(p, xp, false), em = evaluate(p, xm, false);
    EXPECT_NEAR(d.cost_gradient[k], (ep.cost - em.cost) / (2.0 * h), 1e-7);
    const Eigen::VectorXd col = Eigen::MatrixXd(d.eq_jacobian).col(k);
    EXPECT_LT((col - (ep.h - em.h) / (2.0 * h)).norm(), 1e-7);
  }
}

TEST(Nlp, WarmStartReusesTheSolution)
{
  const OutsideCircle circle{0.0, 0.0, 1.0};
  const NlpProblem p     = circle_problem(0.3, 0.1, circle, Eigen::Vector2d(2.0, 2.0));
  const NlpSolution cold = solve(p);
  ASSERT_TRUE(cold.converged);
  const NlpSolution warm = solve(warm_start(p, cold));
  ASSERT_TRUE(warm.converged);
  EXPECT_LE(warm.iterations, cold.iterations);
  EXPECT_LT((warm.x - cold.x).norm(), 1e-6);
}

TEST(Nlp, BuilderRejectsBadInput)
{
  EXPECT_THROW(NlpBuilder(0), DimensionMismatchError);
  NlpBuilder b(2);
  EXPECT_THROW(b.set_bounds(0, 1.0, -1.0), LimitOrderError);
  EXPECT_THROW(b.set_bounds(5, 0.0, 1.0), DimensionMismatchError);
  EXPECT_THROW(b.add_linear(TermKind::kCost, "neg", identity_map(2), -1.0), DomainError);
  AffineMap out_of_range(1);
  out_of_range.add(0, 7, 1.0);
  EXPECT_THROW(b.add_linear(TermKind::kCost, "oops", out_of_range), DimensionMismatchError);
  EXPECT_THROW(b.set_initial(Eigen::VectorXd::Zero(3)), DimensionMismatchError);
  EXPECT_THROW(evaluate(b.assemble(), Eigen::VectorXd::Zero(3)), DimensionMismatchError);
}
