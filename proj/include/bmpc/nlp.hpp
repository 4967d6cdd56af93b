#pragma once

/**
 * @file
 * @brief Nonlinear programs over control-point vectors and their solver.
 *
 * A problem is a list of terms. Every term reads a small input vector
 * z = A x + b (A sparse in the global variables) and produces rows that are
 * either cost residuals (contributing w r^2), equalities h = 0 or
 * inequalities g <= 0. Linear terms use the map itself as output; nonlinear
 * terms apply a scalar-generic function to z, differentiated with Dual numbers
 * in chunks of kChunk seed directions.
 *
 * solve() runs an augmented-Lagrangian outer loop. Each inner problem
 *
 *   phi(x) = sum w r^2 + rho/2 |h + lambda/rho|^2 + rho/2 |max(0, g + mu/rho)|^2
 *
 * is a sum of squares and is minimized by projected Gauss-Newton steps with
 * an active set on the variable bounds and an Armijo search along the
 * projection arc.
 */

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dual.hpp"
#include "errors.hpp"

namespace bmpc {

enum class TermKind { kCost, kEquality, kInequality };

/**
 * @brief Affine map z = A x + b with a handful of rows, built entry by entry.
 */
class AffineMap
{
public:
  explicit AffineMap(int rows = 0) : rows_(static_cast<std::size_t>(rows)), offset_(Eigen::VectorXd::Zero(rows)) {}

  int rows() const { return static_cast<int>(rows_.size()); }

  /// z[row] += coef * x[col]
  AffineMap & add(int row, int col, double coef)
  {
    if (coef != 0.0) { rows_.at(static_cast<std::size_t>(row))[col] += coef; }
    return *this;
  }

  AffineMap & set_offset(int row, double b)
  {
    offset_[row] = b;
    return *this;
  }

  /// Append one row; returns its index.
  int add_row(double b = 0.0)
  {
    rows_.emplace_back();
    offset_.conservativeResize(offset_.size() + 1);
    offset_[offset_.size() - 1] = b;
    return rows() - 1;
  }

  const std::map<int, double> & row(int r) const { return rows_[static_cast<std::size_t>(r)]; }
  const Eigen::VectorXd & offset() const { return offset_; }

  std::vector<int> columns() const
  {
    std::vector<int> cols;
    for (const auto & r : rows_) {
      for (const auto & [c, v] : r) { cols.push_back(c); }
    }
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    return cols;
  }

  Eigen::SparseMatrix<double, Eigen::RowMajor> sparse(int n) const
  {
    std::vector<Eigen::Triplet<double>> t;
    for (int r = 0; r < rows(); ++r) {
      for (const auto & [c, v] : rows_[static_cast<std::size_t>(r)]) {
        if (c < 0 || c >= n) { throw DimensionMismatchError("affine map refers to variable " + std::to_string(c) + " of " + std::to_string(n)); }
        t.emplace_back(r, c, v);
      }
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> a(rows(), n);
    a.setFromTriplets(t.begin(), t.end());
    return a;
  }

private:
  std::vector<std::map<int, double>> rows_;
  Eigen::VectorXd offset_;
};

/// Rows equal to A x + b.
struct LinearTerm
{
  TermKind kind{TermKind::kCost};
  std::string name;
  Eigen::SparseMatrix<double, Eigen::RowMajor> a;
  Eigen::VectorXd b;
  Eigen::VectorXd weight;  ///< costs only
};

/// Rows equal to f(z), z = A_local x[cols] + b.
struct NonlinearTerm
{
  using ValueFn    = std::function<void(const Eigen::VectorXd &, Eigen::VectorXd &)>;
  using JacobianFn = std::function<void(const Eigen::VectorXd &, Eigen::VectorXd &, Eigen::MatrixXd &)>;

  TermKind kind{TermKind::kCost};
  std::string name;
  std::vector<int> cols;
  Eigen::MatrixXd a;  ///< in_dim x cols.size()
  Eigen::VectorXd b;
  int out_dim{0};
  Eigen::VectorXd weight;
  ValueFn value;
  JacobianFn jacobian;  ///< fills value (out_dim) and d value / dz (out_dim x in_dim)
};

inline constexpr int kChunk = 8;

/// Wrap a function generic in the scalar, f(std::span<const T> z, std::span<T> out).
template<class F>
std::pair<NonlinearTerm::ValueFn, NonlinearTerm::JacobianFn> differentiable(F f, int in_dim, int out_dim)
{
  NonlinearTerm::ValueFn value = [f, out_dim](const Eigen::VectorXd & z, Eigen::VectorXd & out) {
    out.resize(out_dim);
    f(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), std::span<double>(out.data(), static_cast<std::size_t>(out_dim)));
  };
  NonlinearTerm::JacobianFn jac = [f, in_dim, out_dim](const Eigen::VectorXd & z, Eigen::VectorXd & out, Eigen::MatrixXd & j) {
    using D = Dual<kChunk>;
    std::vector<D> zd(static_cast<std::size_t>(in_dim));
    std::vector<D> od(static_cast<std::size_t>(out_dim));
    out.resize(out_dim);
    j.resize(out_dim, in_dim);
    for (int start = 0; start < in_dim; start += kChunk) {
      for (int k = 0; k < in_dim; ++k) { zd[k] = D(z[k], k - start); }
      for (auto & o : od) { o = D(0.0); }
      f(std::span<const D>(zd), std::span<D>(od));
      const int width = std::min(kChunk, in_dim - start);
      for (int r = 0; r < out_dim; ++r) {
        out[r] = od[r].v;
        for (int c = 0; c < width; ++c) { j(r, start + c) = od[r].d[c]; }
      }
    }
  };
  return {value, jac};
}

/**
 * @brief Immutable problem value: variables, bounds, initial guess and terms.
 */
struct NlpProblem
{
  int n{0};
  Eigen::VectorXd lower, upper, x0;
  std::vector<LinearTerm> linear;
  std::vector<NonlinearTerm> nonlinear;
  /// Optional initial multipliers (sized to the equality / inequality counts, or empty).
  Eigen::VectorXd lambda0, mu0;

  int count(TermKind kind) const
  {
    int m = 0;
    for (const auto & t : linear) { m += t.kind == kind ? static_cast<int>(t.a.rows()) : 0; }
    for (const auto & t : nonlinear) { m += t.kind == kind ? t.out_dim : 0; }
    return m;
  }
  int num_residuals() const { return count(TermKind::kCost); }
  int num_equalities() const { return count(TermKind::kEquality); }
  int num_inequalities() const { return count(TermKind::kInequality); }

  /// Total rows of terms whose name equals `name`.
  int rows_named(const std::string & name) const
  {
    int m = 0;
    for (const auto & t : linear) { m += t.name == name ? static_cast<int>(t.a.rows()) : 0; }
    for (const auto & t : nonlinear) { m += t.name == name ? t.out_dim : 0; }
    return m;
  }

  Eigen::VectorXd project(const Eigen::VectorXd & x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

/// Values and Jacobians of all rows at one point, grouped by kind.
struct Evaluation
{
  Eigen::VectorXd r, w, h, g;
  Eigen::SparseMatrix<double> jr, jh, jg;
  double cost{0.0};
  bool finite{true};
};

namespace detail {

inline void evaluate_into(const NlpProblem & p, const Eigen::VectorXd & x, bool with_jacobian, Evaluation & e)
{
  const int mr = p.num_residuals(), mh = p.num_equalities(), mg = p.num_inequalities();
  e.r.resize(mr);
  e.w.resize(mr);
  e.h.resize(mh);
  e.g.resize(mg);
  std::vector<Eigen::Triplet<double>> tr, th, tg;
  int ir = 0, ih = 0, ig = 0;

  auto slot = [&](TermKind kind) -> std::pair<int &, std::vector<Eigen::Triplet<double>> &> {
    switch (kind) {
      case TermKind::kCost: return {ir, tr};
      case TermKind::kEquality: return {ih, th};
      default: return {ig, tg};
    }
  };
  auto target = [&](TermKind kind) -> Eigen::VectorXd & {
    switch (kind) {
      case TermKind::kCost: return e.r;
      case TermKind::kEquality: return e.h;
      default: return e.g;
    }
  };

  for (const auto & t : p.linear) {
    auto [row, trip] = slot(t.kind);
    const int m = static_cast<int>(t.a.rows());
    target(t.kind).segment(row, m) = t.a * x + t.b;
    if (t.kind == TermKind::kCost) { e.w.segment(row, m) = t.weight; }
    if (with_jacobian) {
      for (int k = 0; k < t.a.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(t.a, k); it; ++it) { trip.emplace_back(row + it.row(), it.col(), it.value()); }
      }
    }
    row += m;
  }

  Eigen::VectorXd z, val, xs;
  Eigen::MatrixXd jl, jglob;
  for (const auto & t : p.nonlinear) {
    auto [row, trip] = slot(t.kind);
    xs.resize(static_cast<Eigen::Index>(t.cols.size()));
    for (std::size_t k = 0; k < t.cols.size(); ++k) { xs[static_cast<Eigen::Index>(k)] = x[t.cols[k]]; }
    z = t.a * xs + t.b;
    if (with_jacobian) {
      t.jacobian(z, val, jl);
      jglob.noalias() = jl * t.a;
      for (int c = 0; c < jglob.cols(); ++c) {
        for (int r = 0; r < jglob.rows(); ++r) {
          if (jglob(r, c) != 0.0) { trip.emplace_back(row + r, t.cols[static_cast<std::size_t>(c)], jglob(r, c)); }
        }
      }
    } else {
      t.value(z, val);
    }
    target(t.kind).segment(row, t.out_dim) = val;
    if (t.kind == TermKind::kCost) { e.w.segment(row, t.out_dim) = t.weight; }
    row += t.out_dim;
  }

  e.cost   = (e.w.array() * e.r.array().square()).sum();
  e.finite = std::isfinite(e.cost) && e.h.allFinite() && e.g.allFinite();
  if (with_jacobian) {
    e.jr.resize(mr, p.n);
    e.jh.resize(mh, p.n);
    e.jg.resize(mg, p.n);
    e.jr.setFromTriplets(tr.begin(), tr.end());
    e.jh.setFromTriplets(th.begin(), th.end());
    e.jg.setFromTriplets(tg.begin(), tg.end());
  }
}

}  // namespace detail

inline Evaluation evaluate(const NlpProblem & p, const Eigen::VectorXd & x, bool with_jacobian = true)
{
  if (x.size() != p.n) { throw DimensionMismatchError("point has " + std::to_string(x.size()) + " entries, problem has " + std::to_string(p.n)); }
  Evaluation e;
  detail::evaluate_into(p, x, with_jacobian, e);
  return e;
}

/// Cost gradient and constraint Jacobians.
struct Derivatives
{
  double cost{0.0};
  Eigen::VectorXd cost_gradient;
  Eigen::VectorXd h, g;
  Eigen::SparseMatrix<double> eq_jacobian, ineq_jacobian;
};

inline Derivatives differentiate(const NlpProblem & p, const Eigen::VectorXd & x)
{
  if (!x.allFinite()) { throw NonFiniteError("differentiation point is not finite"); }
  const Evaluation e = evaluate(p, x, true);
  if (!e.finite) { throw NonFiniteError("non-finite function value at the differentiation point"); }
  Derivatives d;
  d.cost          = e.cost;
  d.cost_gradient = 2.0 * (e.jr.transpose() * (e.w.array() * e.r.array()).matrix());
  d.h             = e.h;
  d.g             = e.g;
  d.eq_jacobian   = e.jh;
  d.ineq_jacobian = e.jg;
  return d;
}

/**
 * @brief Incremental construction of an NlpProblem.
 */
class NlpBuilder
{
public:
  explicit NlpBuilder(int n)
      : n_(n),
        lower_(Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity())),
        upper_(Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity())),
        x0_(Eigen::VectorXd::Zero(n))
  {
    if (n <= 0) { throw DimensionMismatchError("problem needs at least one variable"); }
  }

  int n() const { return n_; }

  NlpBuilder & set_bounds(int i, double lo, double hi)
  {
    check_index(i);
    if (lo > hi) { throw LimitOrderError("bound lower > upper for variable " + std::to_string(i)); }
    lower_[i] = lo;
    upper_[i] = hi;
    return *this;
  }
  NlpBuilder & fix(int i, double value) { return set_bounds(i, value, value); }

  NlpBuilder & set_initial(const Eigen::VectorXd & x0)
  {
    if (x0.size() != n_) { throw DimensionMismatchError("initial guess has " + std::to_string(x0.size()) + " entries, problem has " + std::to_string(n_)); }
    x0_ = x0;
    return *this;
  }
  const Eigen::VectorXd & initial() const { return x0_; }
  const Eigen::VectorXd & lower() const { return lower_; }
  const Eigen::VectorXd & upper() const { return upper_; }

  /// Rows A x + b; weights apply to costs and are ignored otherwise.
  NlpBuilder & add_linear(TermKind kind, std::string name, const AffineMap & map, double weight = 1.0)
  {
    if (map.rows() == 0) { return *this; }
    LinearTerm t;
    t.kind   = kind;
    t.name   = std::move(name);
    t.a      = map.sparse(n_);
    t.b      = map.offset();
    t.weight = Eigen::VectorXd::Constant(map.rows(), weight);
    check_weight(t.weight);
    linear_.push_back(std::move(t));
    return *this;
  }

  /**
   * @brief Rows f(z) with z = map(x).
   *
   * `f` must be callable as f(std::span<const T> z, std::span<T> out) for
   * T = double and T = Dual<kChunk>.
   */
  template<class F>
  NlpBuilder & add_nonlinear(TermKind kind, std::string name, const AffineMap & map, int out_dim, F f, Eigen::VectorXd weight = {})
  {
    if (out_dim <= 0) { throw DimensionMismatchError("term '" + name + "' has no output rows"); }
    NonlinearTerm t;
    t.kind    = kind;
    t.name    = std::move(name);
    t.cols    = map.columns();
    t.out_dim = out_dim;
    t.b       = map.offset();
    t.a       = Eigen::MatrixXd::Zero(map.rows(), static_cast<Eigen::Index>(t.cols.size()));
    for (int r = 0; r < map.rows(); ++r) {
      for (const auto & [c, v] : map.row(r)) {
        if (c < 0 || c >= n_) { throw DimensionMismatchError("term '" + t.name + "' refers to variable " + std::to_string(c) + " of " + std::to_string(n_)); }
        const auto pos = std::lower_bound(t.cols.begin(), t.cols.end(), c) - t.cols.begin();
        t.a(r, pos) += v;
      }
    }
    t.weight = weight.size() == 0 ? Eigen::VectorXd::Ones(out_dim) : std::move(weight);
    if (t.weight.size() != out_dim) { throw DimensionMismatchError("term '" + t.name + "' weight size does not match its rows"); }
    check_weight(t.weight);
    std::tie(t.value, t.jacobian) = differentiable(std::move(f), map.rows(), out_dim);
    nonlinear_.push_back(std::move(t));
    return *this;
  }

  /// Validate and freeze. Throws when the initial point evaluates to non-finite values.
  NlpProblem assemble() const
  {
    NlpProblem p;
    p.n         = n_;
    p.lower     = lower_;
    p.upper     = upper_;
    p.linear    = linear_;
    p.nonlinear = nonlinear_;
    p.x0        = p.project(x0_);
    if (!p.x0.allFinite()) { throw NonFiniteError("initial guess is not finite"); }
    const Evaluation e = evaluate(p, p.x0, false);
    if (!e.finite) { throw NonFiniteError("problem terms are not finite at the initial guess"); }
    return p;
  }

private:
  void check_index(int i) const
  {
    if (i < 0 || i >= n_) { throw DimensionMismatchError("variable index " + std::to_string(i) + " out of range"); }
  }
  static void check_weight(const Eigen::VectorXd & w)
  {
    if (!w.allFinite() || (w.array() < 0.0).any()) { throw DomainError("cost weights must be finite and non-negative"); }
  }

  int n_;
  Eigen::VectorXd lower_, upper_, x0_;
  std::vector<LinearTerm> linear_;
  std::vector<NonlinearTerm> nonlinear_;
};

struct SolverOptions
{
  double tol_kkt{1e-6};
  double tol_feas{1e-6};
  int max_outer{30};
  int max_inner{200};
  double rho0{10.0};
  double rho_max{1e9};
  /// Add multiplier-weighted second derivatives of nonlinear equalities to the Gauss-Newton matrix.
  bool constraint_curvature{true};
  bool log{false};
};

enum class SolveStatus { kConverged, kMaxIterations, kStalled, kNonFinite };

inline const char * to_string(SolveStatus s)
{
  switch (s) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kMaxIterations: return "max-iterations";
    case SolveStatus::kStalled: return "stalled";
    case SolveStatus::kNonFinite: return "non-finite";
  }
  return "?";
}

struct IterationRecord
{
  int outer{0};
  int inner{0};
  double merit{0.0};
  double cost{0.0};
  double feasibility{0.0};
  double stationarity{0.0};
  double rho{0.0};
};

struct NlpSolution
{
  Eigen::VectorXd x;
  bool converged{false};
  SolveStatus status{SolveStatus::kMaxIterations};
  double cost{0.0};
  double kkt_residual{std::numeric_limits<double>::infinity()};
  double max_constraint_violation{std::numeric_limits<double>::infinity()};
  int iterations{0};  ///< inner iterations summed over outer loops
  int outer_iterations{0};
  double solve_time{0.0};
  Eigen::VectorXd lambda, mu;
  std::string message;
  std::vector<IterationRecord> log;
};

/// max |h|, max(0, g), and bound violation.
inline double constraint_violation(const NlpProblem & p, const Evaluation & e, const Eigen::VectorXd & x)
{
  double v = 0.0;
  if (e.h.size()) { v = std::max(v, e.h.cwiseAbs().maxCoeff()); }
  if (e.g.size()) { v = std::max(v, e.g.maxCoeff()); }
  v = std::max(v, (p.lower - x).maxCoeff());
  v = std::max(v, (x - p.upper).maxCoeff());
  return v;
}

namespace detail {

struct Merit
{
  double rho{10.0};
  Eigen::VectorXd lambda, mu;

  double value(const Evaluation & e) const
  {
    double phi = e.cost;
    if (e.h.size()) { phi += 0.5 * rho * (e.h + lambda / rho).squaredNorm(); }
    if (e.g.size()) { phi += 0.5 * rho * (e.g + mu / rho).cwiseMax(0.0).squaredNorm(); }
    return phi;
  }

  /// Stacked residual R with phi = |R|^2, and its Jacobian.
  void residual(const Evaluation & e, Eigen::VectorXd & res, Eigen::SparseMatrix<double> & jac) const
  {
    const double s = std::sqrt(0.5 * rho);
    const Eigen::Index mr = e.r.size(), mh = e.h.size(), mg = e.g.size();
    res.resize(mr + mh + mg);
    const Eigen::VectorXd sw = e.w.cwiseSqrt();
    res.head(mr) = sw.cwiseProduct(e.r);
    res.segment(mr, mh) = s * (e.h + lambda / rho);
    Eigen::VectorXd active(mg);
    for (Eigen::Index i = 0; i < mg; ++i) {
      const double v = e.g[i] + mu[i] / rho;
      active[i] = v > 0.0 ? s : 0.0;
      res[mr + mh + i] = v > 0.0 ? s * v : 0.0;
    }
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(e.jr.nonZeros() + e.jh.nonZeros() + e.jg.nonZeros()));
    auto append = [&t](const Eigen::SparseMatrix<double> & m, Eigen::Index row0, const Eigen::VectorXd & scale) {
      for (int k = 0; k < m.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it) {
          const double sc = scale[it.row()];
          if (sc != 0.0) { t.emplace_back(row0 + it.row(), it.col(), sc * it.value()); }
        }
      }
    };
    append(e.jr, 0, sw);
    append(e.jh, mr, Eigen::VectorXd::Constant(mh, s));
    append(e.jg, mr + mh, active);
    jac.resize(mr + mh + mg, e.jr.cols());
    jac.setFromTriplets(t.begin(), t.end());
  }
};

/**
 * Half the multiplier-weighted Hessian sum_r c_r d2 h_r of nonlinear equality
 * rows, c = lambda + rho h. Inequalities keep the plain Gauss-Newton term.
 * Second derivatives are forward differences of the dual-number Jacobian in
 * the term's local input.
 */
inline void constraint_curvature(const NlpProblem & p, const Eigen::VectorXd & x, const Evaluation & e, const Merit & merit,
  std::vector<Eigen::Triplet<double>> & out)
{
  int row = 0;
  for (const auto & t : p.linear) {
    if (t.kind == TermKind::kEquality) { row += static_cast<int>(t.a.rows()); }
  }
  Eigen::VectorXd xs, z, zp, val, c, g0, g1;
  Eigen::MatrixXd jl, hz, hx;
  for (const auto & t : p.nonlinear) {
    if (t.kind != TermKind::kEquality) { continue; }
    c.resize(t.out_dim);
    bool any = false;
    for (int r = 0; r < t.out_dim; ++r) {
      c[r] = merit.lambda[row + r] + merit.rho * e.h[row + r];
      any  = any || c[r] != 0.0;
    }
    row += t.out_dim;
    if (!any) { continue; }

    xs.resize(static_cast<Eigen::Index>(t.cols.size()));
    for (std::size_t k = 0; k < t.cols.size(); ++k) { xs[static_cast<Eigen::Index>(k)] = x[t.cols[k]]; }
    z = t.a * xs + t.b;
    const Eigen::Index m = z.size();
    t.jacobian(z, val, jl);
    g0 = jl.transpose() * c;
    hz.resize(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double eps = 1e-7 * std::max(1.0, std::abs(z[k]));
      zp    = z;
      zp[k] += eps;
      t.jacobian(zp, val, jl);
      g1       = jl.transpose() * c;
      hz.col(k) = (g1 - g0) / eps;
    }
    hz = 0.25 * (hz + hz.transpose());
    hx.noalias() = t.a.transpose() * hz * t.a;
    for (Eigen::Index cc = 0; cc < hx.cols(); ++cc) {
      for (Eigen::Index r = 0; r < hx.rows(); ++r) {
        if (hx(r, cc) != 0.0) { out.emplace_back(t.cols[static_cast<std::size_t>(r)], t.cols[static_cast<std::size_t>(cc)], hx(r, cc)); }
      }
    }
  }
}

inline double projected_step_norm(const NlpProblem & p, const Eigen::VectorXd & x, const Eigen::VectorXd & grad)
{
  return (x - p.project(x - grad)).lpNorm<Eigen::Infinity>();
}

}  // namespace detail

/**
 * @brief Solve with the augmented-Lagrangian / projected Gauss-Newton scheme.
 *
 * Stationarity is measured as |x - P(x - grad L)|_inf divided by
 * max(1, |grad f|_inf), together with complementarity |min(-g, mu)|_inf.
 */
inline NlpSolution solve(const NlpProblem & p, const SolverOptions & opt = {})
{
  const auto t_start = std::chrono::steady_clock::now();
  NlpSolution sol;
  const int mh = p.num_equalities(), mg = p.num_inequalities();

  detail::Merit merit;
  merit.rho    = opt.rho0;
  merit.lambda = p.lambda0.size() == mh ? p.lambda0 : Eigen::VectorXd::Zero(mh);
  merit.mu     = p.mu0.size() == mg ? Eigen::VectorXd(p.mu0.cwiseMax(0.0)) : Eigen::VectorXd::Zero(mg);

  Eigen::VectorXd x = p.project(p.x0);
  Evaluation e, trial;
  detail::evaluate_into(p, x, true, e);
  auto finish = [&](SolveStatus status, std::string msg) {
    sol.x       = x;
    sol.status  = status;
    sol.message = std::move(msg);
    sol.cost    = e.cost;
    sol.lambda  = merit.lambda;
    sol.mu      = merit.mu;
    sol.converged  = status == SolveStatus::kConverged;
    sol.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return sol;
  };
  if (!e.finite) { return finish(SolveStatus::kNonFinite, "non-finite evaluation at the initial point"); }

  double prev_feas = std::numeric_limits<double>::infinity();
  double omega     = 1e-2;
  Eigen::VectorXd res, grad, grad_f;
  Eigen::SparseMatrix<double> jac, hess;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  double damping = 1e-8;

  for (int outer = 0; outer < opt.max_outer; ++outer) {
    sol.outer_iterations = outer + 1;
    // inner minimization of the merit function
    for (int inner = 0; inner < opt.max_inner; ++inner) {
      merit.residual(e, res, jac);
      grad = 2.0 * (jac.transpose() * res);
      if (!grad.allFinite()) { return finish(SolveStatus::kNonFinite, "non-finite derivative"); }
      grad_f              = 2.0 * (e.jr.transpose() * (e.w.array() * e.r.array()).matrix());
      const double scale  = std::max(1.0, grad_f.lpNorm<Eigen::Infinity>());
      const double pg     = detail::projected_step_norm(p, x, grad) / scale;
      const double phi    = merit.value(e);
      if (opt.log) { sol.log.push_back({outer, inner, phi, e.cost, constraint_violation(p, e, x), pg, merit.rho}); }
      if (pg <= omega) { break; }

      // active set: variables held at a bound by the gradient
      std::vector<int> free_map(static_cast<std::size_t>(p.n), -1);
      std::vector<int> free_vars;
      for (int i = 0; i < p.n; ++i) {
        const bool at_lo = x[i] <= p.lower[i] && grad[i] > 0.0;
        const bool at_hi = x[i] >= p.upper[i] && grad[i] < 0.0;
        if (p.lower[i] == p.upper[i] || at_lo || at_hi) { continue; }
        free_map[i] = static_cast<int>(free_vars.size());
        free_vars.push_back(i);
      }
      if (free_vars.empty()) { break; }

      hess = jac.transpose() * jac;
      if (opt.constraint_curvature && (mh || mg)) {
        std::vector<Eigen::Triplet<double>> ct;
        detail::constraint_curvature(p, x, e, merit, ct);
        if (!ct.empty()) {
          Eigen::SparseMatrix<double> cm(p.n, p.n);
          cm.setFromTriplets(ct.begin(), ct.end());
          hess += cm;
        }
      }
      std::vector<Eigen::Triplet<double>> ht;
      ht.reserve(static_cast<std::size_t>(hess.nonZeros()));
      double max_diag = 0.0;
      for (int k = 0; k < hess.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(hess, k); it; ++it) {
          const int fr = free_map[it.row()], fc = free_map[it.col()];
          if (fr >= 0 && fc >= 0) {
            ht.emplace_back(fr, fc, it.value());
            if (fr == fc) { max_diag = std::max(max_diag, it.value()); }
          }
        }
      }
      const int nf = static_cast<int>(free_vars.size());
      Eigen::VectorXd rhs(nf);
      for (int k = 0; k < nf; ++k) { rhs[k] = -0.5 * grad[free_vars[k]]; }

      Eigen::VectorXd dfree;
      for (int attempt = 0; attempt < 8; ++attempt) {
        std::vector<Eigen::Triplet<double>> hd = ht;
        const double mu_lm = damping * std::max(1.0, max_diag);
        for (int k = 0; k < nf; ++k) { hd.emplace_back(k, k, mu_lm); }
        Eigen::SparseMatrix<double> hf(nf, nf);
        hf.setFromTriplets(hd.begin(), hd.end());
        ldlt.compute(hf);
        if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0) {
          dfree = ldlt.solve(rhs);
          if (dfree.allFinite()) { break; }
        }
        damping *= 100.0;
        dfree.resize(0);
      }
      if (dfree.size() == 0) { return finish(SolveStatus::kStalled, "Gauss-Newton system could not be factorized"); }
      Eigen::VectorXd d = Eigen::VectorXd::Zero(p.n);
      for (int k = 0; k < nf; ++k) { d[free_vars[k]] = dfree[k]; }

      // Armijo search along the projection arc
      double alpha    = 1.0;
      bool accepted   = false;
      Eigen::VectorXd xt;
      for (int ls = 0; ls < 40; ++ls) {
        xt = p.project(x + alpha * d);
        detail::evaluate_into(p, xt, false, trial);
        if (trial.finite) {
          const double phit = merit.value(trial);
          const double pred = grad.dot(xt - x);
          if (phit <= phi + 1e-4 * pred) {
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      sol.iterations++;
      if (!accepted) {
        damping = std::min(damping * 10.0, 1.0);
        if (damping >= 1.0) { break; }
        continue;
      }
      damping = std::max(damping * (alpha == 1.0 ? 0.3 : 3.0), 1e-12);
      const double step = (xt - x).lpNorm<Eigen::Infinity>();
      x = xt;
      detail::evaluate_into(p, x, true, e);
      if (!e.finite) { return finish(SolveStatus::kNonFinite, "non-finite evaluation"); }
      if (step <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>())) { break; }
    }

    // multiplier update and convergence test
    const double feas = constraint_violation(p, e, x);
    if (mh) { merit.lambda += merit.rho * e.h; }
    if (mg) { merit.mu = (merit.mu + merit.rho * e.g).cwiseMax(0.0); }

    grad_f = 2.0 * (e.jr.transpose() * (e.w.array() * e.r.array()).matrix());
    Eigen::VectorXd grad_l = grad_f;
    if (mh) { grad_l += e.jh.transpose() * merit.lambda; }
    if (mg) { grad_l += e.jg.transpose() * merit.mu; }
    const double scale = std::max(1.0, grad_f.lpNorm<Eigen::Infinity>());
    double kkt         = detail::projected_step_norm(p, x, grad_l) / scale;
    double comp        = 0.0;
    for (int i = 0; i < mg; ++i) { comp = std::max(comp, std::abs(std::min(-e.g[i], merit.mu[i]))); }
    kkt = std::max(kkt, comp);

    sol.kkt_residual             = kkt;
    sol.max_constraint_violation = feas;
    if (feas <= opt.tol_feas && kkt <= opt.tol_kkt) { return finish(SolveStatus::kConverged, "converged"); }

    // slow progress in feasibility or complementarity raises the penalty
    const double progress = std::max(feas, comp);
    if (progress > 0.25 * prev_feas && progress > opt.tol_feas) { merit.rho = std::min(merit.rho * 10.0, opt.rho_max); }
    prev_feas = std::max(progress, opt.tol_feas);
    omega     = std::max(0.1 * opt.tol_kkt, omega * 0.1);
  }
  return finish(SolveStatus::kMaxIterations, "iteration limit reached");
}

enum class WarmStartPolicy {
  kReuse,  ///< previous solution and multipliers, projected onto the new bounds
  kCold,
};

/// Problem with its initial guess replaced by a previous solution (falls back to the cold start on mismatch).
inline NlpProblem warm_start(const NlpProblem & problem, const NlpSolution & previous, WarmStartPolicy policy = WarmStartPolicy::kReuse)
{
  NlpProblem p = problem;
  if (policy == WarmStartPolicy::kCold || previous.x.size() != p.n || !previous.x.allFinite()) { return p; }
  p.x0 = p.project(previous.x);
  if (previous.lambda.size() == p.num_equalities()) { p.lambda0 = previous.lambda; }
  if (previous.mu.size() == p.num_inequalities()) { p.mu0 = previous.mu; }
  return p;
}

}  // namespace bmpc
