#pragma once

/**
 * @file
 * @brief Bezier curves in Bernstein form over normalized time.
 *
 * A curve of degree N in R^d is parameterized by a d x (N+1) control-point
 * matrix E and evaluated at normalized time tbar = (t - t0) / T in [0, 1]:
 *
 *   B(E, tbar) = sum_j binom(N, j) tbar^j (1 - tbar)^(N - j) E_j.
 *
 * Time derivatives are again Bezier curves whose control points are linear
 * recombinations of E (see derivative_control_points()), so position, velocity
 * and acceleration all remain functions of the same decision variables.
 */

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace bmpc {

/// Highest supported degree. Binomials up to this degree are exact in double.
inline constexpr int kMaxBezierDegree = 16;

namespace detail {

constexpr auto make_binomial_table()
{
  std::array<std::array<double, kMaxBezierDegree + 1>, kMaxBezierDegree + 1> table{};
  for (int n = 0; n <= kMaxBezierDegree; ++n) {
    table[n][0] = 1.0;
    for (int k = 1; k <= n; ++k) { table[n][k] = table[n - 1][k - 1] + (k <= n - 1 ? table[n - 1][k] : 0.0); }
  }
  return table;
}

inline constexpr auto kBinomial = make_binomial_table();

}  // namespace detail

inline double binomial(int n, int k)
{
  if (n < 0 || n > kMaxBezierDegree || k < 0 || k > n) { throw DomainError("binomial out of range"); }
  return detail::kBinomial[n][k];
}

/**
 * @brief d x (N+1) matrix of control points with finite entries.
 *
 * User-supplied matrices need N >= 1. Derivative matrices produced by
 * derivative_control_points() may have a single column (degree 0).
 */
class ControlPointMatrix
{
public:
  ControlPointMatrix() : points_(Eigen::MatrixXd::Zero(1, 2)) {}

  explicit ControlPointMatrix(Eigen::MatrixXd points) : ControlPointMatrix(std::move(points), 2) {}

  /// Derivative control points; a single column is allowed.
  static ControlPointMatrix derived(Eigen::MatrixXd points) { return ControlPointMatrix(std::move(points), 1); }

  /// Build from a row-major initializer, e.g. {{0, 1, 3, 2}} for a scalar cubic.
  static ControlPointMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows)
  {
    const auto nr = static_cast<Eigen::Index>(rows.size());
    const auto nc = nr > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
    Eigen::MatrixXd m(nr, nc);
    Eigen::Index r = 0;
    for (const auto & row : rows) {
      if (static_cast<Eigen::Index>(row.size()) != nc) { throw DimensionMismatchError("ragged control-point rows"); }
      Eigen::Index c = 0;
      for (double v : row) { m(r, c++) = v; }
      ++r;
    }
    return ControlPointMatrix(std::move(m));
  }

  /// Build from a column-stacked vector (column j occupies entries [j*d, (j+1)*d)).
  static ControlPointMatrix from_vector(const Eigen::Ref<const Eigen::VectorXd> & x, Eigen::Index dim)
  {
    if (dim <= 0 || x.size() % dim != 0) { throw DimensionMismatchError("vector length is not a multiple of the dimension"); }
    return ControlPointMatrix(Eigen::Map<const Eigen::MatrixXd>(x.data(), dim, x.size() / dim));
  }

  Eigen::Index dim() const { return points_.rows(); }
  Eigen::Index count() const { return points_.cols(); }
  int degree() const { return static_cast<int>(points_.cols()) - 1; }

  const Eigen::MatrixXd & matrix() const { return points_; }
  auto col(Eigen::Index j) const { return points_.col(j); }
  double operator()(Eigen::Index r, Eigen::Index c) const { return points_(r, c); }

  Eigen::VectorXd vectorized() const { return Eigen::Map<const Eigen::VectorXd>(points_.data(), points_.size()); }

private:
  ControlPointMatrix(Eigen::MatrixXd points, Eigen::Index min_cols) : points_(std::move(points))
  {
    if (points_.rows() < 1) { throw InvalidCurveError("control-point matrix needs at least one row"); }
    if (points_.cols() < min_cols) { throw InvalidCurveError("control-point matrix needs at least two control points"); }
    if (points_.cols() - 1 > kMaxBezierDegree) {
      throw InvalidCurveError("degree " + std::to_string(points_.cols() - 1) + " exceeds the supported maximum");
    }
    if (!points_.allFinite()) { throw InvalidCurveError("control points contain non-finite entries"); }
  }

  Eigen::MatrixXd points_;
};

/// Bernstein basis weights binom(N, j) tbar^j (1 - tbar)^(N - j), j = 0..N. Generic in the scalar.
template<class T>
void bernstein_weights(int degree, const T & tbar, std::vector<T> & out)
{
  out.assign(static_cast<std::size_t>(degree) + 1, T(0.0));
  const T s = T(1.0) - tbar;
  // powers of tbar and (1 - tbar)
  std::vector<T> tp(static_cast<std::size_t>(degree) + 1, T(1.0));
  std::vector<T> sp(static_cast<std::size_t>(degree) + 1, T(1.0));
  for (int k = 1; k <= degree; ++k) {
    tp[k] = tp[k - 1] * tbar;
    sp[k] = sp[k - 1] * s;
  }
  for (int j = 0; j <= degree; ++j) { out[j] = detail::kBinomial[degree][j] * tp[j] * sp[degree - j]; }
}

inline Eigen::VectorXd bernstein_weights(int degree, double tbar)
{
  if (degree < 0 || degree > kMaxBezierDegree) { throw DomainError("unsupported Bezier degree"); }
  std::vector<double> w;
  bernstein_weights(degree, tbar, w);
  return Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

/**
 * @brief Linear operator M with E^(k) = E * M for the k-th time derivative.
 *
 * M has shape (N+1) x (N+1-k). Order 1 gives E'_j = (N/T)(E_{j+1} - E_j),
 * order 2 gives E''_j = N(N-1)/T^2 (E_{j+2} - 2E_{j+1} + E_j).
 */
inline Eigen::MatrixXd derivative_operator(int degree, double horizon, int order)
{
  if (order < 0 || order > 2) { throw DomainError("derivative order must be 0, 1 or 2"); }
  if (degree < order) { throw DegreeTooLowError("degree " + std::to_string(degree) + " too low for derivative order " + std::to_string(order)); }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) { throw DomainError("horizon must be positive"); }
  const int n = degree;
  if (order == 0) { return Eigen::MatrixXd::Identity(n + 1, n + 1); }
  if (order == 1) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n);
    const double c = n / horizon;
    for (int j = 0; j < n; ++j) {
      m(j, j)     = -c;
      m(j + 1, j) = c;
    }
    return m;
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n - 1);
  const double c = n * (n - 1) / (horizon * horizon);
  for (int j = 0; j < n - 1; ++j) {
    m(j, j)     = c;
    m(j + 1, j) = -2.0 * c;
    m(j + 2, j) = c;
  }
  return m;
}


/// Control points of the first or second time-derivative curve (N or N-1 columns).
inline ControlPointMatrix derivative_control_points(const ControlPointMatrix & cpm, double horizon, int order)
{
  if (order != 1 && order != 2) { throw DomainError("derivative order must be 1 or 2"); }
  if (cpm.degree() < order) {
    throw DegreeTooLowError(
      "degree " + std::to_string(cpm.degree()) + " too low for derivative order " + std::to_string(order));
  }
  return ControlPointMatrix::derived(cpm.matrix() * derivative_operator(cpm.degree(), horizon, order));
}

/**
 * @brief Control points plus the time window [t0, t0 + T] they span.
 */
class BezierCurve
{
public:
  BezierCurve() = default;

  BezierCurve(ControlPointMatrix control_points, double horizon, double t0 = 0.0)
      : cp_(std::move(control_points)), horizon_(horizon), t0_(t0)
  {
    if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) { throw DomainError("horizon must be positive and finite"); }
    if (!std::isfinite(t0_)) { throw DomainError("start time must be finite"); }
  }

  const ControlPointMatrix & control_points() const { return cp_; }
  double horizon() const { return horizon_; }
  double t0() const { return t0_; }
  Eigen::Index dim() const { return cp_.dim(); }
  int degree() const { return cp_.degree(); }

  /// (t - t0) / T, unclamped.
  double normalized_time(double t) const { return (t - t0_) / horizon_; }

private:
  ControlPointMatrix cp_{};
  double horizon_{1.0};
  double t0_{0.0};
};

namespace detail {

inline void check_tbar(double tbar)
{
  if (!(tbar >= 0.0 && tbar <= 1.0)) {
    throw DomainError("normalized time " + std::to_string(tbar) + " outside [0, 1]");
  }
}

}  // namespace detail

/// Evaluate the control-point polynomial directly at tbar in [0, 1].
inline Eigen::VectorXd eval(const ControlPointMatrix & cpm, double tbar)
{
  detail::check_tbar(tbar);
  // exact endpoint interpolation
  if (tbar == 0.0) { return cpm.col(0); }
  if (tbar == 1.0) { return cpm.col(cpm.count() - 1); }
  return cpm.matrix() * bernstein_weights(cpm.degree(), tbar);
}

inline Eigen::VectorXd eval(const BezierCurve & curve, double tbar) { return eval(curve.control_points(), tbar); }

/// Time derivative (d/dt, not d/dtbar) of order 1 or 2 at tbar.
inline Eigen::VectorXd eval_derivative(const BezierCurve & curve, double tbar, int order)
{
  detail::check_tbar(tbar);
  return eval(derivative_control_points(curve.control_points(), curve.horizon(), order), tbar);
}

/// Per-dimension min / max over control points; bounds the whole curve.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> hull_bounds(const ControlPointMatrix & cpm)
{
  return {cpm.matrix().rowwise().minCoeff(), cpm.matrix().rowwise().maxCoeff()};
}

struct KnotSample
{
  double tbar;
  Eigen::VectorXd value;
};

/// Uniform knots tbar_i = i / K, i = 0..K.
inline std::vector<KnotSample> sample_knots(const BezierCurve & curve, int knot_intervals)
{
  if (knot_intervals < 1) { throw DomainError("knot count must be at least 1"); }
  std::vector<KnotSample> out;
  out.reserve(static_cast<std::size_t>(knot_intervals) + 1);
  for (int i = 0; i <= knot_intervals; ++i) {
    const double tbar = i == knot_intervals ? 1.0 : static_cast<double>(i) / knot_intervals;
    out.push_back({tbar, eval(curve, tbar)});
  }
  return out;
}

/// Uniform knot times used by every planner: tbar_i = i / K with the last knot exactly 1.
inline double knot_tbar(int i, int knot_intervals)
{
  return i == knot_intervals ? 1.0 : static_cast<double>(i) / knot_intervals;
}

/**
 * @brief Row weights mapping column-stacked control points to the k-th
 * derivative value at tbar: value = (w^T kron I_d) vec(E).
 *
 * Returns the N+1 weights w; entry j multiplies control point E_j.
 */
inline Eigen::VectorXd value_weights(int degree, double horizon, double tbar, int order)
{
  detail::check_tbar(tbar);
  if (order == 0) { return bernstein_weights(degree, tbar); }
  const Eigen::MatrixXd d = derivative_operator(degree, horizon, order);
  return d * bernstein_weights(degree - order, tbar);
}

}  // namespace bmpc
