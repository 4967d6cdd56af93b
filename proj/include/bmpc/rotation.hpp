#pragma once

/**
 * @file
 * @brief Rotation parameterization by angle + spherical axis, and quaternion helpers.
 *
 * A rotation is described by psi = (alpha, beta, gamma): the rotation angle
 * alpha about the unit axis u = (cos(beta) sin(gamma), sin(beta) sin(gamma), cos(gamma)).
 * The induced quaternion
 *
 *   w = cos(alpha/2), (x, y, z) = sin(alpha/2) u
 *
 * has unit norm for every real psi, so a Bezier curve over psi is a curve on
 * the unit-quaternion sphere at every point, not just at sampled knots.
 *
 * Quaternions are Hamilton, stored (w, x, y, z).
 */

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bezier.hpp"
#include "dual.hpp"
#include "errors.hpp"

namespace bmpc {

template<class T>
struct Vec3
{
  T x{}, y{}, z{};

  Vec3 operator+(const Vec3 & o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3 & o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(const T & s) const { return {x * s, y * s, z * s}; }
};

template<class T>
T dot(const Vec3<T> & a, const Vec3<T> & b)
{
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template<class T>
Vec3<T> cross(const Vec3<T> & a, const Vec3<T> & b)
{
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template<class T>
struct Quat
{
  T w{1.0}, x{}, y{}, z{};

  Vec3<T> vec() const { return {x, y, z}; }
};

template<class T>
Quat<T> operator*(const Quat<T> & a, const Quat<T> & b)
{
  return {
    a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
    a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
    a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
    a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
  };
}

template<class T>
Quat<T> conjugate(const Quat<T> & q)
{
  return {q.w, -q.x, -q.y, -q.z};
}

template<class T>
T dot(const Quat<T> & a, const Quat<T> & b)
{
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// R(q) v, expanded form of q (0, v) q*; valid for unit q.
template<class T>
Vec3<T> rotate(const Quat<T> & q, const Vec3<T> & v)
{
  const Vec3<T> u = q.vec();
  const Vec3<T> t = cross(u, v) * T(2.0);
  return v + t * q.w + cross(u, t);
}

/// Unit quaternion about a unit axis.
template<class T>
Quat<T> axis_angle(const Vec3<double> & axis, const T & angle)
{
  using std::cos;
  using std::sin;
  const T s = sin(angle * 0.5);
  return {cos(angle * 0.5), s * axis.x, s * axis.y, s * axis.z};
}

/**
 * @brief Quaternion induced by (alpha, beta, gamma); unit norm by construction.
 */
template<class T>
Quat<T> psi_to_quaternion(const T & alpha, const T & beta, const T & gamma)
{
  using std::cos;
  using std::sin;
  const T sa = sin(alpha * 0.5);
  const T sg = sin(gamma);
  return {cos(alpha * 0.5), sa * cos(beta) * sg, sa * sin(beta) * sg, sa * cos(gamma)};
}

/// Rotation-matrix columns of a unit quaternion, generic in the scalar. Column c is R e_c.
template<class T>
std::array<Vec3<T>, 3> rotation_columns(const Quat<T> & q)
{
  const T w = q.w, x = q.x, y = q.y, z = q.z;
  return {{
    {T(1.0) - T(2.0) * (y * y + z * z), T(2.0) * (x * y + w * z), T(2.0) * (x * z - w * y)},
    {T(2.0) * (x * y - w * z), T(1.0) - T(2.0) * (x * x + z * z), T(2.0) * (y * z + w * x)},
    {T(2.0) * (x * z + w * y), T(2.0) * (y * z - w * x), T(1.0) - T(2.0) * (x * x + y * y)},
  }};
}

/// q - s * ref with s = sign(<q, ref>); removes the q / -q ambiguity from differences.
template<class T>
Quat<T> sign_aligned_difference(const Quat<T> & q, const Quat<double> & ref)
{
  const double s = value(q.w) * ref.w + value(q.x) * ref.x + value(q.y) * ref.y + value(q.z) * ref.z < 0.0 ? -1.0 : 1.0;
  return {q.w - s * ref.w, q.x - s * ref.x, q.y - s * ref.y, q.z - s * ref.z};
}

/**
 * @brief Rotation angle about a spherical-coordinate axis.
 */
struct PsiState
{
  double alpha{0.0};  ///< rotation angle [rad]
  double beta{0.0};   ///< azimuth of the axis [rad]
  double gamma{0.0};  ///< polar angle of the axis [rad]

  Eigen::Vector3d vector() const { return {alpha, beta, gamma}; }
  static PsiState from_vector(const Eigen::Ref<const Eigen::Vector3d> & v) { return {v[0], v[1], v[2]}; }
};

/**
 * @brief Quaternion with unit norm (within 1e-9).
 */
class UnitQuaternion
{
public:
  static constexpr double kNormTolerance = 1e-9;

  UnitQuaternion() = default;

  UnitQuaternion(double w, double x, double y, double z) : q_{w, x, y, z}
  {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!std::isfinite(n) || std::abs(n - 1.0) > kNormTolerance) {
      throw DomainError("quaternion norm " + std::to_string(n) + " is not 1");
    }
  }

  explicit UnitQuaternion(const Quat<double> & q) : UnitQuaternion(q.w, q.x, q.y, q.z) {}

  /// Normalize an arbitrary quaternion; near-zero norms are rejected.
  static UnitQuaternion normalized(const Quat<double> & q)
  {
    const double n = std::sqrt(dot(q, q));
    if (!(n > 1e-12) || !std::isfinite(n)) { throw DomainError("cannot normalize a near-zero quaternion"); }
    return UnitQuaternion(q.w / n, q.x / n, q.y / n, q.z / n);
  }

  static UnitQuaternion identity() { return {}; }

  double w() const { return q_.w; }
  double x() const { return q_.x; }
  double y() const { return q_.y; }
  double z() const { return q_.z; }

  const Quat<double> & raw() const { return q_; }
  Eigen::Vector4d coeffs() const { return {q_.w, q_.x, q_.y, q_.z}; }
  double norm() const { return std::sqrt(dot(q_, q_)); }

  UnitQuaternion operator-() const
  {
    UnitQuaternion r;
    r.q_ = {-q_.w, -q_.x, -q_.y, -q_.z};
    return r;
  }
  UnitQuaternion operator*(const UnitQuaternion & o) const { return normalized(q_ * o.q_); }
  UnitQuaternion conjugate() const { return UnitQuaternion(bmpc::conjugate(q_)); }

private:
  Quat<double> q_{1.0, 0.0, 0.0, 0.0};
};

inline UnitQuaternion psi_to_quaternion(const PsiState & psi)
{
  if (!std::isfinite(psi.alpha) || !std::isfinite(psi.beta) || !std::isfinite(psi.gamma)) {
    throw DomainError("non-finite rotation parameters");
  }
  const Quat<double> q = psi_to_quaternion(psi.alpha, psi.beta, psi.gamma);
  // sin^2 + cos^2 rounding stays far below the unit-norm tolerance
  return UnitQuaternion(q);
}

/// Proper rotation matrix of a quaternion with norm within 1e-6 of one (renormalized first).
inline Eigen::Matrix3d quaternion_to_rotation(const Quat<double> & q)
{
  const double n = std::sqrt(dot(q, q));
  if (!(n > 1e-12) || !std::isfinite(n)) { throw DomainError("near-zero quaternion has no rotation"); }
  if (std::abs(n - 1.0) > 1e-6) { throw DomainError("quaternion norm " + std::to_string(n) + " is not within 1e-6 of 1"); }
  const Quat<double> u{q.w / n, q.x / n, q.y / n, q.z / n};
  const auto c = rotation_columns(u);
  Eigen::Matrix3d r;
  for (int k = 0; k < 3; ++k) { r.col(k) = Eigen::Vector3d(c[k].x, c[k].y, c[k].z); }
  return r;
}

inline Eigen::Matrix3d quaternion_to_rotation(const UnitQuaternion & q) { return quaternion_to_rotation(q.raw()); }

/// min(|a - b|, |a + b|): zero exactly when a and b are the same rotation.
inline double quaternion_distance(const UnitQuaternion & a, const UnitQuaternion & b)
{
  const Eigen::Vector4d ca = a.coeffs(), cb = b.coeffs();
  return std::min((ca - cb).norm(), (ca + cb).norm());
}

namespace detail {

inline double wrap_near(double angle, double reference, double period)
{
  return angle + period * std::round((reference - angle) / period);
}

}  // namespace detail

/**
 * @brief Inverse of psi_to_quaternion.
 *
 * alpha = 2 atan2(|v|, w), gamma = acos(v_z / |v|), beta = atan2(v_y, v_x).
 * When |sin(alpha/2)| < 1e-8 the axis is undetermined; beta = gamma = 0 is used
 * (or the hint's axis when one is given).
 *
 * With a hint, the representative closest to it is returned among the
 * equivalent parameterizations (alpha -> -alpha with the flipped axis, beta and
 * gamma modulo 2 pi, alpha modulo 2 pi). This keeps psi continuous between
 * control loops when the measured orientation is re-parameterized.
 */
inline PsiState psi_from_quaternion(const UnitQuaternion & q, const std::optional<PsiState> & hint = std::nullopt)
{
  const double vn = std::sqrt(q.x() * q.x() + q.y() * q.y() + q.z() * q.z());
  PsiState base;
  base.alpha = 2.0 * std::atan2(vn, q.w());
  if (std::abs(std::sin(0.5 * base.alpha)) < 1e-8) {
    base.beta  = hint ? hint->beta : 0.0;
    base.gamma = hint ? hint->gamma : 0.0;
  } else {
    base.gamma = std::acos(std::clamp(q.z() / vn, -1.0, 1.0));
    base.beta  = std::atan2(q.y(), q.x());
  }
  if (!hint) { return base; }

  constexpr double pi     = std::numbers::pi;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const std::array<PsiState, 4> family{{
    base,
    {base.alpha, base.beta + pi, -base.gamma},
    {-base.alpha, base.beta + pi, pi - base.gamma},
    {-base.alpha, base.beta, base.gamma - pi},
  }};
  PsiState best       = base;
  double best_dist    = std::numeric_limits<double>::infinity();
  for (PsiState c : family) {
    c.alpha = detail::wrap_near(c.alpha, hint->alpha, two_pi);
    c.beta  = detail::wrap_near(c.beta, hint->beta, two_pi);
    c.gamma = detail::wrap_near(c.gamma, hint->gamma, two_pi);
    const double d = (c.vector() - hint->vector()).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best      = c;
    }
  }
  return best;
}

using QuaternionPair = std::pair<UnitQuaternion, UnitQuaternion>;

/// Right and left quaternions of a stacked 6-vector (psi_right; psi_left).
inline QuaternionPair psi_pair_to_quaternions(const Eigen::Ref<const Eigen::VectorXd> & psi6)
{
  if (psi6.size() != 6) { throw DimensionMismatchError("psi pair must have 6 entries"); }
  return {psi_to_quaternion(PsiState{psi6[0], psi6[1], psi6[2]}), psi_to_quaternion(PsiState{psi6[3], psi6[4], psi6[5]})};
}

/// Apply the psi -> quaternion map at K+1 uniform knots of a 6-dimensional psi curve.
inline std::vector<QuaternionPair> psi_curve_to_quaternion_trajectory(const BezierCurve & psi_curve, int knot_intervals)
{
  if (psi_curve.dim() != 6) {
    throw DimensionMismatchError("psi curve must have dimension 6, got " + std::to_string(psi_curve.dim()));
  }
  std::vector<QuaternionPair> out;
  for (const auto & s : sample_knots(psi_curve, knot_intervals)) { out.push_back(psi_pair_to_quaternions(s.value)); }
  return out;
}

}  // namespace bmpc
