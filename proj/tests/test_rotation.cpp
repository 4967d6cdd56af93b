#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <numbers>
#include <random>

#include "bmpc/rotation.hpp"

using namespace bmpc;

namespace {

Quat<double> random_unit(std::mt19937 & rng)
{
  std::normal_distribution<double> n;
  Quat<double> q{n(rng), n(rng), n(rng), n(rng)};
  const double s = std::sqrt(dot(q, q));
  return {q.w / s, q.x / s, q.y / s, q.z / s};
}

// q (0, v) q* by two Hamilton products
Eigen::Vector3d sandwich(const Quat<double> & q, const Eigen::Vector3d & v)
{
  const Quat<double> r = q * Quat<double>{0.0, v.x(), v.y(), v.z()} * conjugate(q);
  return {r.x, r.y, r.z};
}

}  // namespace

TEST(Rotation, PsiMapHasUnitNorm)
{
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Quat<double> q = psi_to_quaternion(u(rng), u(rng), u(rng));
    worst = std::max(worst, std::abs(std::sqrt(dot(q, q)) - 1.0));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Rotation, PsiMapByHand)
{
  // half turn about z: axis polar angle 0
  const Quat<double> qz = psi_to_quaternion(std::numbers::pi, 0.3, 0.0);
  EXPECT_NEAR(qz.w, 0.0, 1e-15);
  EXPECT_NEAR(qz.z, 1.0, 1e-15);
  // quarter turn about y: azimuth pi/2, polar pi/2
  const Quat<double> qy = psi_to_quaternion(std::numbers::pi / 2, std::numbers::pi / 2, std::numbers::pi / 2);
  EXPECT_NEAR(qy.w, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(qy.y, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(qy.x, 0.0, 1e-15);
  EXPECT_NEAR(qy.z, 0.0, 1e-15);
}

TEST(Rotation, RotateMatchesSandwichProduct)
{
  std::mt19937 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 500; ++i) {
    const Quat<double> q = random_unit(rng);
    const Eigen::Vector3d v(n(rng), n(rng), n(rng));
    const Vec3<double> r = rotate(q, Vec3<double>{v.x(), v.y(), v.z()});
    EXPECT_LT((Eigen::Vector3d(r.x, r.y, r.z) - sandwich(q, v)).norm(), 1e-12);
  }
}

TEST(Rotation, MatrixMatchesEigen)
{
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Quat<double> q = random_unit(rng);
    const Eigen::Matrix3d ref = Eigen::Quaterniond(q.w, q.x, q.y, q.z).toRotationMatrix();
    EXPECT_LT((quaternion_to_rotation(q) - ref).norm(), 1e-12);
  }
}

TEST(Rotation, PsiInverseRoundTrip)
{
  std::mt19937 rng(4);
  for (int i = 0; i < 500; ++i) {
    const UnitQuaternion q = UnitQuaternion::normalized(random_unit(rng));
    const PsiState psi     = psi_from_quaternion(q);
    EXPECT_LT(quaternion_distance(psi_to_quaternion(psi), q), 1e-12);
  }
}

TEST(Rotation, HintKeepsParametersContinuous)
{
  // a rotation sweeping through the identity, where the axis is undetermined
  const PsiState start{0.4, 0.2, 1.1};
  std::optional<PsiState> hint = start;
  PsiState prev                = start;
  for (int k = 0; k <= 80; ++k) {
    const PsiState truth{0.4 - 0.01 * k, 0.2, 1.1};
    const UnitQuaternion q = psi_to_quaternion(truth);
    const PsiState got     = psi_from_quaternion(q, hint);
    EXPECT_LT(quaternion_distance(psi_to_quaternion(got), q), 1e-9);
    EXPECT_LT((got.vector() - prev.vector()).norm(), 0.05) << "step " << k;
    prev = got;
    hint = got;
  }
}

TEST(Rotation, DistanceIgnoresSign)
{
  std::mt19937 rng(5);
  const UnitQuaternion q = UnitQuaternion::normalized(random_unit(rng));
  EXPECT_NEAR(quaternion_distance(q, -q), 0.0, 1e-15);
  EXPECT_GT(quaternion_distance(q, UnitQuaternion::normalized(random_unit(rng))), 0.0);
}

TEST(Rotation, ProductOfConjugateIsIdentity)
{
  std::mt19937 rng(6);
  const UnitQuaternion q = UnitQuaternion::normalized(random_unit(rng));
  EXPECT_LT(quaternion_distance(q * q.conjugate(), UnitQuaternion::identity()), 1e-15);
}

TEST(Rotation, RejectsDegenerateInput)
{
  EXPECT_THROW(UnitQuaternion::normalized({0.0, 0.0, 0.0, 0.0}), DomainError);
  EXPECT_THROW(quaternion_to_rotation(Quat<double>{2.0, 0.0, 0.0, 0.0}), DomainError);
  EXPECT_THROW(psi_to_quaternion(PsiState{std::nan(""), 0.0, 0.0}), DomainError);
  EXPECT_THROW(psi_pair_to_quaternions(Eigen::VectorXd::Zero(5)), DimensionMismatchError);
}
