#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "bmpc/dual.hpp"
#include "bmpc/robot_model.hpp"

using namespace bmpc;

namespace {

Eigen::VectorXd random_configuration(const KinematicModel & m, std::mt19937 & rng)
{
  Eigen::VectorXd q(m.dof());
  for (int i = 0; i < m.dof(); ++i) {
    const double lo = std::max(m.q_min()[i], -3.0), hi = std::min(m.q_max()[i], 3.0);
    q[i] = std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return q;
}

const char * kTwoLink = R"(
joint a revolute world axis 0 0 1 limits -3 3 velocity -1 1
joint b revolute a axis 0 1 0 offset 0.5 0 0 limits -3 3 velocity -1 1
frame right_palm b offset 0.25 0 0
frame left_palm a offset 0 0 1
)";

}  // namespace

TEST(RobotModel, DefaultModelShape)
{
  const KinematicModel m = default_model();
  EXPECT_EQ(m.dof(), kNumDof);
  EXPECT_EQ(m.joint(0).name, "base_x");
  EXPECT_EQ(m.joint(kBaseYawIndex).name, "base_yaw");
  EXPECT_EQ(m.index_of("l_wr_yaw"), 17);
}

TEST(RobotModel, ModelFileMatchesBuiltIn)
{
  std::ifstream in(std::string(BMPC_SOURCE_DIR) + "/models/eva_like.model");
  ASSERT_TRUE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  const KinematicModel a = parse_model(ss.str()), b = default_model();
  std::mt19937 rng(9);
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd q = random_configuration(b, rng);
    const auto [ra, la] = forward_kinematics(a, q);
    const auto [rb, lb] = forward_kinematics(b, q);
    EXPECT_LT((ra.position - rb.position).norm() + (la.position - lb.position).norm(), 1e-15);
  }
}

TEST(RobotModel, ZeroConfigurationByHand)
{
  // base 0 + chest 0.35 + shoulder 0.45 - upper arm 0.28 = 0.52 high; forearm 0.28 + palm 0.12 forward
  const auto [r, l] = forward_kinematics(default_model(), Eigen::VectorXd::Zero(kNumDof));
  EXPECT_LT((r.position - Eigen::Vector3d(0.4, -0.22, 0.52)).norm(), 1e-12);
  EXPECT_LT((l.position - Eigen::Vector3d(0.4, 0.22, 0.52)).norm(), 1e-12);
  // palm normals face each other
  EXPECT_LT((r.rotation.col(2) - Eigen::Vector3d::UnitY()).norm(), 1e-12);
  EXPECT_LT((l.rotation.col(2) + Eigen::Vector3d::UnitY()).norm(), 1e-12);
}

TEST(RobotModel, QuaternionChainMatchesHomogeneousTransforms)
{
  const KinematicModel m = default_model();
  std::mt19937 rng(10);
  for (int k = 0; k < 300; ++k) {
    const Eigen::VectorXd q = random_configuration(m, rng);
    const auto [r, l]   = forward_kinematics(m, q);
    const auto [tr, tl] = forward_kinematics_homogeneous(m, q);
    EXPECT_LT((r.position - tr.translation()).norm(), 1e-12);
    EXPECT_LT((l.position - tl.translation()).norm(), 1e-12);
    EXPECT_LT((r.rotation - tr.linear()).norm(), 1e-12);
    EXPECT_LT((l.rotation - tl.linear()).norm(), 1e-12);
  }
}

TEST(RobotModel, TwoLinkByHand)
{
  const KinematicModel m = parse_model(kTwoLink);
  Eigen::VectorXd q(2);
  q << std::numbers::pi / 2, std::numbers::pi / 2;
  const auto [r, l] = forward_kinematics(m, q);
  // first link along +y after the yaw; the pitch turns the second link downwards
  EXPECT_LT((r.position - Eigen::Vector3d(0.0, 0.5, -0.25)).norm(), 1e-12);
  EXPECT_LT((l.position - Eigen::Vector3d(0.0, 0.0, 1.0)).norm(), 1e-12);
}

TEST(RobotModel, BaseTranslationMovesBothPalms)
{
  const KinematicModel m = default_model();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(kNumDof);
  const auto [r0, l0] = forward_kinematics(m, q);
  q[0] = 1.5;
  q[1] = -0.5;
  const auto [r1, l1] = forward_kinematics(m, q);
  EXPECT_LT((r1.position - r0.position - Eigen::Vector3d(1.5, -0.5, 0.0)).norm(), 1e-12);
  EXPECT_LT((l1.position - l0.position - Eigen::Vector3d(1.5, -0.5, 0.0)).norm(), 1e-12);
}

TEST(RobotModel, DualJacobianMatchesFiniteDifferences)
{
  const KinematicModel m = default_model();
  std::mt19937 rng(12);
  const Eigen::VectorXd q = random_configuration(m, rng);
  // seed joints 6..13 (right arm plus the first left-arm joint)
  std::vector<Dual<8>> qd(static_cast<std::size_t>(m.dof()));
  for (int i = 0; i < m.dof(); ++i) { qd[i] = Dual<8>(q[i], i - 6); }
  const auto [rd, ld] = palm_poses<Dual<8>>(m, std::span<const Dual<8>>(qd.data(), qd.size()));
  const double h = 1e-6;
  for (int k = 0; k < 8; ++k) {
    Eigen::VectorXd qp = q, qm = q;
    qp[6 + k] += h;
    qm[6 + k] -= h;
    const Eigen::Vector3d fd = (forward_kinematics(m, qp).first.position - forward_kinematics(m, qm).first.position) / (2.0 * h);
    EXPECT_NEAR(rd.p.x.d[k], fd.x(), 1e-8);
    EXPECT_NEAR(rd.p.y.d[k], fd.y(), 1e-8);
    EXPECT_NEAR(rd.p.z.d[k], fd.z(), 1e-8);
  }
  (void)ld;
}

TEST(RobotModel, SelectGroup)
{
  Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(kNumDof, 0.0, 17.0);
  EXPECT_EQ(select_group(q, BodyGroup::kBase).rows(), 3);
  EXPECT_EQ(select_group(q, BodyGroup::kUpper)(0, 0), 3.0);
  EXPECT_EQ(select_group(q, BodyGroup::kBaseTranslation).rows(), 2);
  EXPECT_THROW(select_group(Eigen::VectorXd::Zero(4), BodyGroup::kBase), DimensionMismatchError);
}

TEST(RobotModel, ParseErrors)
{
  EXPECT_THROW(parse_model("joint a revolute nowhere axis 0 0 1\nframe right_palm a\nframe left_palm a\n"), ParseError);
  EXPECT_THROW(parse_model("joint a twisty world axis 0 0 1\n"), ParseError);
  EXPECT_THROW(parse_model("joint a revolute world axis 0 0 0\n"), ParseError);
  EXPECT_THROW(parse_model("joint a revolute world axis 0 0 1 limits 1 -1 velocity -1 1\nframe right_palm a\nframe left_palm a\n"), LimitOrderError);
  EXPECT_THROW(parse_model("joint a revolute world axis 0 0 1\nframe right_palm a\n"), ParseError);
  EXPECT_THROW(parse_model("joint a revolute b axis 0 0 1\njoint b revolute a axis 0 0 1\nframe right_palm a\nframe left_palm b\n"), LoopDetectedError);
  EXPECT_THROW(parse_model("gripper x\n"), ParseError);
  EXPECT_THROW(load_model("/nonexistent/robot.model"), ParseError);
  EXPECT_THROW(forward_kinematics(default_model(), Eigen::VectorXd::Zero(5)), DimensionMismatchError);
}
