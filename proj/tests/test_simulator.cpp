#include <gtest/gtest.h>

#include "bmpc/bench.hpp"
#include "bmpc/simulator.hpp"

using namespace bmpc;

TEST(Simulator, BaseIntegrationMatchesFineEuler)
{
  const Eigen::Vector3d pose(0.3, -0.2, 0.4), v(0.5, -0.1, 0.8);
  const Eigen::Vector3d exact = integrate_base(pose, v, 0.5);
  Eigen::Vector3d p = pose;
  const int n       = 200000;
  for (int i = 0; i < n; ++i) {
    const double c = std::cos(p.z()), s = std::sin(p.z());
    p += 0.5 / n * Eigen::Vector3d(c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z());
  }
  EXPECT_LT((exact - p).norm(), 1e-5);
  // straight line without rotation
  EXPECT_LT((integrate_base(pose, Eigen::Vector3d(1.0, 0.0, 0.0), 0.1) - Eigen::Vector3d(0.3 + 0.1 * std::cos(0.4), -0.2 + 0.1 * std::sin(0.4), 0.4)).norm(), 1e-14);
}

TEST(Simulator, ServoApproachesTheCommand)
{
  const KinematicModel model = default_model();
  WorldState w;
  RobotCommand cmd;
  cmd.upper_positions.setConstant(0.05);
  const auto [first, count] = group_rows(BodyGroup::kUpper);
  for (int i = 0; i < 200; ++i) { w = step(w, model, cmd, 0.01); }
  for (int k = 0; k < count; ++k) {
    const double target = std::clamp(0.05, model.q_min()[first + k], model.q_max()[first + k]);
    EXPECT_NEAR(w.robot.q[first + k], target, 1e-6);
  }
  EXPECT_NEAR(w.time, 2.0, 1e-12);
  RobotCommand bad;
  bad.upper_positions = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(step(w, model, bad, 0.01), DimensionMismatchError);
  EXPECT_THROW(step(w, model, cmd, 0.0), DomainError);
}

TEST(Simulator, ServoRespectsVelocityLimits)
{
  const KinematicModel model = default_model();
  WorldState w;
  RobotCommand cmd;
  cmd.upper_positions = model.q_max().tail(kNumUpperDof);
  const WorldState n = step(w, model, cmd, 0.01, {}, 1e-3);
  for (int r = 3; r < kNumDof; ++r) { EXPECT_LE(n.robot.qd[r], model.qd_max()[r] + 1e-12); }
}

TEST(Simulator, ObstaclesMoveAndOverridesApply)
{
  const KinematicModel model = default_model();
  WorldState w;
  w.obstacles = {{Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0.1, 0, 0), 0.2, ObstacleTarget::kHands}};
  DisturbanceEvent e;
  e.start    = 1.0;
  e.duration = 1.0;
  e.target   = DisturbanceTarget::kObstacle;
  e.obstacle = 0;
  e.velocity = Eigen::Vector3d(0, 0.5, 0);
  const RobotCommand cmd;
  for (int i = 0; i < 300; ++i) { w = step(w, model, cmd, 0.01, {e}); }
  EXPECT_LT((w.obstacles[0].center - Eigen::Vector3d(1.2, 0.5, 0.0)).norm(), 1e-9);
}

TEST(Simulator, ContactWrenchFromSqueezedObject)
{
  const KinematicModel model = default_model();
  const Eigen::VectorXd q    = Eigen::VectorXd::Zero(kNumDof);
  const auto [r, l]          = forward_kinematics(model, q);
  ContactObject o;
  o.enabled   = true;
  o.center    = 0.5 * (r.position + l.position);
  o.stiffness = 1000.0;
  o.width     = (l.position - r.position).y() + 0.02;  // 1 cm overlap on each palm
  const Vector6d w = contact_wrench(model, q, o, {}, 0.0);
  const auto [tr, tl] = forward_kinematics_homogeneous(model, q);
  // both palms press inward on the object
  const Eigen::Vector3d fr = tr.linear() * w.head<3>(), fl = tl.linear() * w.tail<3>();
  EXPECT_NEAR(fr.y(), 10.0, 1e-9);
  EXPECT_NEAR(fl.y(), -10.0, 1e-9);
  EXPECT_NEAR(fr.x(), 0.0, 1e-9);
  o.width = (l.position - r.position).y() - 0.02;
  EXPECT_LT(contact_wrench(model, q, o, {}, 0.0).norm(), 1e-12);
}

TEST(Simulator, PalmPushEntersTheWrench)
{
  const KinematicModel model = default_model();
  const Eigen::VectorXd q    = Eigen::VectorXd::Zero(kNumDof);
  DisturbanceEvent e;
  e.start    = 0.0;
  e.duration = 1.0;
  e.force    = Eigen::Vector3d(0, 0, 5);
  const auto [tr, tl] = forward_kinematics_homogeneous(model, q);
  const Vector6d w    = contact_wrench(model, q, ContactObject{}, {e}, 0.5);
  EXPECT_LT((tr.linear() * w.head<3>() - Eigen::Vector3d(0, 0, -5)).norm(), 1e-12);
  EXPECT_LT(w.tail<3>().norm(), 1e-12);
  EXPECT_LT(contact_wrench(model, q, ContactObject{}, {e}, 1.5).norm(), 1e-12);
}

TEST(Simulator, MonitorDistances)
{
  const KinematicModel model = default_model();
  Eigen::VectorXd q          = Eigen::VectorXd::Zero(kNumDof);
  q[0]                       = 0.5;
  const auto [r, l]          = forward_kinematics(model, q);
  const Eigen::Vector3d mid  = 0.5 * (r.position + l.position);
  const std::vector<Obstacle> obs = {{mid + Eigen::Vector3d(0.4, 0, 0), Eigen::Vector3d::Zero(), 0.1, ObstacleTarget::kHands},
    {Eigen::Vector3d(0.5, 1.0, 3.0), Eigen::Vector3d::Zero(), 0.25, ObstacleTarget::kBase}};
  const Clearance c = monitor_clearance(model, q, obs);
  EXPECT_NEAR(c.hand_distance, 0.3, 1e-12);
  EXPECT_NEAR(c.base_distance, 0.75, 1e-12);
}

TEST(Simulator, PlanarQuadratureIsExactForPolynomials)
{
  const Eigen::Vector2d i = integrate_planar([](double s) { return Eigen::Vector2d(std::pow(s, 9), 3.0 * s * s - 1.0); }, 0.7);
  EXPECT_NEAR(i.x(), std::pow(0.7, 10) / 10.0, 1e-15);
  EXPECT_NEAR(i.y(), std::pow(0.7, 3) - 0.7, 1e-15);
}

TEST(Simulator, DisturbanceValidation)
{
  DisturbanceEvent a;
  a.start    = 0.0;
  a.duration = 1.0;
  EXPECT_NO_THROW(validate_disturbances({a}, 0));
  DisturbanceEvent b = a;
  b.start            = 0.5;
  EXPECT_THROW(validate_disturbances({a, b}, 0), ScenarioError);
  b.target = DisturbanceTarget::kLeftPalm;
  EXPECT_NO_THROW(validate_disturbances({a, b}, 0));
  DisturbanceEvent o;
  o.duration = 1.0;
  o.target   = DisturbanceTarget::kObstacle;
  o.obstacle = 1;
  o.velocity = Eigen::Vector3d::Zero();
  EXPECT_THROW(validate_disturbances({o}, 1), ScenarioError);
  o.obstacle = 0;
  o.velocity.reset();
  EXPECT_THROW(validate_disturbances({o}, 1), ScenarioError);
  a.duration = 0.0;
  EXPECT_THROW(validate_disturbances({a}, 0), ScenarioError);
}

TEST(Simulator, RunAtTheGoalStopsImmediately)
{
  ScenarioConfig sc;
  sc.goal              = base_pose_goal(default_model(), 0.0, 0.0, 0.0);
  const RunTrace trace = run_closed_loop(sc);
  EXPECT_EQ(trace.summary.outcome, "goal_reached");
  EXPECT_EQ(trace.summary.loops, 0);
}

TEST(Simulator, ShortRunReachesANearbyGoal)
{
  ScenarioConfig sc;
  sc.goal              = base_pose_goal(default_model(), 0.1, 0.0, 0.0);
  sc.time_limit        = 15.0;
  const RunTrace trace = run_closed_loop(sc);
  EXPECT_EQ(trace.summary.outcome, "goal_reached") << trace.summary.message;
  EXPECT_LE(trace.summary.goal_position_error, sc.goal_position_tolerance);
  EXPECT_LT(trace.summary.max_consistency_held, 1e-4);
  EXPECT_LE(trace.summary.max_plan_violation, 1e-6);
  EXPECT_FALSE(trace.rows.empty());
}

TEST(Simulator, RejectsInvalidScenarios)
{
  ScenarioConfig sc;
  sc.goal   = base_pose_goal(default_model(), 0.0, 0.0, 0.0);
  sc.t_loop = 0.05;
  EXPECT_THROW(run_closed_loop(sc), ScenarioError);
  sc        = {};
  sc.goal   = base_pose_goal(default_model(), 0.0, 0.0, 0.0);
  sc.q0[3]  = 100.0;
  EXPECT_THROW(run_closed_loop(sc), ScenarioError);
  sc = {};
  sc.goal = base_pose_goal(default_model(), 1.0, 0.0, 0.0);
  const Eigen::Vector3d mid = 0.5 * (sc.goal.p_goal.head<3>() + sc.goal.p_goal.tail<3>());
  sc.obstacles = {{mid, Eigen::Vector3d::Zero(), 0.2, ObstacleTarget::kHands}};
  EXPECT_THROW(run_closed_loop(sc), ScenarioError);
}
