#include <gtest/gtest.h>

#include "bmpc/bench.hpp"
#include "bmpc/scenario_io.hpp"

using namespace bmpc;

namespace {

std::string scenario_path(const std::string & name) { return std::string(BMPC_SOURCE_DIR) + "/scenarios/" + name + ".json"; }

}  // namespace

TEST(ScenarioIo, ShippedScenariosLoad)
{
  for (const char * name : {"trivial", "fig5_static", "moving_obstacle", "grasp_admittance", "grasp_no_admittance", "push_disturbance", "sine_tracking"}) {
    EXPECT_NO_THROW(load_scenario(scenario_path(name))) << name;
  }
  const ScenarioConfig sc = load_scenario(scenario_path("fig5_static"));
  EXPECT_EQ(sc.name, "fig5_static");
  EXPECT_EQ(sc.method, PlannerMethod::kBezier);
  ASSERT_EQ(sc.obstacles.size(), 1u);
  EXPECT_DOUBLE_EQ(sc.obstacles[0].d_safe, 0.3);
  EXPECT_DOUBLE_EQ(sc.planner_margin, 0.03);
  EXPECT_EQ(sc.task.knots, 8);
  EXPECT_FALSE(sc.wholebody.admittance);
}

TEST(ScenarioIo, BasePoseGoalUsesForwardKinematics)
{
  const ScenarioConfig sc = parse_scenario(R"({"goal": {"base_pose": [1.0, 0.5, 0.3]}})");
  const TaskGoal g        = base_pose_goal(default_model(), 1.0, 0.5, 0.3);
  EXPECT_LT((sc.goal.p_goal - g.p_goal).norm(), 1e-12);
  EXPECT_LT(quaternion_distance(sc.goal.theta_goal.first, g.theta_goal.first), 1e-12);
}

TEST(ScenarioIo, PalmPoseGoal)
{
  const ScenarioConfig sc = parse_scenario(R"({"goal": {"positions": [1, 0, 1, 1, 0.3, 1], "quaternions": [[2, 0, 0, 0], [1, 0, 0, 0]]}})");
  EXPECT_DOUBLE_EQ(sc.goal.p_goal[4], 0.3);
  EXPECT_NEAR(sc.goal.theta_goal.first.w(), 1.0, 1e-15);
  EXPECT_THROW(parse_scenario(R"({"goal": {"positions": [1, 0, 1, 1, 0.3, 1]}})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"positions": [1, 0, 1, 1, 0.3, 1], "quaternions": [[0, 0, 0, 0], [1, 0, 0, 0]]}})"), ScenarioError);
}

TEST(ScenarioIo, GraspGoalSitsOnTheObjectFaces)
{
  const ScenarioConfig sc = parse_scenario(R"({"object": {"center": [0.6, 0, 0.8], "width": 0.4}, "goal": {"grasp": {"squeeze": 0.01}}})");
  EXPECT_TRUE(sc.object.enabled);
  EXPECT_LT((sc.goal.p_goal.head<3>() - Eigen::Vector3d(0.6, -0.19, 0.8)).norm(), 1e-12);
  EXPECT_LT((sc.goal.p_goal.tail<3>() - Eigen::Vector3d(0.6, 0.19, 0.8)).norm(), 1e-12);
  EXPECT_THROW(parse_scenario(R"({"goal": {"grasp": {}}})"), ScenarioError);
}

TEST(ScenarioIo, TrackingNeedsNoGoal)
{
  const ScenarioConfig sc = parse_scenario(R"({"mode": "tracking", "tracking": {"amplitude": 0.2, "period": 4}})");
  EXPECT_EQ(sc.mode, ScenarioMode::kTracking);
  EXPECT_DOUBLE_EQ(sc.tracking.amplitude, 0.2);
  EXPECT_THROW(parse_scenario(R"({"mode": "task"})"), ScenarioError);
}

TEST(ScenarioIo, PlannerAndSolverKeys)
{
  const ScenarioConfig sc = parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "t_loop": 0.04,
    "mpc_task": {"knots": 12, "prediction": "hold", "solver": {"max_outer": 7}},
    "mpc_wholebody": {"stiffness": 50, "damping": [1, 2, 3, 4, 5, 6], "solver": {"rho0": 3.0, "constraint_curvature": false}}})");
  EXPECT_EQ(sc.task.knots, 12);
  EXPECT_EQ(sc.task.prediction, ObstaclePrediction::kHold);
  EXPECT_EQ(sc.task.solver.max_outer, 7);
  EXPECT_DOUBLE_EQ(sc.wholebody.stiffness[5], 50.0);
  EXPECT_DOUBLE_EQ(sc.wholebody.damping[2], 3.0);
  EXPECT_DOUBLE_EQ(sc.wholebody.solver.rho0, 3.0);
  EXPECT_FALSE(sc.wholebody.solver.constraint_curvature);
  EXPECT_DOUBLE_EQ(sc.wholebody.t_loop, 0.04);
}

TEST(ScenarioIo, MalformedInputIsRejected)
{
  EXPECT_THROW(parse_scenario("{"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "obstacle": []})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0]}})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "method": "spline"})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "t_loop": "fast"})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "mpc_task": {"knotz": 3}})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "obstacles": [{"center": [1, 0, 0], "d_safe": -1}]})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "disturbances": [{"start": 0, "duration": 1, "target": "head"}]})"), ScenarioError);
  EXPECT_THROW(parse_scenario(R"({"goal": {"base_pose": [0, 0, 0]}, "model": "no/such.model"})"), ScenarioError);
  EXPECT_THROW(load_scenario(std::string(BMPC_SOURCE_DIR) + "/tests/data/unknown_key.json"), ScenarioError);
  EXPECT_THROW(load_scenario("/no/such/file.json"), ScenarioError);
}

TEST(ScenarioIo, ModelPathIsRelativeToTheScenario)
{
  const std::string text = R"({"model": "../models/eva_like.model", "goal": {"base_pose": [0, 0, 0]}})";
  EXPECT_NO_THROW(parse_scenario(text, std::filesystem::path(BMPC_SOURCE_DIR) / "scenarios"));
  EXPECT_THROW(parse_scenario(text, std::filesystem::path(BMPC_SOURCE_DIR) / "no" / "where"), ScenarioError);
}
