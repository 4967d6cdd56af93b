#include <gtest/gtest.h>

#include "bmpc/bench.hpp"
#include "bmpc/mpc_task.hpp"

using namespace bmpc;

namespace {

struct Crossing
{
  TaskState state;
  TaskGoal goal;
  std::vector<Obstacle> obstacles;
  TaskPlanConfig cfg;
};

Crossing crossing()
{
  const KinematicModel model = default_model();
  Crossing s;
  const TaskGoal start = base_pose_goal(model, 0.0, 0.0, 0.0);
  s.state.p            = start.p_goal;
  s.state.theta        = start.theta_goal;
  s.goal               = base_pose_goal(model, 2.0, 0.3, 0.4);
  s.obstacles          = {{Eigen::Vector3d(1.3, 0.05, 0.52), Eigen::Vector3d::Zero(), 0.35, ObstacleTarget::kHands}};
  return s;
}

}  // namespace

TEST(MpcTask, DecisionVariableCounts)
{
  const Crossing s = crossing();
  EXPECT_EQ(task_decision_variables(TaskMode::kDiscretizedQuaternion, s.cfg), 224);
  EXPECT_EQ(task_decision_variables(TaskMode::kBezierQuaternion, s.cfg), 112);
  EXPECT_EQ(task_decision_variables(TaskMode::kBezierPsi, s.cfg), 96);
  EXPECT_EQ(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0).nlp.n, 96);
  EXPECT_EQ(build_task_problem_quaternion(TaskMode::kDiscretizedQuaternion, s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0).nlp.n, 224);
  EXPECT_EQ(build_task_problem_quaternion(TaskMode::kBezierQuaternion, s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0).nlp.n, 112);
}

TEST(MpcTask, ConvergedPlanPassesIndependentRecheck)
{
  const Crossing s     = crossing();
  const TaskProblem tp = build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0);
  const TaskPlan plan  = solve_task_step(tp);
  ASSERT_TRUE(plan.converged) << plan.solution.message;

  EXPECT_LE(max_unit_norm_error(plan, 1000), 1e-12);

  // boundary values
  EXPECT_LT((eval(plan.P, 0.0) - s.state.p).norm(), 1e-12);
  EXPECT_LT((eval(plan.P, 1.0) - s.goal.p_goal).norm(), 1e-12);
  const TaskReference end = extract_reference(plan, 10.0);
  EXPECT_LT(quaternion_distance(end.theta_ref.first, s.goal.theta_goal.first), 1e-6);
  EXPECT_LT(quaternion_distance(end.theta_ref.second, s.goal.theta_goal.second), 1e-6);

  // midpoint clearance at the knots past the first
  const int kk = s.cfg.knots - 1;
  for (int i = 1; i <= kk; ++i) {
    const Eigen::VectorXd p   = eval(plan.P, static_cast<double>(i) / kk);
    const Eigen::Vector3d mid   = 0.5 * (p.head<3>() + p.tail<3>());
    EXPECT_GE((mid - s.obstacles[0].center).norm(), s.obstacles[0].d_safe - 1e-6) << "knot " << i;
  }

  // derivative control points within the box
  const ControlPointMatrix v = derivative_control_points(plan.P, 10.0, 1);
  const ControlPointMatrix a = derivative_control_points(plan.P, 10.0, 2);
  EXPECT_LE(v.matrix().cwiseAbs().maxCoeff(), s.cfg.v_max + 1e-6);
  EXPECT_LE(a.matrix().cwiseAbs().maxCoeff(), s.cfg.a_max + 1e-6);
}

TEST(MpcTask, ComparisonFormulationsConverge)
{
  const Crossing s = crossing();
  for (TaskMode mode : {TaskMode::kDiscretizedQuaternion, TaskMode::kBezierQuaternion}) {
    const TaskProblem tp  = build_task_problem_quaternion(mode, s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0);
    const NlpSolution sol = solve(tp.nlp, s.cfg.solver);
    EXPECT_TRUE(sol.converged) << to_string(mode) << ": " << sol.message;
    EXPECT_LE(sol.max_constraint_violation, 1e-6);
    // the norm is only enforced at knots, so samples between them drift
    EXPECT_GT(quaternion_formulation_norm_error(tp, sol.x, 1000), 1e-12) << to_string(mode);
  }
}

TEST(MpcTask, WarmStartFromPreviousPlan)
{
  const Crossing s     = crossing();
  const TaskPlan first = solve_task_step(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0));
  ASSERT_TRUE(first.converged);
  const TaskPlan again = solve_task_step(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0, &first), &first);
  ASSERT_TRUE(again.converged);
  EXPECT_LT(again.solution.iterations, first.solution.iterations);
  EXPECT_LT((again.P.matrix() - first.P.matrix()).norm(), 1e-4);
}

TEST(MpcTask, ReferenceStartsAtTheMeasuredState)
{
  const Crossing s      = crossing();
  const TaskPlan plan = solve_task_step(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 3.0, 10.0));
  const TaskReference r = extract_reference(plan, 3.0);
  EXPECT_LT((r.p_ref - s.state.p).norm(), 1e-12);
  EXPECT_LT(quaternion_distance(r.theta_ref.first, s.state.theta.first), 1e-12);
  EXPECT_THROW(extract_reference(plan, 2.0), DomainError);
}

TEST(MpcTask, HorizonShrinksToTheFloor)
{
  EXPECT_DOUBLE_EQ(shrink_horizon(14.0, 4.0, 1.0), 10.0);
  EXPECT_DOUBLE_EQ(shrink_horizon(14.0, 20.0, 1.0), 1.0);
  EXPECT_THROW(shrink_horizon(14.0, -1.0, 1.0), DomainError);
}

TEST(MpcTask, GoalInsideObstacleIsInfeasible)
{
  Crossing s = crossing();
  const Eigen::Vector3d mid = 0.5 * (s.goal.p_goal.head<3>() + s.goal.p_goal.tail<3>());
  s.obstacles.push_back({mid + Eigen::Vector3d(0.05, 0.0, 0.0), Eigen::Vector3d::Zero(), 0.3, ObstacleTarget::kHands});
  EXPECT_THROW(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0), InfeasibleError);
  // base-only obstacles do not constrain the palms
  s.obstacles.back().target = ObstacleTarget::kBase;
  EXPECT_NO_THROW(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 10.0));
}

TEST(MpcTask, ConfigValidation)
{
  const Crossing s = crossing();
  TaskPlanConfig bad;
  bad.d_safe = 0.0;
  EXPECT_THROW(build_task_problem(s.state, s.goal, s.obstacles, bad, 0.0, 10.0), DomainError);
  bad       = {};
  bad.v_min = 1.0;
  EXPECT_THROW(build_task_problem(s.state, s.goal, s.obstacles, bad, 0.0, 10.0), LimitOrderError);
  EXPECT_THROW(build_task_problem(s.state, s.goal, s.obstacles, s.cfg, 0.0, 0.0), DomainError);
}
