#pragma once

/**
 * @file
 * @brief Kinematic closed-loop environment and the MPC-T -> MPC-W -> robot loop.
 *
 * Wrenches are the forces the palms exert, expressed in the palm frames
 * (right xyz, left xyz). The clearance monitor and the plan re-check use
 * homogeneous-matrix kinematics, independent of the planners' own code.
 */

#include <Eigen/Geometry>

#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "baseline_discretized.hpp"
#include "mpc_task.hpp"
#include "mpc_wholebody.hpp"
#include "obstacle.hpp"
#include "robot_model.hpp"

namespace bmpc {

/// Slab held between the palms: two faces normal to its local y axis, `width` apart.
struct ContactObject
{
  bool enabled{false};
  Eigen::Vector3d center{Eigen::Vector3d::Zero()};
  double yaw{0.0};
  double width{0.3};
  double half_length{0.2};  ///< face extent along the local x axis
  double half_height{0.2};  ///< face extent along z
  double stiffness{1000.0};

  Eigen::Matrix3d rotation() const { return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }
};

enum class DisturbanceTarget { kRightPalm, kLeftPalm, kObstacle };

struct DisturbanceEvent
{
  double start{0.0};
  double duration{0.0};
  DisturbanceTarget target{DisturbanceTarget::kRightPalm};
  int obstacle{-1};
  Eigen::Vector3d force{Eigen::Vector3d::Zero()};  ///< world frame, applied to the palm
  std::optional<Eigen::Vector3d> velocity;          ///< obstacle velocity override

  bool active(double t) const { return t >= start && t < start + duration; }
};

inline void validate_disturbances(const std::vector<DisturbanceEvent> & events, int num_obstacles)
{
  for (std::size_t a = 0; a < events.size(); ++a) {
    const auto & e = events[a];
    if (!(e.duration > 0.0) || !(e.start >= 0.0)) { throw ScenarioError("disturbance needs start >= 0 and duration > 0"); }
    if (!e.force.allFinite() || (e.velocity && !e.velocity->allFinite())) { throw ScenarioError("non-finite disturbance"); }
    if (e.target == DisturbanceTarget::kObstacle && (e.obstacle < 0 || e.obstacle >= num_obstacles)) {
      throw ScenarioError("disturbance refers to obstacle " + std::to_string(e.obstacle) + " which does not exist");
    }
    if (e.target == DisturbanceTarget::kObstacle && !e.velocity) { throw ScenarioError("obstacle disturbance needs a velocity"); }
    for (std::size_t b = 0; b < a; ++b) {
      const auto & o = events[b];
      const bool same = o.target == e.target && (e.target != DisturbanceTarget::kObstacle || o.obstacle == e.obstacle);
      if (same && e.start < o.start + o.duration && o.start < e.start + e.duration) { throw ScenarioError("disturbances on the same target overlap"); }
    }
  }
}

struct RobotState
{
  Eigen::VectorXd q{Eigen::VectorXd::Zero(kNumDof)};
  Eigen::VectorXd qd{Eigen::VectorXd::Zero(kNumDof)};
  Vector6d wrench{Vector6d::Zero()};
};

struct WorldState
{
  RobotState robot;
  std::vector<Obstacle> obstacles;
  ContactObject object;
  double time{0.0};
};

/// Force each palm exerts, in its own frame: unilateral contact plus active palm pushes.
inline Vector6d contact_wrench(const KinematicModel & model, const Eigen::VectorXd & q, const ContactObject & object,
  const std::vector<DisturbanceEvent> & events, double t)
{
  const auto [tr, tl] = forward_kinematics_homogeneous(model, q);
  Eigen::Vector3d fw[2] = {Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
  if (object.enabled) {
    const Eigen::Matrix3d ro = object.rotation();
    const Eigen::Vector3d ny = ro.col(1);
    const Eigen::Isometry3d * palms[2] = {&tr, &tl};
    for (int arm = 0; arm < 2; ++arm) {
      const Eigen::Vector3d local = ro.transpose() * (palms[arm]->translation() - object.center);
      if (std::abs(local.x()) > object.half_length || std::abs(local.z()) > object.half_height) { continue; }
      // right palm meets the -y face, left palm the +y face
      const double depth = arm == 0 ? local.y() + 0.5 * object.width : 0.5 * object.width - local.y();
      const bool inside  = arm == 0 ? local.y() <= 0.0 : local.y() >= 0.0;
      if (inside && depth > 0.0) { fw[arm] += object.stiffness * depth * (arm == 0 ? ny : Eigen::Vector3d(-ny)); }
    }
  }
  for (const auto & e : events) {
    if (!e.active(t)) { continue; }
    if (e.target == DisturbanceTarget::kRightPalm) { fw[0] -= e.force; }
    if (e.target == DisturbanceTarget::kLeftPalm) { fw[1] -= e.force; }
  }
  Vector6d w;
  w.head<3>() = tr.linear().transpose() * fw[0];
  w.tail<3>() = tl.linear().transpose() * fw[1];
  return w;
}

/// Exact world displacement of a base driven by a constant local twist (vx, vy, w) for dt.
inline Eigen::Vector3d integrate_base(const Eigen::Vector3d & pose, const Eigen::Vector3d & v_local, double dt)
{
  const double yaw0 = pose.z(), w = v_local.z(), yaw1 = yaw0 + w * dt;
  double ic, is;  // integrals of cos(yaw) and sin(yaw) over the step
  if (std::abs(w) < 1e-12) {
    ic = std::cos(yaw0) * dt;
    is = std::sin(yaw0) * dt;
  } else {
    ic = (std::sin(yaw1) - std::sin(yaw0)) / w;
    is = -(std::cos(yaw1) - std::cos(yaw0)) / w;
  }
  return {pose.x() + v_local.x() * ic - v_local.y() * is, pose.y() + v_local.x() * is + v_local.y() * ic, yaw1};
}

/**
 * @brief Advance the world by dt under `cmd`.
 *
 * Upper-body joints follow a first-order servo (time constant `tau`), rate
 * limited at the model's velocity limits and clipped to the position limits.
 */
inline WorldState step(const WorldState & world, const KinematicModel & model, const RobotCommand & cmd, double dt,
  const std::vector<DisturbanceEvent> & events = {}, double tau = 0.05)
{
  if (cmd.upper_positions.size() != kNumUpperDof) { throw DimensionMismatchError("upper-body command must have 15 entries"); }
  if (!cmd.upper_positions.allFinite() || !cmd.base_velocity_local.allFinite()) { throw DomainError("non-finite command"); }
  if (!(dt > 0.0) || !(tau > 0.0)) { throw DomainError("step needs dt > 0 and tau > 0"); }
  WorldState next = world;
  const auto [first, count] = group_rows(BodyGroup::kUpper);
  const Eigen::VectorXd qmin = model.q_min(), qmax = model.q_max(), vmin = model.qd_min(), vmax = model.qd_max();
  const double gain = 1.0 - std::exp(-dt / tau);
  for (int k = 0; k < count; ++k) {
    const int r = first + k;
    double delta = (cmd.upper_positions[k] - world.robot.q[r]) * gain;
    delta        = std::clamp(delta, vmin[r] * dt, vmax[r] * dt);
    next.robot.q[r]  = std::clamp(world.robot.q[r] + delta, qmin[r], qmax[r]);
    next.robot.qd[r] = (next.robot.q[r] - world.robot.q[r]) / dt;
  }
  const Eigen::Vector3d pose0 = world.robot.q.head<3>();
  const Eigen::Vector3d pose1 = integrate_base(pose0, cmd.base_velocity_local, dt);
  next.robot.q.head<3>()  = pose1;
  next.robot.qd.head<3>() = (pose1 - pose0) / dt;

  for (std::size_t k = 0; k < next.obstacles.size(); ++k) {
    Eigen::Vector3d v = world.obstacles[k].velocity;
    for (const auto & e : events) {
      if (e.target == DisturbanceTarget::kObstacle && e.obstacle == static_cast<int>(k) && e.active(world.time)) { v = *e.velocity; }
    }
    next.obstacles[k].center = world.obstacles[k].center + v * dt;
  }
  next.time         = world.time + dt;
  next.robot.wrench = contact_wrench(model, next.robot.q, next.object, events, next.time);
  return next;
}

/// Obstacle velocities in effect at time t (overrides applied).
inline std::vector<Obstacle> effective_obstacles(const WorldState & world, const std::vector<DisturbanceEvent> & events)
{
  std::vector<Obstacle> out = world.obstacles;
  for (const auto & e : events) {
    if (e.target == DisturbanceTarget::kObstacle && e.active(world.time)) { out[static_cast<std::size_t>(e.obstacle)].velocity = *e.velocity; }
  }
  return out;
}

struct Clearance
{
  double hand_distance{std::numeric_limits<double>::infinity()};  ///< smallest midpoint distance minus d_safe
  double base_distance{std::numeric_limits<double>::infinity()};  ///< smallest planar base distance minus d_safe
};

/// Safety monitor on the executed configuration.
inline Clearance monitor_clearance(const KinematicModel & model, const Eigen::VectorXd & q, const std::vector<Obstacle> & obstacles)
{
  const auto [tr, tl] = forward_kinematics_homogeneous(model, q);
  const Eigen::Vector3d mid = 0.5 * (tr.translation() + tl.translation());
  Clearance c;
  for (const auto & o : obstacles) {
    if (o.affects_hands()) { c.hand_distance = std::min(c.hand_distance, (mid - o.center).norm() - o.d_safe); }
    if (o.affects_base()) { c.base_distance = std::min(c.base_distance, (q.head<2>() - o.center.head<2>()).norm() - o.d_safe); }
  }
  return c;
}

namespace detail {

inline double exclusion_violation(const Eigen::Vector3d & p, const Eigen::Vector3d & c, double d) { return std::max(0.0, d - (p - c).norm()); }

inline double box_violation(const Eigen::VectorXd & v, const Eigen::VectorXd & lo, const Eigen::VectorXd & hi)
{
  return std::max({0.0, (lo - v).maxCoeff(), (v - hi).maxCoeff()});
}

}  // namespace detail

/// Largest constraint violation of a whole-body plan, recomputed from its control points.
inline double recheck_wholebody_plan(const KinematicModel & model, const WholeBodyPlan & plan, const Eigen::VectorXd & q_act,
  const std::vector<Obstacle> & obstacles, const WholeBodyConfig & cfg)
{
  const ControlPointMatrix & Q = plan.Q;
  const int nq = Q.count(), kk = cfg.knots - 1;
  double worst = (Q.col(0) - q_act).lpNorm<Eigen::Infinity>();
  for (int j = 1; j < nq && !cfg.lock_joints; ++j) { worst = std::max(worst, detail::box_violation(Q.col(j), model.q_min(), model.q_max())); }
  if (!cfg.lock_joints) {
    const ControlPointMatrix d1 = derivative_control_points(Q, plan.horizon, 1);
    for (int j = 0; j < d1.count(); ++j) { worst = std::max(worst, detail::box_violation(d1.col(j), model.qd_min(), model.qd_max())); }
    if (cfg.base_accel_limit > 0.0 && nq > 2) {
      const ControlPointMatrix d2 = derivative_control_points(Q, plan.horizon, 2);
      for (int j = 0; j < d2.count(); ++j) { worst = std::max(worst, d2.col(j).head<2>().cwiseAbs().maxCoeff() - cfg.base_accel_limit); }
    }
  }
  if (plan.Pt) { worst = std::max(worst, plan.Pt->col(0).cwiseAbs().maxCoeff()); }
  for (const auto & o : obstacles) {
    if (o.affects_hands()) {
      for (int i = 1; i <= kk; ++i) {
        const double tb = knot_tbar(i, kk);
        const auto [tr, tl] = forward_kinematics_homogeneous(model, eval(Q, tb));
        worst = std::max(worst, detail::exclusion_violation(0.5 * (tr.translation() + tl.translation()), predicted_center(o, tb * plan.horizon, cfg.prediction), o.d_safe));
      }
    }
    if (o.affects_base()) {
      for (int j = 1; j < nq; ++j) {
        Eigen::Vector3d c = predicted_center(o, static_cast<double>(j) / (nq - 1) * plan.horizon, cfg.prediction);
        c.z()             = 0.0;
        worst = std::max(worst, detail::exclusion_violation(Eigen::Vector3d(Q(0, j), Q(1, j), 0.0), c, o.d_safe));
      }
    }
  }
  return worst;
}

inline double recheck_discretized_plan(const KinematicModel & model, const DiscretizedPlan & plan, const Eigen::VectorXd & q_act,
  const std::vector<Obstacle> & obstacles, const WholeBodyConfig & cfg)
{
  double worst = std::max(plan.transition_residual(), (plan.q.col(0) - q_act).lpNorm<Eigen::Infinity>());
  const int kk = plan.intervals();
  for (int i = 0; i <= kk; ++i) {
    if (!cfg.lock_joints) {
      worst = std::max(worst, detail::box_violation(plan.q.col(i), model.q_min(), model.q_max()));
      worst = std::max(worst, detail::box_violation(plan.qd.col(i), model.qd_min(), model.qd_max()));
    }
    for (const auto & o : obstacles) {
      if (i == 0) { break; }
      const Eigen::Vector3d c = predicted_center(o, i * plan.dt(), cfg.prediction);
      if (o.affects_hands()) {
        const auto [tr, tl] = forward_kinematics_homogeneous(model, plan.q.col(i));
        worst = std::max(worst, detail::exclusion_violation(0.5 * (tr.translation() + tl.translation()), c, o.d_safe));
      }
      if (o.affects_base()) { worst = std::max(worst, detail::exclusion_violation(Eigen::Vector3d(plan.q(0, i), plan.q(1, i), 0.0), Eigen::Vector3d(c.x(), c.y(), 0.0), o.d_safe)); }
    }
  }
  return worst;
}

inline double recheck_task_plan(const TaskPlan & plan, const Vector6d & p_act, const std::vector<Obstacle> & obstacles, const TaskPlanConfig & cfg)
{
  double worst = (plan.P.col(0) - p_act).lpNorm<Eigen::Infinity>();
  const ControlPointMatrix d1 = derivative_control_points(plan.P, plan.horizon, 1);
  const ControlPointMatrix d2 = derivative_control_points(plan.P, plan.horizon, 2);
  for (int j = 0; j < d1.count(); ++j) { worst = std::max({worst, d1.col(j).maxCoeff() - cfg.v_max, cfg.v_min - d1.col(j).minCoeff()}); }
  for (int j = 0; j < d2.count(); ++j) { worst = std::max({worst, d2.col(j).maxCoeff() - cfg.a_max, cfg.a_min - d2.col(j).minCoeff()}); }
  const int kk = cfg.knots - 1;
  for (const auto & o : obstacles) {
    if (!o.affects_hands()) { continue; }
    for (int i = 1; i <= kk; ++i) {
      const double tb = knot_tbar(i, kk);
      const Eigen::VectorXd p = eval(plan.P, tb);
      worst = std::max(worst, detail::exclusion_violation(0.5 * (p.head<3>() + p.tail<3>()), predicted_center(o, tb * plan.horizon, cfg.prediction), o.d_safe));
    }
  }
  return worst;
}

/// 5-point Gauss-Legendre rule on [0, t]; exact for polynomials up to degree 9.
template<class F>
Eigen::Vector2d integrate_planar(F && v, double t)
{
  static constexpr double kNodes[5]   = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
  static constexpr double kWeights[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665, 0.2369268850561891};
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int k = 0; k < 5; ++k) { acc += kWeights[k] * v(0.5 * t * (kNodes[k] + 1.0)); }
  return 0.5 * t * acc;
}

/**
 * @brief Base position/velocity consistency of one plan over the first loop.
 *
 * `held`: the velocity command held for t_loop against the plan's position
 * change. `stated`: the plan's own velocity trajectory integrated over
 * t_loop against the same position change.
 */
struct CommandConsistency
{
  double held{0.0};
  double stated{0.0};
};

inline CommandConsistency command_consistency(const WholeBodyPlan & plan, double t_loop)
{
  const ControlPointMatrix d1 = derivative_control_points(plan.Q, plan.horizon, 1);
  const double tb = t_loop / plan.horizon;
  const Eigen::Vector2d dpos = (eval(plan.Q, tb) - plan.Q.col(0)).head<2>();
  const Eigen::Vector2d v    = eval(d1, tb).head<2>();
  CommandConsistency c;
  c.held   = (t_loop * v - dpos).norm();
  c.stated = (integrate_planar([&](double s) { return Eigen::Vector2d(eval(d1, s / plan.horizon).head<2>()); }, t_loop) - dpos).norm();
  return c;
}

inline CommandConsistency command_consistency(const DiscretizedPlan & plan, double t_loop)
{
  const double dt = plan.dt();
  auto interp = [&](const Eigen::MatrixXd & m, double s) -> Eigen::Vector2d {
    const double u = s / dt;
    const int i    = std::min(static_cast<int>(u), plan.intervals() - 1);
    const double f = u - i;
    return (1.0 - f) * m.col(i).head<2>() + f * m.col(i + 1).head<2>();
  };
  const Eigen::Vector2d dpos = interp(plan.q, t_loop) - plan.q.col(0).head<2>();
  CommandConsistency c;
  c.held   = (t_loop * plan.qd.col(0).head<2>() - dpos).norm();
  c.stated = (integrate_planar([&](double s) { return interp(plan.qd, s); }, t_loop) - dpos).norm();
  return c;
}

enum class ScenarioMode { kTask, kTracking };
enum class PlannerMethod { kBezier, kDiscretized };

inline const char * to_string(PlannerMethod m) { return m == PlannerMethod::kBezier ? "bezier" : "discretized"; }

/// Sinusoidal palm reference p0 + A sin(2 pi t / period) axis with fixed orientations.
struct TrackingReference
{
  Eigen::Vector3d axis{Eigen::Vector3d::UnitX()};
  double amplitude{0.3};
  double period{8.0};
  Vector6d p0{Vector6d::Zero()};
  QuaternionPair theta{};

  Vector6d at(double t) const
  {
    const Eigen::Vector3d d = amplitude * std::sin(2.0 * M_PI * t / period) * axis.normalized();
    Vector6d p              = p0;
    p.head<3>() += d;
    p.tail<3>() += d;
    return p;
  }
  double peak_to_peak() const { return 2.0 * amplitude; }
};

struct ScenarioConfig
{
  std::string name{"scenario"};
  std::string model{"default"};
  ScenarioMode mode{ScenarioMode::kTask};
  PlannerMethod method{PlannerMethod::kBezier};
  Eigen::VectorXd q0{Eigen::VectorXd::Zero(kNumDof)};
  double t_loop{0.02};
  double time_limit{30.0};
  TaskGoal goal;
  double goal_position_tolerance{1e-2};
  double goal_orientation_tolerance{1e-2};
  std::vector<Obstacle> obstacles;
  /// Added to every obstacle's d_safe inside the planners; the monitor uses d_safe.
  double planner_margin{0.0};
  ContactObject object;
  QuinticForceReference force;
  std::vector<DisturbanceEvent> disturbances;
  TrackingReference tracking;
  TaskPlanConfig task;
  WholeBodyConfig wholebody;
  double servo_time_constant{0.05};
  double monitor_tolerance{1e-4};
  std::uint64_t seed{0};

  void validate() const
  {
    if (q0.size() != kNumDof || !q0.allFinite()) { throw ScenarioError("q0 must have 18 finite entries"); }
    if (!(t_loop > 0.0) || !(time_limit > 0.0)) { throw ScenarioError("t_loop and time_limit must be positive"); }
    if (!(goal_position_tolerance > 0.0) || !(goal_orientation_tolerance > 0.0)) { throw ScenarioError("goal tolerances must be positive"); }
    if (!(planner_margin >= 0.0)) { throw ScenarioError("planner_margin must be non-negative"); }
    if (object.enabled && (!(object.width > 0.0) || !(object.stiffness > 0.0))) { throw ScenarioError("object width and stiffness must be positive"); }
    if (std::abs(t_loop - wholebody.t_loop) > 1e-12) { throw ScenarioError("t_loop differs from the whole-body planner's t_loop"); }
    for (const auto & o : obstacles) { bmpc::validate(o); }
    validate_disturbances(disturbances, static_cast<int>(obstacles.size()));
    try {
      task.validate();
      wholebody.validate();
    } catch (const Error & e) {
      throw ScenarioError(std::string("planner configuration: ") + e.what());
    }
    if (mode == ScenarioMode::kTask) {
      if (!goal.p_goal.allFinite()) { throw ScenarioError("goal position is not finite"); }
      try {
        detail::check_goal_clearance(goal, planner_obstacles(obstacles));
      } catch (const InfeasibleError & e) {
        throw ScenarioError(e.what());
      }
    } else if (!(tracking.period > 0.0) || !(tracking.axis.norm() > 0.0)) {
      throw ScenarioError("tracking reference needs a positive period and a non-zero axis");
    }
  }

  std::vector<Obstacle> planner_obstacles(const std::vector<Obstacle> & world) const
  {
    std::vector<Obstacle> out = world;
    for (auto & o : out) { o.d_safe += planner_margin; }
    return out;
  }
};

/// One control loop of a run.
struct TraceRow
{
  double t{0.0};
  Eigen::VectorXd q, qd;
  RobotCommand cmd;
  bool cmd_held{false};
  Vector6d p_palms{Vector6d::Zero()};
  Eigen::Matrix<double, 8, 1> quat_palms{Eigen::Matrix<double, 8, 1>::Zero()};
  Vector6d p_ref{Vector6d::Zero()};
  Vector6d wrench{Vector6d::Zero()}, f_ref{Vector6d::Zero()}, f_opt{Vector6d::Zero()}, pt{Vector6d::Zero()};
  Clearance clearance;
  double task_time{0.0}, wb_time{0.0};
  bool task_converged{true}, wb_converged{false};
  int task_iterations{0}, wb_iterations{0};
  double consistency_held{std::numeric_limits<double>::quiet_NaN()};
  double consistency_stated{std::numeric_limits<double>::quiet_NaN()};
  double tracking_error{std::numeric_limits<double>::quiet_NaN()};
  double plan_violation{0.0};
};

/// Control points of the plans solved in one loop.
struct PlanRecord
{
  double t{0.0};
  std::optional<TaskPlan> task;
  Eigen::MatrixXd joint;  ///< Bezier Q or discretized q knots
};

struct RunSummary
{
  std::string outcome{"time_limit"};
  std::string message;
  int loops{0};
  double final_time{0.0};
  double min_hand_clearance{std::numeric_limits<double>::infinity()};
  double min_base_clearance{std::numeric_limits<double>::infinity()};
  double goal_position_error{std::numeric_limits<double>::quiet_NaN()};
  double goal_orientation_error{std::numeric_limits<double>::quiet_NaN()};
  double peak_force{0.0};
  double mean_tracking_error{std::numeric_limits<double>::quiet_NaN()};
  double max_consistency_held{0.0};
  double max_consistency_stated{0.0};
  double mean_task_time{0.0}, std_task_time{0.0};
  double mean_wb_time{0.0}, std_wb_time{0.0};
  int task_failures{0}, wb_failures{0};
  double max_plan_violation{0.0};
  int task_variables{0}, wb_variables{0};

  bool failed() const { return outcome == "safety_violation" || outcome == "diverged"; }
};

struct RunTrace
{
  std::vector<TraceRow> rows;
  std::vector<PlanRecord> plans;
  RunSummary summary;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double> & v)
{
  if (v.empty()) { return {0.0, 0.0}; }
  double m = 0.0;
  for (double x : v) { m += x; }
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) { s += (x - m) * (x - m); }
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

inline TaskState measured_task_state(const KinematicModel & model, const Eigen::VectorXd & q)
{
  const auto [r, l] = forward_kinematics(model, q);
  TaskState s;
  s.p << r.position, l.position;
  s.theta = {r.orientation, l.orientation};
  return s;
}

}  // namespace detail

/// Options that only affect what is recorded.
struct RunOptions
{
  bool record_plans{true};
  bool recheck_plans{true};
  bool verbose{false};  ///< report non-converged solves on stderr
};

/**
 * @brief Closed-loop run: MPC-T (task mode) -> references -> MPC-W -> commands -> step.
 *
 * A loop whose MPC-W solve does not converge holds the previous command.
 */
inline RunTrace run_closed_loop(const ScenarioConfig & sc, const RunOptions & opt = {})
{
  sc.validate();
  auto model = std::make_shared<const KinematicModel>(load_model(sc.model));
  for (int r = 0; r < kNumDof; ++r) {
    if (sc.q0[r] < model->q_min()[r] || sc.q0[r] > model->q_max()[r]) { throw ScenarioError("q0 violates the limits of joint '" + model->joint(r).name + "'"); }
  }
  using Clock = std::chrono::steady_clock;

  RunTrace trace;
  WorldState world;
  world.robot.q      = sc.q0;
  world.obstacles    = sc.obstacles;
  world.object       = sc.object;
  world.robot.wrench = contact_wrench(*model, world.robot.q, world.object, sc.disturbances, 0.0);

  WholeBodyConfig wcfg = sc.wholebody;
  const bool bezier    = sc.method == PlannerMethod::kBezier;
  trace.summary.wb_variables   = bezier ? wholebody_decision_variables(wcfg) : discretized_decision_variables(wcfg);
  trace.summary.task_variables = sc.mode == ScenarioMode::kTask ? task_decision_variables(TaskMode::kBezierPsi, sc.task) : 0;

  std::optional<TaskPlan> task_plan;
  std::optional<WholeBodyPlan> wb_plan;
  std::optional<DiscretizedPlan> disc_plan;
  RobotCommand command;
  command.upper_positions = world.robot.q.segment(group_rows(BodyGroup::kUpper).first, kNumUpperDof);

  std::vector<double> task_times, wb_times, tracking_errors;
  const int max_loops = static_cast<int>(std::ceil(sc.time_limit / sc.t_loop - 1e-9));
  RunSummary & sum    = trace.summary;

  auto goal_errors = [&](const TaskState & s) {
    const double ep = std::max((s.p.head<3>() - sc.goal.p_goal.head<3>()).norm(), (s.p.tail<3>() - sc.goal.p_goal.tail<3>()).norm());
    const double eo = std::max(quaternion_distance(s.theta.first, sc.goal.theta_goal.first), quaternion_distance(s.theta.second, sc.goal.theta_goal.second));
    return std::pair{ep, eo};
  };

  for (int loop = 0;; ++loop) {
    const double t = world.time;
    if (!world.robot.q.allFinite()) {
      sum.outcome = "diverged";
      sum.message = "non-finite robot state";
      break;
    }
    const TaskState measured = detail::measured_task_state(*model, world.robot.q);
    const std::vector<Obstacle> live = effective_obstacles(world, sc.disturbances);
    const Clearance clr = monitor_clearance(*model, world.robot.q, live);
    sum.min_hand_clearance = std::min(sum.min_hand_clearance, clr.hand_distance);
    sum.min_base_clearance = std::min(sum.min_base_clearance, clr.base_distance);
    sum.peak_force = std::max({sum.peak_force, world.robot.wrench.head<3>().norm(), world.robot.wrench.tail<3>().norm()});
    if (sc.mode == ScenarioMode::kTask) {
      const auto [ep, eo] = goal_errors(measured);
      sum.goal_position_error    = ep;
      sum.goal_orientation_error = eo;
    }
    if (std::min(clr.hand_distance, clr.base_distance) < -sc.monitor_tolerance) {
      sum.outcome = "safety_violation";
      sum.message = "clearance " + std::to_string(std::min(clr.hand_distance, clr.base_distance)) + " m below d_safe at t=" + std::to_string(t);
      break;
    }
    if (sc.mode == ScenarioMode::kTask && sum.goal_position_error <= sc.goal_position_tolerance &&
        sum.goal_orientation_error <= sc.goal_orientation_tolerance) {
      sum.outcome = "goal_reached";
      break;
    }
    if (loop >= max_loops) {
      sum.outcome = "time_limit";
      break;
    }

    TraceRow row;
    row.t          = t;
    row.q          = world.robot.q;
    row.qd         = world.robot.qd;
    row.p_palms    = measured.p;
    row.quat_palms << measured.theta.first.coeffs(), measured.theta.second.coeffs();
    row.wrench     = world.robot.wrench;
    row.clearance  = clr;
    const std::vector<Obstacle> planning = sc.planner_obstacles(live);
    PlanRecord record;
    record.t = t;

    // references at the whole-body knots
    std::vector<TaskReference> refs;
    if (sc.mode == ScenarioMode::kTask) {
      const double horizon = shrink_horizon(sc.task.initial_horizon, t, sc.task.min_horizon);
      std::optional<Vector6d> hint;
      if (task_plan) { hint = extract_reference(*task_plan, std::max(t, task_plan->t0)).psi_ref; }
      const TaskProblem tp = build_task_problem(measured, sc.goal, planning, sc.task, t, horizon, task_plan ? &*task_plan : nullptr, hint);
      const auto start     = Clock::now();
      TaskPlan solved      = solve_task_step(tp, task_plan ? &*task_plan : nullptr);
      row.task_time        = std::chrono::duration<double>(Clock::now() - start).count();
      row.task_converged   = solved.converged;
      row.task_iterations  = solved.solution.iterations;
      task_times.push_back(row.task_time);
      if (!solved.converged) {
        ++sum.task_failures;
        if (opt.verbose) { std::fprintf(stderr, "t=%.3f task solve did not converge (%s)\n", t, solved.solution.message.c_str()); }
      } else if (opt.recheck_plans) {
        row.plan_violation = std::max(row.plan_violation, recheck_task_plan(solved, measured.p, planning, sc.task));
      }
      task_plan = solved;
      refs      = knot_references(*task_plan, t, wcfg.horizon, wcfg.knots);
      if (opt.record_plans) { record.task = *task_plan; }
    } else {
      for (int i = 0; i < wcfg.knots; ++i) {
        TaskReference ref;
        ref.p_ref     = sc.tracking.at(t + knot_tbar(i, wcfg.knots - 1) * wcfg.horizon);
        ref.theta_ref = sc.tracking.theta;
        refs.push_back(ref);
      }
      const Vector6d target = sc.tracking.at(t);
      row.tracking_error    = 0.5 * ((measured.p.head<3>() - target.head<3>()).norm() + (measured.p.tail<3>() - target.tail<3>()).norm()) / sc.tracking.peak_to_peak();
      tracking_errors.push_back(row.tracking_error);
    }
    row.p_ref = refs.front().p_ref;

    WholeBodyInput in;
    in.q_act      = world.robot.q;
    in.qd_act     = world.robot.qd;
    in.references = refs;
    in.f_ref      = knot_forces(sc.force, t, wcfg.horizon, wcfg.knots);
    in.f_act      = world.robot.wrench;
    in.t0         = t;
    row.f_ref     = in.f_ref.front();

    const double yaw = world.robot.q[kBaseYawIndex];
    const auto start = Clock::now();
    bool fresh       = false;
    if (bezier) {
      const WholeBodyProblem wp = build_wholebody_problem(model, in, planning, wcfg, wb_plan ? &*wb_plan : nullptr);
      const NlpSolution sol     = solve(wp.nlp, wcfg.solver);
      row.wb_time               = std::chrono::duration<double>(Clock::now() - start).count();
      row.wb_iterations         = sol.iterations;
      row.wb_converged          = sol.converged;
      if (sol.converged) {
        wb_plan = unpack_wholebody(wp, sol);
        fresh   = true;
        if (opt.recheck_plans) { row.plan_violation = std::max(row.plan_violation, recheck_wholebody_plan(*model, *wb_plan, world.robot.q, planning, wcfg)); }
        command = extract_commands(*wb_plan, sc.t_loop, yaw);
        const auto cc          = command_consistency(*wb_plan, sc.t_loop);
        row.consistency_held   = cc.held;
        row.consistency_stated = cc.stated;
        const auto [pt, fopt]  = response_at(*wb_plan, sc.t_loop / wb_plan->horizon, world.robot.wrench, wcfg);
        row.pt                 = pt;
        row.f_opt              = fopt;
        if (opt.record_plans) { record.joint = wb_plan->Q.matrix(); }
      }
    } else {
      const DiscretizedProblem dp = build_discretized_problem(model, in, planning, wcfg, disc_plan ? &*disc_plan : nullptr);
      const NlpSolution sol       = solve(dp.nlp, wcfg.solver);
      row.wb_time                 = std::chrono::duration<double>(Clock::now() - start).count();
      row.wb_iterations           = sol.iterations;
      row.wb_converged            = sol.converged;
      if (sol.converged) {
        disc_plan = unpack_discretized(dp, sol);
        fresh     = true;
        if (opt.recheck_plans) { row.plan_violation = std::max(row.plan_violation, recheck_discretized_plan(*model, *disc_plan, world.robot.q, planning, wcfg)); }
        command = extract_commands_discretized(*disc_plan, sc.t_loop, yaw);
        const auto cc          = command_consistency(*disc_plan, sc.t_loop);
        row.consistency_held   = cc.held;
        row.consistency_stated = cc.stated;
        if (wcfg.admittance) {
          const double u = sc.t_loop / disc_plan->dt();
          row.pt         = (1.0 - u) * disc_plan->pt.col(0) + u * disc_plan->pt.col(1);
          row.f_opt      = admittance_force(row.pt, disc_plan->ptd.col(0), world.robot.wrench, wcfg.stiffness, wcfg.damping);
        }
        if (opt.record_plans) { record.joint = disc_plan->q; }
      }
    }
    wb_times.push_back(row.wb_time);
    if (!fresh) {
      ++sum.wb_failures;
      if (opt.verbose) { std::fprintf(stderr, "t=%.3f whole-body solve did not converge, holding the previous command\n", t); }
    }
    row.cmd      = command;
    row.cmd_held = !fresh;
    if (fresh) {
      sum.max_consistency_held   = std::max(sum.max_consistency_held, row.consistency_held);
      sum.max_consistency_stated = std::max(sum.max_consistency_stated, row.consistency_stated);
    }
    sum.max_plan_violation = std::max(sum.max_plan_violation, row.plan_violation);
    trace.rows.push_back(row);
    if (opt.record_plans) { trace.plans.push_back(std::move(record)); }

    world.obstacles = live;
    try {
      world = step(world, *model, command, sc.t_loop, sc.disturbances, sc.servo_time_constant);
    } catch (const DomainError & e) {
      sum.outcome = "diverged";
      sum.message = e.what();
      break;
    }
    // restore nominal velocities; overrides are re-applied while active
    for (std::size_t k = 0; k < world.obstacles.size(); ++k) { world.obstacles[k].velocity = sc.obstacles[k].velocity; }
  }

  sum.loops      = static_cast<int>(trace.rows.size());
  sum.final_time = world.time;
  std::tie(sum.mean_task_time, sum.std_task_time) = detail::mean_std(task_times);
  std::tie(sum.mean_wb_time, sum.std_wb_time)     = detail::mean_std(wb_times);
  if (!tracking_errors.empty()) { sum.mean_tracking_error = detail::mean_std(tracking_errors).first; }
  return trace;
}

}  // namespace bmpc
