#pragma once

/**
 * @file
 * @brief Scenario files (JSON). Unknown keys are rejected so typos surface.
 */

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "simulator.hpp"

namespace bmpc {

using Json = nlohmann::json;

namespace detail {

inline void check_keys(const Json & j, const std::string & where, std::initializer_list<const char *> allowed)
{
  if (!j.is_object()) { throw ScenarioError(where + " must be an object"); }
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto & [k, v] : j.items()) {
    if (!ok.count(k)) { throw ScenarioError("unknown key '" + k + "' in " + where); }
  }
}

inline Eigen::VectorXd read_vector(const Json & j, const std::string & key, int size)
{
  if (!j.is_array() || static_cast<int>(j.size()) != size) { throw ScenarioError("'" + key + "' must be an array of " + std::to_string(size) + " numbers"); }
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) { throw ScenarioError("'" + key + "' must contain numbers"); }
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

inline double read_number(const Json & j, const std::string & key)
{
  if (!j.is_number()) { throw ScenarioError("'" + key + "' must be a number"); }
  return j.get<double>();
}

/// Scalar broadcast to all six entries, or an array of six.
inline Vector6d read_six(const Json & j, const std::string & key)
{
  if (j.is_number()) { return Vector6d::Constant(j.get<double>()); }
  return read_vector(j, key, 6);
}

template<class T>
void maybe(const Json & j, const char * key, T & out)
{
  if (!j.contains(key)) { return; }
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw ScenarioError(std::string("'") + key + "' has the wrong type");
  }
}

inline ObstaclePrediction read_prediction(const Json & j)
{
  const std::string s = j.get<std::string>();
  if (s == "hold") { return ObstaclePrediction::kHold; }
  if (s == "constant_velocity") { return ObstaclePrediction::kConstantVelocity; }
  throw ScenarioError("unknown prediction '" + s + "'");
}

inline void read_solver(const Json & j, SolverOptions & s)
{
  check_keys(j, "solver", {"tol_kkt", "tol_feas", "max_outer", "max_inner", "rho0", "constraint_curvature"});
  maybe(j, "tol_kkt", s.tol_kkt);
  maybe(j, "tol_feas", s.tol_feas);
  maybe(j, "max_outer", s.max_outer);
  maybe(j, "max_inner", s.max_inner);
  maybe(j, "rho0", s.rho0);
  maybe(j, "constraint_curvature", s.constraint_curvature);
}

inline void read_task_config(const Json & j, TaskPlanConfig & c)
{
  check_keys(j, "mpc_task", {"position_points", "rotation_points", "knots", "initial_horizon", "min_horizon", "w_x", "w_y", "w_pdot", "w_psidot",
                              "w_pddot", "w_psiddot", "v_min", "v_max", "a_min", "a_max", "prediction", "solver"});
  maybe(j, "position_points", c.position_points);
  maybe(j, "rotation_points", c.rotation_points);
  maybe(j, "knots", c.knots);
  maybe(j, "initial_horizon", c.initial_horizon);
  maybe(j, "min_horizon", c.min_horizon);
  maybe(j, "w_x", c.w_x);
  maybe(j, "w_y", c.w_y);
  maybe(j, "w_pdot", c.w_pdot);
  maybe(j, "w_psidot", c.w_psidot);
  maybe(j, "w_pddot", c.w_pddot);
  maybe(j, "w_psiddot", c.w_psiddot);
  maybe(j, "v_min", c.v_min);
  maybe(j, "v_max", c.v_max);
  maybe(j, "a_min", c.a_min);
  maybe(j, "a_max", c.a_max);
  if (j.contains("prediction")) { c.prediction = read_prediction(j["prediction"]); }
  if (j.contains("solver")) { read_solver(j["solver"], c.solver); }
}

inline void read_wholebody_config(const Json & j, WholeBodyConfig & c)
{
  check_keys(j, "mpc_wholebody", {"joint_points", "response_points", "knots", "horizon", "w_p", "w_theta", "w_f", "w_u", "w_pt_vel", "w_q_vel",
                                   "w_pt_acc", "w_q_acc", "stiffness", "damping", "admittance", "constrain_initial_velocity", "base_accel_limit",
                                   "prediction", "solver"});
  maybe(j, "joint_points", c.joint_points);
  maybe(j, "response_points", c.response_points);
  maybe(j, "knots", c.knots);
  maybe(j, "horizon", c.horizon);
  maybe(j, "w_p", c.w_p);
  maybe(j, "w_theta", c.w_theta);
  maybe(j, "w_f", c.w_f);
  maybe(j, "w_u", c.w_u);
  maybe(j, "w_pt_vel", c.w_pt_vel);
  maybe(j, "w_q_vel", c.w_q_vel);
  maybe(j, "w_pt_acc", c.w_pt_acc);
  maybe(j, "w_q_acc", c.w_q_acc);
  if (j.contains("stiffness")) { c.stiffness = read_six(j["stiffness"], "stiffness"); }
  if (j.contains("damping")) { c.damping = read_six(j["damping"], "damping"); }
  maybe(j, "admittance", c.admittance);
  maybe(j, "constrain_initial_velocity", c.constrain_initial_velocity);
  maybe(j, "base_accel_limit", c.base_accel_limit);
  if (j.contains("prediction")) { c.prediction = read_prediction(j["prediction"]); }
  if (j.contains("solver")) { read_solver(j["solver"], c.solver); }
}

/// Palm poses of a configuration with the given base pose and upper body.
inline TaskGoal goal_from_configuration(const KinematicModel & model, const Eigen::VectorXd & q)
{
  const auto [r, l] = forward_kinematics(model, q);
  TaskGoal g;
  g.p_goal << r.position, l.position;
  g.theta_goal = {r.orientation, l.orientation};
  return g;
}


inline ScenarioConfig scenario_from_json(const Json & j)
{
  detail::check_keys(j, "scenario", {"name", "model", "mode", "method", "seed", "t_loop", "time_limit", "q0", "goal", "goal_tolerance", "obstacles",
                                      "planner_margin", "object", "force_reference", "disturbances", "tracking", "mpc_task", "mpc_wholebody",
                                      "servo_time_constant", "monitor_tolerance"});
  ScenarioConfig sc;
  detail::maybe(j, "name", sc.name);
  detail::maybe(j, "model", sc.model);
  if (j.contains("mode")) {
    const std::string m = j["mode"].get<std::string>();
    if (m == "task") {
      sc.mode = ScenarioMode::kTask;
    } else if (m == "tracking") {
      sc.mode = ScenarioMode::kTracking;
    } else {
      throw ScenarioError("mode must be 'task' or 'tracking'");
    }
  }
  if (j.contains("method")) {
    const std::string m = j["method"].get<std::string>();
    if (m == "bezier") {
      sc.method = PlannerMethod::kBezier;
    } else if (m == "discretized") {
      sc.method = PlannerMethod::kDiscretized;
    } else {
      throw ScenarioError("method must be 'bezier' or 'discretized'");
    }
  }
  detail::maybe(j, "seed", sc.seed);
  detail::maybe(j, "t_loop", sc.t_loop);
  detail::maybe(j, "time_limit", sc.time_limit);
  detail::maybe(j, "planner_margin", sc.planner_margin);
  detail::maybe(j, "servo_time_constant", sc.servo_time_constant);
  detail::maybe(j, "monitor_tolerance", sc.monitor_tolerance);
  if (j.contains("q0")) { sc.q0 = detail::read_vector(j["q0"], "q0", kNumDof); }

  KinematicModel model = [&] {
    try {
      return load_model(sc.model);
    } catch (const Error & e) {
      throw ScenarioError("cannot load model '" + sc.model + "': " + e.what());
    }
  }();

  if (j.contains("mpc_task")) { detail::read_task_config(j["mpc_task"], sc.task); }
  if (j.contains("mpc_wholebody")) { detail::read_wholebody_config(j["mpc_wholebody"], sc.wholebody); }
  sc.wholebody.t_loop = sc.t_loop;

  if (j.contains("obstacles")) {
    if (!j["obstacles"].is_array()) { throw ScenarioError("'obstacles' must be an array"); }
    for (const auto & o : j["obstacles"]) {
      detail::check_keys(o, "obstacle", {"center", "velocity", "d_safe", "target"});
      Obstacle ob;
      ob.center = detail::read_vector(o.at("center"), "center", 3);
      if (o.contains("velocity")) { ob.velocity = detail::read_vector(o["velocity"], "velocity", 3); }
      if (o.contains("d_safe")) { ob.d_safe = detail::read_number(o["d_safe"], "d_safe"); }
      if (o.contains("target")) { ob.target = parse_obstacle_target(o["target"].get<std::string>()); }
      sc.obstacles.push_back(ob);
    }
  }

  if (j.contains("object")) {
    const Json & o = j["object"];
    detail::check_keys(o, "object", {"center", "yaw", "width", "half_length", "half_height", "stiffness"});
    sc.object.enabled = true;
    sc.object.center  = detail::read_vector(o.at("center"), "center", 3);
    detail::maybe(o, "yaw", sc.object.yaw);
    detail::maybe(o, "width", sc.object.width);
    detail::maybe(o, "half_length", sc.object.half_length);
    detail::maybe(o, "half_height", sc.object.half_height);
    detail::maybe(o, "stiffness", sc.object.stiffness);
  }

  if (j.contains("force_reference")) {
    const Json & f = j["force_reference"];
    detail::check_keys(f, "force_reference", {"start", "end", "t_start", "duration"});
    if (f.contains("start")) { sc.force.f_start = detail::read_six(f["start"], "start"); }
    if (f.contains("end")) { sc.force.f_end = detail::read_six(f["end"], "end"); }
    detail::maybe(f, "t_start", sc.force.t_start);
    detail::maybe(f, "duration", sc.force.duration);
  }

  if (j.contains("disturbances")) {
    for (const auto & d : j["disturbances"]) {
      detail::check_keys(d, "disturbance", {"start", "duration", "target", "obstacle", "force", "velocity"});
      DisturbanceEvent e;
      e.start    = detail::read_number(d.at("start"), "start");
      e.duration = detail::read_number(d.at("duration"), "duration");
      const std::string target = d.at("target").get<std::string>();
      if (target == "right_palm") {
        e.target = DisturbanceTarget::kRightPalm;
      } else if (target == "left_palm") {
        e.target = DisturbanceTarget::kLeftPalm;
      } else if (target == "obstacle") {
        e.target = DisturbanceTarget::kObstacle;
      } else {
        throw ScenarioError("unknown disturbance target '" + target + "'");
      }
      detail::maybe(d, "obstacle", e.obstacle);
      if (d.contains("force")) { e.force = detail::read_vector(d["force"], "force", 3); }
      if (d.contains("velocity")) { e.velocity = Eigen::Vector3d(detail::read_vector(d["velocity"], "velocity", 3)); }
      sc.disturbances.push_back(e);
    }
  }

  const TaskGoal start = detail::goal_from_configuration(model, sc.q0);
  if (j.contains("tracking")) {
    const Json & t = j["tracking"];
    detail::check_keys(t, "tracking", {"axis", "amplitude", "period"});
    if (t.contains("axis")) { sc.tracking.axis = detail::read_vector(t["axis"], "axis", 3); }
    detail::maybe(t, "amplitude", sc.tracking.amplitude);
    detail::maybe(t, "period", sc.tracking.period);
  }
  sc.tracking.p0    = start.p_goal;
  sc.tracking.theta = start.theta_goal;

  if (j.contains("goal")) {
    const Json & g = j["goal"];
    detail::check_keys(g, "goal", {"positions", "quaternions", "base_pose", "upper", "grasp"});
    if (g.contains("positions")) {
      sc.goal.p_goal = detail::read_vector(g["positions"], "positions", 6);
      if (!g.contains("quaternions") || !g["quaternions"].is_array() || g["quaternions"].size() != 2) {
        throw ScenarioError("goal positions need two goal quaternions");
      }
      auto quat = [&](std::size_t k) {
        const Eigen::VectorXd c = detail::read_vector(g["quaternions"][k], "quaternions", 4);
        try {
          return UnitQuaternion::normalized({c[0], c[1], c[2], c[3]});
        } catch (const DomainError & e) {
          throw ScenarioError(std::string("goal quaternion: ") + e.what());
        }
      };
      sc.goal.theta_goal = {quat(0), quat(1)};
    } else if (g.contains("base_pose")) {
      Eigen::VectorXd q = Eigen::VectorXd::Zero(kNumDof);
      q.head<3>()       = detail::read_vector(g["base_pose"], "base_pose", 3);
      if (g.contains("upper")) { q.tail<kNumUpperDof>() = detail::read_vector(g["upper"], "upper", kNumUpperDof); }
      sc.goal = detail::goal_from_configuration(model, q);
    } else if (g.contains("grasp")) {
      if (!sc.object.enabled) { throw ScenarioError("a grasp goal needs an object"); }
      const Json & gr = g["grasp"];
      detail::check_keys(gr, "grasp", {"squeeze"});
      double squeeze = 0.0;
      detail::maybe(gr, "squeeze", squeeze);
      Eigen::VectorXd q = Eigen::VectorXd::Zero(kNumDof);
      q[kBaseYawIndex]  = sc.object.yaw;
      const TaskGoal facing = detail::goal_from_configuration(model, q);
      const Eigen::Vector3d ny      = sc.object.rotation().col(1);
      const double half             = 0.5 * sc.object.width - squeeze;
      sc.goal.p_goal << sc.object.center - half * ny, sc.object.center + half * ny;
      sc.goal.theta_goal = facing.theta_goal;
    } else {
      throw ScenarioError("goal needs 'positions', 'base_pose' or 'grasp'");
    }
  } else {
    sc.goal = start;
  }
  if (j.contains("goal_tolerance")) {
    const Json & t = j["goal_tolerance"];
    detail::check_keys(t, "goal_tolerance", {"position", "orientation"});
    detail::maybe(t, "position", sc.goal_position_tolerance);
    detail::maybe(t, "orientation", sc.goal_orientation_tolerance);
  }
  if (sc.mode == ScenarioMode::kTask && !j.contains("goal")) { throw ScenarioError("a task scenario needs a goal"); }
  sc.validate();
  return sc;
}

}  // namespace detail

/**
 * @brief Parse a scenario from JSON text.
 *
 * Goals are given as palm poses ("positions" + "quaternions"), as a base
 * pose with the upper body at zero ("base_pose"), or relative to the object
 * ("grasp": palms on the object faces, pushed `squeeze` metres inside).
 */
inline ScenarioConfig parse_scenario(const std::string & text, const std::filesystem::path & base_dir = {})
{
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error & e) {
    throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
  }
  try {
    // relative model paths are taken relative to the scenario file
    if (!base_dir.empty() && j.is_object() && j.contains("model") && j["model"].is_string()) {
      const std::string m = j["model"].get<std::string>();
      if (!m.empty() && m != "default" && m != "eva_like" && std::filesystem::path(m).is_relative()) {
        j["model"] = (base_dir / m).lexically_normal().string();
      }
    }
    return detail::scenario_from_json(j);
  } catch (const nlohmann::json::exception & e) {
    throw ScenarioError(std::string("malformed scenario: ") + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw ScenarioError("cannot open scenario '" + path + "'"); }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), std::filesystem::path(path).parent_path());
}

}  // namespace bmpc
