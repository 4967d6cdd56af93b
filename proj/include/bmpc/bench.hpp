#pragma once

/**
 * @file
 * @brief Benchmark suites: MPC-T formulations, sine tracking, solve-time scaling.
 */

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mpc_task.hpp"
#include "simulator.hpp"

namespace bmpc {

struct BenchRow
{
  std::string label;
  std::string method;
  std::string capability;
  int knots{0};
  double horizon{0.0};
  int variables{0};
  double mean_time{0.0};
  double std_time{0.0};
  double tracking_error{std::numeric_limits<double>::quiet_NaN()};
  double unit_norm_error{std::numeric_limits<double>::quiet_NaN()};
  double consistency_held{std::numeric_limits<double>::quiet_NaN()};
  double consistency_stated{std::numeric_limits<double>::quiet_NaN()};
  double max_plan_violation{0.0};
  int violations{0};  ///< loops whose plan re-check exceeded tol_feas
  int failures{0};    ///< non-converged solves
  std::string outcome;
};

struct BenchmarkReport
{
  std::string name;
  std::vector<BenchRow> rows;
  nlohmann::json findings = nlohmann::json::object();

  const BenchRow & find(const std::string & label) const
  {
    for (const auto & r : rows) {
      if (r.label == label) { return r; }
    }
    throw DomainError("no benchmark row '" + label + "'");
  }

  nlohmann::json to_json() const
  {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["benchmark"] = name;
    j["rows"]      = nlohmann::json::array();
    for (const auto & r : rows) {
      j["rows"].push_back({{"label", r.label}, {"method", r.method}, {"capability", r.capability}, {"knots", r.knots}, {"horizon", r.horizon},
        {"decision_variables", r.variables}, {"mean_solve_time", r.mean_time}, {"std_solve_time", r.std_time},
        {"tracking_error", num(r.tracking_error)}, {"unit_norm_error", num(r.unit_norm_error)}, {"consistency_held", num(r.consistency_held)},
        {"consistency_stated", num(r.consistency_stated)}, {"max_plan_violation", r.max_plan_violation}, {"constraint_violations", r.violations},
        {"failures", r.failures}, {"outcome", r.outcome}});
    }
    j["findings"] = findings;
    return j;
  }

  std::string table() const
  {
    std::string out = name + "\n";
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-28s %6s %8s %12s %12s %10s %11s %11s %5s %5s\n", "configuration", "knots", "vars", "mean [ms]", "std [ms]",
      "track err", "cons held", "cons state", "viol", "fail");
    out += buf;
    for (const auto & r : rows) {
      std::snprintf(buf, sizeof buf, "%-28s %6d %8d %12.3f %12.3f %10.4g %11.3g %11.3g %5d %5d\n", r.label.c_str(), r.knots, r.variables, 1e3 * r.mean_time,
        1e3 * r.std_time, r.tracking_error, r.consistency_held, r.consistency_stated, r.violations, r.failures);
      out += buf;
    }
    out += findings.dump(2) + "\n";
    return out;
  }
};

/// Palm poses of the zero upper-body pose with the base at (x, y, yaw).
inline TaskGoal base_pose_goal(const KinematicModel & model, double x, double y, double yaw)
{
  Eigen::VectorXd q = Eigen::VectorXd::Zero(kNumDof);
  q << x, y, yaw, Eigen::VectorXd::Zero(kNumUpperDof);
  const auto [r, l] = forward_kinematics(model, q);
  TaskGoal g;
  g.p_goal << r.position, l.position;
  g.theta_goal = {r.orientation, l.orientation};
  return g;
}

/**
 * @brief Sine tracking along x with the palms starting at the zero pose.
 *
 * Only MPC-W runs; its knot references are read from the sine directly.
 */
inline ScenarioConfig sine_tracking_scenario(PlannerMethod method, int knots, double horizon, double duration = 8.0, double period = 8.0,
  double amplitude = 0.3)
{
  ScenarioConfig sc;
  sc.name   = "sine_tracking";
  sc.mode   = ScenarioMode::kTracking;
  sc.method = method;
  const KinematicModel model = default_model();
  const TaskGoal start       = base_pose_goal(model, 0.0, 0.0, 0.0);
  sc.tracking.p0             = start.p_goal;
  sc.tracking.theta          = start.theta_goal;
  sc.tracking.period         = period;
  sc.tracking.amplitude      = amplitude;
  sc.wholebody.knots         = knots;
  sc.wholebody.horizon       = horizon;
  sc.wholebody.admittance    = false;
  sc.time_limit              = duration;
  return sc;
}

enum class Capability { kTracking, kObstacle, kForce };

inline const char * to_string(Capability c)
{
  switch (c) {
    case Capability::kTracking: return "tracking";
    case Capability::kObstacle: return "+obstacle";
    case Capability::kForce: return "+force";
  }
  return "?";
}

/// Sine tracking with cumulative capabilities: obstacles, then obstacles and admittance with a force ramp.
inline ScenarioConfig capability_scenario(PlannerMethod method, Capability cap, int knots, double horizon, double duration)
{
  ScenarioConfig sc = sine_tracking_scenario(method, knots, horizon, duration);
  sc.name           = std::string("scaling_") + to_string(cap);
  if (cap != Capability::kTracking) {
    sc.planner_margin = 0.03;
    sc.obstacles.push_back({Eigen::Vector3d(0.75, 0.0, 0.80), Eigen::Vector3d::Zero(), 0.3, ObstacleTarget::kHands});
    sc.obstacles.push_back({Eigen::Vector3d(0.0, 0.7, 0.0), Eigen::Vector3d::Zero(), 0.4, ObstacleTarget::kBase});
  }
  if (cap == Capability::kForce) {
    sc.wholebody.admittance = true;
    sc.force.f_end << 0.0, 0.0, 10.0, 0.0, 0.0, 10.0;
    sc.force.t_start  = 0.0;
    sc.force.duration = 1.0;
  }
  return sc;
}

namespace detail {

inline BenchRow row_from_run(const std::string & label, const ScenarioConfig & sc, const RunTrace & tr)
{
  BenchRow r;
  r.label     = label;
  r.method    = to_string(sc.method);
  r.knots     = sc.wholebody.knots;
  r.horizon   = sc.wholebody.horizon;
  r.variables = tr.summary.wb_variables;
  r.mean_time = tr.summary.mean_wb_time;
  r.std_time  = tr.summary.std_wb_time;
  r.tracking_error     = tr.summary.mean_tracking_error;
  r.consistency_held   = tr.summary.max_consistency_held;
  r.consistency_stated = tr.summary.max_consistency_stated;
  r.max_plan_violation = tr.summary.max_plan_violation;
  for (const auto & row : tr.rows) { r.violations += row.plan_violation > sc.wholebody.solver.tol_feas ? 1 : 0; }
  r.failures = tr.summary.wb_failures + tr.summary.task_failures;
  r.outcome  = tr.summary.outcome;
  return r;
}

inline double coefficient_of_variation(const std::vector<double> & v)
{
  const auto [m, s] = mean_std(v);
  return m > 0.0 ? s / m : 0.0;
}

}  // namespace detail

/**
 * @brief MPC-T in three formulations on one fixed task: counts, cold solve time
 * over `repeats` solves, and unit-norm error on 1000 samples of the solution.
 */
inline BenchmarkReport bench_table1(int knots = 8, int control_points = 8, int repeats = 10)
{
  const KinematicModel model = default_model();
  TaskState state;
  {
    const TaskGoal s = base_pose_goal(model, 0.0, 0.0, 0.0);
    state.p          = s.p_goal;
    state.theta      = s.theta_goal;
  }
  const TaskGoal goal = base_pose_goal(model, 2.0, 0.3, 0.4);
  const std::vector<Obstacle> obstacles{{Eigen::Vector3d(1.3, 0.05, 0.52), Eigen::Vector3d::Zero(), 0.35, ObstacleTarget::kHands}};
  TaskPlanConfig cfg;
  cfg.knots           = knots;
  cfg.position_points = control_points;
  cfg.rotation_points = control_points;
  const double horizon = 10.0;

  BenchmarkReport rep;
  rep.name = "table1: MPC-T formulations";
  for (TaskMode mode : {TaskMode::kDiscretizedQuaternion, TaskMode::kBezierQuaternion, TaskMode::kBezierPsi}) {
    const TaskProblem tp = mode == TaskMode::kBezierPsi ? build_task_problem(state, goal, obstacles, cfg, 0.0, horizon)
                                                        : build_task_problem_quaternion(mode, state, goal, obstacles, cfg, 0.0, horizon);
    std::vector<double> times;
    NlpSolution sol;
    for (int k = 0; k < repeats; ++k) {
      sol = solve(tp.nlp, cfg.solver);
      times.push_back(sol.solve_time);
    }
    BenchRow r;
    r.label     = to_string(mode);
    r.method    = to_string(mode);
    r.knots     = knots;
    r.horizon   = horizon;
    r.variables = task_decision_variables(mode, cfg);
    std::tie(r.mean_time, r.std_time) = detail::mean_std(times);
    r.failures = sol.converged ? 0 : 1;
    r.outcome  = to_string(sol.status);
    if (mode == TaskMode::kBezierPsi) {
      r.unit_norm_error = max_unit_norm_error(solve_task_step(tp), 1000);
    } else {
      r.unit_norm_error = quaternion_formulation_norm_error(tp, sol.x, 1000);
    }
    rep.rows.push_back(r);
  }
  const double td = rep.rows[0].mean_time, tb = rep.rows[1].mean_time, tp = rep.rows[2].mean_time;
  rep.findings["counts"]               = {rep.rows[0].variables, rep.rows[1].variables, rep.rows[2].variables};
  rep.findings["ordering_psi_fastest"] = tp < tb && tp < td;
  rep.findings["ordering_psi_lt_bezier_quat_lt_discretized"] = tp < tb && tb < td;
  rep.findings["psi_unit_norm_ok"]     = rep.rows[2].unit_norm_error <= 1e-12;
  return rep;
}

/// Sine tracking in four configurations: discretized and Bezier at 6 and 26 knots.
inline BenchmarkReport bench_table2(double horizon = 5.0, double duration = 8.0)
{
  BenchmarkReport rep;
  rep.name = "table2: sine tracking";
  for (int knots : {6, 26}) {
    for (PlannerMethod m : {PlannerMethod::kDiscretized, PlannerMethod::kBezier}) {
      const ScenarioConfig sc = sine_tracking_scenario(m, knots, horizon, duration);
      RunOptions opt;
      opt.record_plans = false;
      const RunTrace tr = run_closed_loop(sc, opt);
      rep.rows.push_back(detail::row_from_run(std::string(to_string(m)) + "@" + std::to_string(knots), sc, tr));
    }
  }
  const auto & d6 = rep.find("discretized@6");
  const auto & b6 = rep.find("bezier@6");
  const auto & d26 = rep.find("discretized@26");
  const auto & b26 = rep.find("bezier@26");
  rep.findings["error_margin_6"]  = d6.tracking_error / b6.tracking_error - 1.0;
  rep.findings["error_margin_26"] = d26.tracking_error / b26.tracking_error - 1.0;
  rep.findings["discretized6_worst"] = d6.tracking_error > std::max({b6.tracking_error, d26.tracking_error, b26.tracking_error});
  rep.findings["bezier26_best"]      = b26.tracking_error < std::min({d6.tracking_error, b6.tracking_error, d26.tracking_error});
  return rep;
}

/**
 * @brief Closed-loop MPC-W solve times over horizons and cumulative capabilities, both methods at `knots` knots.
 *
 * Findings: per capability, the discretized/Bezier mean-time ratio at the
 * middle horizon, and per method the coefficient of variation of the mean
 * solve time across horizons.
 */
inline BenchmarkReport bench_scaling(std::vector<double> horizons = {1.0, 2.0, 3.0}, int knots = 26, double duration = 3.0)
{
  BenchmarkReport rep;
  rep.name = "scaling: solve time over horizon and capability";
  for (Capability cap : {Capability::kTracking, Capability::kObstacle, Capability::kForce}) {
    for (PlannerMethod m : {PlannerMethod::kBezier, PlannerMethod::kDiscretized}) {
      for (double h : horizons) {
        const ScenarioConfig sc = capability_scenario(m, cap, knots, h, duration);
        RunOptions opt;
        opt.record_plans = false;
        const RunTrace tr = run_closed_loop(sc, opt);
        char label[96];
        std::snprintf(label, sizeof label, "%s %s T=%.1f", to_string(m), to_string(cap), h);
        BenchRow row   = detail::row_from_run(label, sc, tr);
        row.capability = to_string(cap);
        rep.rows.push_back(row);
      }
    }
  }
  nlohmann::json ratio, cv;
  bool bezier_faster_all = true, bezier_more_stable_all = true;
  std::vector<double> bez_all(horizons.size(), 0.0), disc_all(horizons.size(), 0.0);
  for (Capability cap : {Capability::kTracking, Capability::kObstacle, Capability::kForce}) {
    std::vector<double> bez, disc;
    for (const auto & r : rep.rows) {
      if (r.capability != to_string(cap)) { continue; }
      (r.method == "bezier" ? bez : disc).push_back(r.mean_time);
    }
    double sb = 0.0, sd = 0.0;
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      sb += bez[k];
      sd += disc[k];
      bez_all[k] += bez[k];
      disc_all[k] += disc[k];
    }
    ratio[to_string(cap)] = sd / sb;
    bezier_faster_all     = bezier_faster_all && sb < sd;
    const double cb = detail::coefficient_of_variation(bez), cd = detail::coefficient_of_variation(disc);
    cv[to_string(cap)] = {{"bezier", cb}, {"discretized", cd}};
    bezier_more_stable_all = bezier_more_stable_all && cb < cd;
  }
  rep.findings["discretized_over_bezier_time"] = ratio;
  rep.findings["cv_across_horizons"]           = cv;
  rep.findings["cv_pooled"] = {{"bezier", detail::coefficient_of_variation(bez_all)}, {"discretized", detail::coefficient_of_variation(disc_all)}};
  rep.findings["bezier_faster_every_capability"]      = bezier_faster_all;
  rep.findings["bezier_lower_cv_every_capability"]    = bezier_more_stable_all;
  return rep;
}

}  // namespace bmpc
