#pragma once

/**
 * @file
 * @brief Run traces: per-loop CSV, plan control points CSV, JSON summary, SVG plots.
 */

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "simulator.hpp"

namespace bmpc {

namespace detail {

inline std::ofstream open_output(const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) { throw Error("cannot write '" + path.string() + "'"); }
  out << std::setprecision(10);
  return out;
}

template<class V>
void put(std::ostream & os, const V & v)
{
  for (Eigen::Index i = 0; i < v.size(); ++i) { os << ',' << v[i]; }
}

inline void labels(std::ostream & os, const std::string & prefix, std::initializer_list<const char *> names)
{
  for (const char * n : names) { os << ',' << prefix << n; }
}

}  // namespace detail

/// One row per control loop; joint columns are named after the model's joints.
inline void write_trace_csv(const RunTrace & trace, const KinematicModel & model, const std::filesystem::path & path)
{
  std::ofstream os = detail::open_output(path);
  os << "t";
  for (int r = 0; r < model.dof(); ++r) { os << ",q_" << model.joint(r).name; }
  for (int r = 0; r < model.dof(); ++r) { os << ",qd_" << model.joint(r).name; }
  for (int r = group_rows(BodyGroup::kUpper).first; r < model.dof(); ++r) { os << ",cmd_" << model.joint(r).name; }
  os << ",cmd_base_vx,cmd_base_vy,cmd_base_wz,cmd_held";
  detail::labels(os, "", {"p_r_x", "p_r_y", "p_r_z", "p_l_x", "p_l_y", "p_l_z", "q_r_w", "q_r_x", "q_r_y", "q_r_z", "q_l_w", "q_l_x", "q_l_y", "q_l_z"});
  for (const char * k : {"p_ref", "f_act", "f_ref", "f_opt", "pt"}) {
    detail::labels(os, std::string(k) + "_", {"r_x", "r_y", "r_z", "l_x", "l_y", "l_z"});
  }
  os << ",hand_clearance,base_clearance,task_time,task_converged,task_iterations,wb_time,wb_converged,wb_iterations"
     << ",consistency_held,consistency_stated,tracking_error,plan_violation\n";
  for (const auto & r : trace.rows) {
    os << r.t;
    detail::put(os, r.q);
    detail::put(os, r.qd);
    detail::put(os, r.cmd.upper_positions);
    detail::put(os, r.cmd.base_velocity_local);
    os << ',' << r.cmd_held;
    detail::put(os, r.p_palms);
    detail::put(os, r.quat_palms);
    detail::put(os, r.p_ref);
    detail::put(os, r.wrench);
    detail::put(os, r.f_ref);
    detail::put(os, r.f_opt);
    detail::put(os, r.pt);
    os << ',' << r.clearance.hand_distance << ',' << r.clearance.base_distance << ',' << r.task_time << ',' << r.task_converged << ','
       << r.task_iterations << ',' << r.wb_time << ',' << r.wb_converged << ',' << r.wb_iterations << ',' << r.consistency_held << ','
       << r.consistency_stated << ',' << r.tracking_error << ',' << r.plan_violation << '\n';
  }
}

/**
 * @brief Plan control points, row-major: one line per matrix row.
 *
 * Columns: t, plan (task_P, task_Psi, joint), row label, horizon, then the
 * row's entries, one per control point (or knot for a discretized plan).
 */
inline void write_plans_csv(const RunTrace & trace, const KinematicModel & model, const std::filesystem::path & path)
{
  std::ofstream os = detail::open_output(path);
  os << "t,plan,row,horizon,values...\n";
  static const char * kPalmRows[6] = {"r_x", "r_y", "r_z", "l_x", "l_y", "l_z"};
  static const char * kPsiRows[6]  = {"r_alpha", "r_beta", "r_gamma", "l_alpha", "l_beta", "l_gamma"};
  for (const auto & rec : trace.plans) {
    if (rec.task) {
      for (int r = 0; r < 6; ++r) {
        os << rec.t << ",task_P," << kPalmRows[r] << ',' << rec.task->horizon;
        detail::put(os, Eigen::VectorXd(rec.task->P.matrix().row(r).transpose()));
        os << '\n';
      }
      for (int r = 0; r < 6; ++r) {
        os << rec.t << ",task_Psi," << kPsiRows[r] << ',' << rec.task->horizon;
        detail::put(os, Eigen::VectorXd(rec.task->Psi.matrix().row(r).transpose()));
        os << '\n';
      }
    }
    for (int r = 0; r < rec.joint.rows(); ++r) {
      os << rec.t << ",joint," << model.joint(r).name << ',' << std::numeric_limits<double>::quiet_NaN();
      detail::put(os, Eigen::VectorXd(rec.joint.row(r).transpose()));
      os << '\n';
    }
  }
}

inline nlohmann::json summary_json(const RunTrace & trace, const ScenarioConfig & sc)
{
  const RunSummary & s = trace.summary;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["scenario"]  = sc.name;
  j["method"]    = to_string(sc.method);
  j["mode"]      = sc.mode == ScenarioMode::kTask ? "task" : "tracking";
  j["seed"]      = sc.seed;
  j["outcome"]   = s.outcome;
  j["message"]   = s.message;
  j["loops"]     = s.loops;
  j["final_time"] = s.final_time;
  j["decision_variables"] = {{"task", s.task_variables}, {"wholebody", s.wb_variables}};
  j["metrics"] = {
    {"min_hand_clearance", num(s.min_hand_clearance)},
    {"min_base_clearance", num(s.min_base_clearance)},
    {"goal_position_error", num(s.goal_position_error)},
    {"goal_orientation_error", num(s.goal_orientation_error)},
    {"peak_force", s.peak_force},
    {"mean_tracking_error", num(s.mean_tracking_error)},
    {"max_consistency_held", s.max_consistency_held},
    {"max_consistency_stated", s.max_consistency_stated},
    {"max_plan_violation", s.max_plan_violation},
    {"task_solve_time", {{"mean", s.mean_task_time}, {"std", s.std_task_time}, {"failures", s.task_failures}}},
    {"wholebody_solve_time", {{"mean", s.mean_wb_time}, {"std", s.std_wb_time}, {"failures", s.wb_failures}}},
  };
  return j;
}

namespace detail {

/// Affine map from data coordinates to an SVG viewport with margins.
struct SvgFrame
{
  double x0, x1, y0, y1;
  double width{640.0}, height{480.0}, margin{50.0};

  double sx(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin); }
  double sy(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin); }
  double scale() const { return (width - 2.0 * margin) / (x1 - x0); }
};

inline std::string polyline(const SvgFrame & f, const std::vector<Eigen::Vector2d> & pts, const std::string & color, double w = 1.5,
  const std::string & extra = "")
{
  std::ostringstream os;
  os << std::setprecision(6) << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << w << "\" " << extra << " points=\"";
  for (const auto & p : pts) { os << f.sx(p.x()) << ',' << f.sy(p.y()) << ' '; }
  os << "\"/>\n";
  return os.str();
}

inline void svg_axes(std::ostream & os, const SvgFrame & f, const std::string & title, const std::string & xl, const std::string & yl)
{
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<rect x=\"" << f.margin << "\" y=\"" << f.margin << "\" width=\"" << f.width - 2 * f.margin << "\" height=\"" << f.height - 2 * f.margin
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"" << f.height - 12 << "\" text-anchor=\"middle\" font-size=\"12\">" << xl << "</text>\n"
     << "<text x=\"14\" y=\"" << f.height / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << f.height / 2 << ")\" text-anchor=\"middle\">" << yl
     << "</text>\n";
  os << std::setprecision(4);
  for (int k = 0; k <= 4; ++k) {
    const double x = f.x0 + k * (f.x1 - f.x0) / 4.0, y = f.y0 + k * (f.y1 - f.y0) / 4.0;
    os << "<text x=\"" << f.sx(x) << "\" y=\"" << f.height - f.margin + 15 << "\" text-anchor=\"middle\" font-size=\"10\">" << x << "</text>\n";
    os << "<text x=\"" << f.margin - 5 << "\" y=\"" << f.sy(y) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << y << "</text>\n";
  }
}

inline SvgFrame fit_frame(const std::vector<Eigen::Vector2d> & pts, bool equal_aspect)
{
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto & p : pts) {
    if (!p.allFinite()) { continue; }
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  if (!lo.allFinite()) { lo.setZero(), hi.setOnes(); }
  Eigen::Vector2d span = (hi - lo).cwiseMax(1e-3);
  if (equal_aspect) {
    const double s = std::max(span.x() / 540.0, span.y() / 380.0);
    const Eigen::Vector2d c = 0.5 * (lo + hi);
    lo = c - Eigen::Vector2d(270.0, 190.0) * s;
    hi = c + Eigen::Vector2d(270.0, 190.0) * s;
    span = hi - lo;
  }
  lo -= 0.05 * span;
  hi += 0.05 * span;
  return {lo.x(), hi.x(), lo.y(), hi.y()};
}

}  // namespace detail

/**
 * @brief Top view (x-y) of the palm paths: executed (solid) and planned by MPC-T (dashed, every `stride` loops),
 * with obstacle d_safe circles at their first and last recorded positions.
 */
inline void write_paths_svg(const RunTrace & trace, const ScenarioConfig & sc, const std::filesystem::path & path, int stride = 50)
{
  std::vector<Eigen::Vector2d> right, left, mid, base, all;
  for (const auto & r : trace.rows) {
    right.emplace_back(r.p_palms[0], r.p_palms[1]);
    left.emplace_back(r.p_palms[3], r.p_palms[4]);
    mid.push_back(0.5 * (right.back() + left.back()));
    base.emplace_back(r.q[0], r.q[1]);
  }
  std::vector<std::vector<Eigen::Vector2d>> planned;
  for (std::size_t k = 0; k < trace.plans.size(); k += static_cast<std::size_t>(std::max(1, stride))) {
    if (!trace.plans[k].task) { continue; }
    std::vector<Eigen::Vector2d> pts;
    for (int s = 0; s <= 40; ++s) {
      const Eigen::VectorXd p = eval(trace.plans[k].task->P, s / 40.0);
      pts.emplace_back(0.5 * (p[0] + p[3]), 0.5 * (p[1] + p[4]));
    }
    planned.push_back(pts);
  }
  all.insert(all.end(), right.begin(), right.end());
  all.insert(all.end(), left.begin(), left.end());
  all.insert(all.end(), base.begin(), base.end());
  for (const auto & pl : planned) { all.insert(all.end(), pl.begin(), pl.end()); }
  const double t_end = trace.rows.empty() ? 0.0 : trace.rows.back().t;
  for (const auto & o : sc.obstacles) {
    for (const Eigen::Vector3d & c : {o.center, o.center_after(t_end)}) {
      all.emplace_back(c.x() - o.d_safe, c.y() - o.d_safe);
      all.emplace_back(c.x() + o.d_safe, c.y() + o.d_safe);
    }
  }
  if (sc.mode == ScenarioMode::kTask) {
    all.emplace_back(sc.goal.p_goal[0], sc.goal.p_goal[1]);
    all.emplace_back(sc.goal.p_goal[3], sc.goal.p_goal[4]);
  }
  const detail::SvgFrame f = detail::fit_frame(all, true);
  std::ofstream os = detail::open_output(path);
  detail::svg_axes(os, f, sc.name + ": end-effector paths (top view)", "x [m]", "y [m]");
  for (const auto & o : sc.obstacles) {
    const bool moving = o.velocity.norm() > 0.0;
    os << "<circle cx=\"" << f.sx(o.center.x()) << "\" cy=\"" << f.sy(o.center.y()) << "\" r=\"" << o.d_safe * f.scale()
       << "\" fill=\"#f4a6a6\" fill-opacity=\"0.4\" stroke=\"#c33\"/>\n";
    if (moving) {
      const Eigen::Vector3d c = o.center_after(t_end);
      os << "<circle cx=\"" << f.sx(c.x()) << "\" cy=\"" << f.sy(c.y()) << "\" r=\"" << o.d_safe * f.scale()
         << "\" fill=\"none\" stroke=\"#c33\" stroke-dasharray=\"4 3\"/>\n";
    }
  }
  for (const auto & pl : planned) { os << detail::polyline(f, pl, "#999", 1.0, "stroke-dasharray=\"5 4\""); }
  os << detail::polyline(f, base, "#7a5", 1.5) << detail::polyline(f, right, "#36c", 2.0) << detail::polyline(f, left, "#c63", 2.0)
     << detail::polyline(f, mid, "black", 1.0);
  if (sc.mode == ScenarioMode::kTask) {
    for (int arm = 0; arm < 2; ++arm) {
      os << "<circle cx=\"" << f.sx(sc.goal.p_goal[3 * arm]) << "\" cy=\"" << f.sy(sc.goal.p_goal[3 * arm + 1]) << "\" r=\"4\" fill=\"green\"/>\n";
    }
  }
  os << "<text x=\"60\" y=\"70\" font-size=\"11\" fill=\"#36c\">right palm</text>\n"
     << "<text x=\"60\" y=\"84\" font-size=\"11\" fill=\"#c63\">left palm</text>\n"
     << "<text x=\"60\" y=\"98\" font-size=\"11\">palm midpoint</text>\n"
     << "<text x=\"60\" y=\"112\" font-size=\"11\" fill=\"#7a5\">base</text>\n"
     << "<text x=\"60\" y=\"126\" font-size=\"11\" fill=\"#999\">planned midpoint</text>\n</svg>\n";
}

/// Palm-normal force (z in the palm frame) over time: measured, reference and admittance force.
inline void write_forces_svg(const RunTrace & trace, const ScenarioConfig & sc, const std::filesystem::path & path)
{
  std::vector<Eigen::Vector2d> series[6], all;
  for (const auto & r : trace.rows) {
    series[0].emplace_back(r.t, r.wrench[2]);
    series[1].emplace_back(r.t, r.wrench[5]);
    series[2].emplace_back(r.t, r.f_ref[2]);
    series[3].emplace_back(r.t, r.f_ref[5]);
    series[4].emplace_back(r.t, r.f_opt[2]);
    series[5].emplace_back(r.t, r.f_opt[5]);
  }
  for (const auto & s : series) { all.insert(all.end(), s.begin(), s.end()); }
  all.emplace_back(0.0, 0.0);
  const detail::SvgFrame f = detail::fit_frame(all, false);
  std::ofstream os = detail::open_output(path);
  detail::svg_axes(os, f, sc.name + ": normal force tracking", "t [s]", "force [N]");
  const char * colors[6] = {"#36c", "#c63", "#36c", "#c63", "#9bd", "#eb9"};
  const char * dash[6]   = {"", "", "stroke-dasharray=\"6 4\"", "stroke-dasharray=\"6 4\"", "", ""};
  for (int k : {4, 5, 2, 3, 0, 1}) { os << detail::polyline(f, series[k], colors[k], k < 2 ? 2.0 : 1.2, dash[k]); }
  os << "<text x=\"60\" y=\"70\" font-size=\"11\" fill=\"#36c\">right: measured (solid), reference (dashed)</text>\n"
     << "<text x=\"60\" y=\"84\" font-size=\"11\" fill=\"#c63\">left: measured (solid), reference (dashed)</text>\n"
     << "<text x=\"60\" y=\"98\" font-size=\"11\" fill=\"#888\">light: admittance force F_opt</text>\n</svg>\n";
}

/// Trace CSV, plans CSV, summary JSON and (optionally) both plots into `dir`.
inline void write_run_outputs(const RunTrace & trace, const ScenarioConfig & sc, const KinematicModel & model, const std::filesystem::path & dir,
  bool plots = true)
{
  std::filesystem::create_directories(dir);
  write_trace_csv(trace, model, dir / "trace.csv");
  write_plans_csv(trace, model, dir / "plans.csv");
  std::ofstream js = detail::open_output(dir / "summary.json");
  js << summary_json(trace, sc).dump(2) << '\n';
  if (plots) {
    write_paths_svg(trace, sc, dir / "paths.svg");
    write_forces_svg(trace, sc, dir / "forces.svg");
  }
}

}  // namespace bmpc
