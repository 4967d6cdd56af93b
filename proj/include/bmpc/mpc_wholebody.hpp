#pragma once

/**
 * @file
 * @brief Whole-body planner (MPC-W) with predictive admittance.
 *
 * Decision vector: vec(Q) followed by vec(Pt), Q the 18 x (Nq+1) joint
 * control points and Pt the 6 x (Np+1) motion-response control points
 * (right palm xyz, left palm xyz, expressed in the palm frames).
 *
 * The upper body is position controlled and the base velocity controlled;
 * both commands are read from the same joint curve at t_loop.
 */

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bezier.hpp"
#include "mpc_task.hpp"
#include "nlp.hpp"
#include "obstacle.hpp"
#include "robot_model.hpp"
#include "rotation.hpp"

namespace bmpc {

inline SolverOptions wholebody_solver_defaults()
{
  SolverOptions o;
  o.rho0 = 1e4;
  return o;
}

struct WholeBodyConfig
{
  int joint_points{6};     ///< N_q + 1
  int response_points{6};  ///< N_pt + 1
  int knots{6};            ///< K + 1
  double horizon{2.0};
  double w_p{50.0}, w_theta{20.0}, w_f{0.05}, w_u{0.5};
  double w_pt_vel{0.1}, w_q_vel{0.1}, w_pt_acc{0.1}, w_q_acc{0.1};
  Vector6d stiffness{Vector6d::Constant(300.0)};
  Vector6d damping{Vector6d::Constant(40.0)};
  double t_loop{0.02};
  bool admittance{true};
  /// Adds Q'(0) = qdot_act; off by default.
  bool constrain_initial_velocity{false};
  /// Fixes every joint control point at q_act (clamped-pose force tests).
  bool lock_joints{false};
  /// Bound on the planar base acceleration per axis, m/s^2; <= 0 disables.
  double base_accel_limit{0.3};
  ObstaclePrediction prediction{ObstaclePrediction::kHold};
  /// Starts the penalty near the scale of the tracking Hessian.
  SolverOptions solver{wholebody_solver_defaults()};

  void validate() const
  {
    if (joint_points < 3 || response_points < 3 || knots < 2) { throw DomainError("whole-body planner needs >= 3 control points and >= 2 knots"); }
    if (joint_points - 1 > kMaxBezierDegree || response_points - 1 > kMaxBezierDegree) { throw DomainError("whole-body planner degree too high"); }
    if (!(horizon > 0.0) || !(t_loop > 0.0) || !(t_loop < horizon)) { throw DomainError("need 0 < t_loop < horizon"); }
    if ((stiffness.array() <= 0.0).any() || (damping.array() <= 0.0).any()) { throw DomainError("stiffness and damping must be positive"); }
    for (double w : {w_p, w_theta, w_f, w_u, w_pt_vel, w_q_vel, w_pt_acc, w_q_acc}) {
      if (!(w >= 0.0)) { throw DomainError("weights must be non-negative"); }
    }
  }
};

/// Bezier count (Nq+1) n_dof, plus 6 (Npt+1) with admittance.
inline int wholebody_decision_variables(const WholeBodyConfig & cfg)
{
  return cfg.joint_points * kNumDof + (cfg.admittance ? 6 * cfg.response_points : 0);
}

/// F_act + K pt + D ptdot
inline Vector6d admittance_force(const Vector6d & pt, const Vector6d & pt_dot, const Vector6d & f_act, const Vector6d & stiffness, const Vector6d & damping)
{
  return f_act + stiffness.cwiseProduct(pt) + damping.cwiseProduct(pt_dot);
}

/**
 * @brief Quintic (minimum-jerk) ramp from f_start to f_end over [t_start, t_start + duration].
 */
struct QuinticForceReference
{
  Vector6d f_start{Vector6d::Zero()};
  Vector6d f_end{Vector6d::Zero()};
  double t_start{0.0};
  double duration{1.0};

  Vector6d at(double t) const
  {
    const double tau = duration > 0.0 ? std::clamp((t - t_start) / duration, 0.0, 1.0) : (t >= t_start ? 1.0 : 0.0);
    const double s   = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
    return f_start + s * (f_end - f_start);
  }
};

/// Everything MPC-W reads from the current loop.
struct WholeBodyInput
{
  Eigen::VectorXd q_act;
  Eigen::VectorXd qd_act;
  std::vector<TaskReference> references;  ///< one per knot, at t0 + tbar_i T
  std::vector<Vector6d> f_ref;            ///< one per knot
  Vector6d f_act{Vector6d::Zero()};
  double t0{0.0};
};

struct WholeBodyPlan
{
  ControlPointMatrix Q;
  std::optional<ControlPointMatrix> Pt;
  double horizon{2.0};
  double t0{0.0};
  bool converged{false};
  NlpSolution solution;

  BezierCurve joint_curve() const { return {Q, horizon, t0}; }
};

struct WholeBodyProblem
{
  NlpProblem nlp;
  WholeBodyConfig cfg;
  double t0{0.0};
  int midpoint_obstacle_rows{0};
  int base_obstacle_rows{0};
};

namespace detail {

/// Tracking residuals of one knot: f_p(q) - p_ref - R(q) pt (6 rows), then 8 sign-aligned quaternion rows.
struct TrackingResidual
{
  std::shared_ptr<const KinematicModel> model;
  Vector6d p_ref;
  Quat<double> q_ref_r, q_ref_l;
  bool with_response{true};

  template<class T>
  void operator()(std::span<const T> z, std::span<T> out) const
  {
    const auto [r, l] = palm_poses<T>(*model, z.subspan(0, kNumDof));
    Vec3<T> pr = r.p, pl = l.p;
    if (with_response) {
      pr = pr - rotate(r.q, Vec3<T>{z[18], z[19], z[20]});
      pl = pl - rotate(l.q, Vec3<T>{z[21], z[22], z[23]});
    }
    out[0] = pr.x - p_ref[0];
    out[1] = pr.y - p_ref[1];
    out[2] = pr.z - p_ref[2];
    out[3] = pl.x - p_ref[3];
    out[4] = pl.y - p_ref[4];
    out[5] = pl.z - p_ref[5];
    const Quat<T> dr = sign_aligned_difference(r.q, q_ref_r);
    const Quat<T> dl = sign_aligned_difference(l.q, q_ref_l);
    out[6]  = dr.w;
    out[7]  = dr.x;
    out[8]  = dr.y;
    out[9]  = dr.z;
    out[10] = dl.w;
    out[11] = dl.x;
    out[12] = dl.y;
    out[13] = dl.z;
  }
};

/// Midpoint clearance of the palms at one configuration.
struct MidpointClearance
{
  std::shared_ptr<const KinematicModel> model;
  Eigen::Vector3d center;
  double d_safe;

  template<class T>
  void operator()(std::span<const T> z, std::span<T> out) const
  {
    const auto [r, l] = palm_poses<T>(*model, z);
    const Vec3<T> m   = midpoint(r.p, l.p);
    const T dx = m.x - center.x(), dy = m.y - center.y(), dz = m.z - center.z();
    out[0] = (T(d_safe * d_safe) - dx * dx - dy * dy - dz * dz) * (0.5 / d_safe);
  }
};

inline auto planar_exclusion(const Eigen::Vector3d & c, double d)
{
  return [c, d](auto z, auto out) {
    using T    = std::decay_t<decltype(z[0])>;
    const T dx = z[0] - c.x(), dy = z[1] - c.y();
    out[0] = (T(d * d) - dx * dx - dy * dy) * (0.5 / d);
  };
}

inline void add_box_rows(NlpBuilder & b, const std::string & name, const AffineMap & map, const Eigen::VectorXd & lo, const Eigen::VectorXd & hi)
{
  AffineMap upper(map.rows()), lower(map.rows());
  for (int r = 0; r < map.rows(); ++r) {
    for (const auto & [c, v] : map.row(r)) {
      upper.add(r, c, v);
      lower.add(r, c, -v);
    }
    upper.set_offset(r, map.offset()[r] - hi[r]);
    lower.set_offset(r, lo[r] - map.offset()[r]);
  }
  b.add_linear(TermKind::kInequality, name, upper);
  b.add_linear(TermKind::kInequality, name, lower);
}

inline void check_input(const KinematicModel & model, const WholeBodyInput & in, int knots)
{
  if (in.q_act.size() != model.dof() || in.qd_act.size() != model.dof()) { throw DimensionMismatchError("joint state dimension does not match the model"); }
  if (static_cast<int>(in.references.size()) != knots) { throw DimensionMismatchError("need one reference per knot"); }
  if (static_cast<int>(in.f_ref.size()) != knots) { throw DimensionMismatchError("need one force reference per knot"); }
  if (!in.q_act.allFinite() || !in.qd_act.allFinite() || !in.f_act.allFinite()) { throw DomainError("non-finite robot state"); }
  const Eigen::VectorXd lo = model.q_min(), hi = model.q_max();
  for (int r = 0; r < model.dof(); ++r) {
    if (in.q_act[r] < lo[r] || in.q_act[r] > hi[r]) { throw InfeasibleError("joint '" + model.joint(r).name + "' starts outside its limits"); }
  }
}

}  // namespace detail

/// Reference knots t0 + tbar_i T read from a task plan (clamped past its horizon).
inline std::vector<TaskReference> knot_references(const TaskPlan & plan, double t0, double horizon, int knots)
{
  std::vector<TaskReference> out;
  for (int i = 0; i < knots; ++i) { out.push_back(extract_reference(plan, std::max(plan.t0, t0 + knot_tbar(i, knots - 1) * horizon))); }
  return out;
}

inline std::vector<Vector6d> knot_forces(const QuinticForceReference & f, double t0, double horizon, int knots)
{
  std::vector<Vector6d> out;
  for (int i = 0; i < knots; ++i) { out.push_back(f.at(t0 + knot_tbar(i, knots - 1) * horizon)); }
  return out;
}

inline WholeBodyProblem build_wholebody_problem(std::shared_ptr<const KinematicModel> model, const WholeBodyInput & in,
  const std::vector<Obstacle> & obstacles, const WholeBodyConfig & cfg, const WholeBodyPlan * warm = nullptr)
{
  cfg.validate();
  detail::check_input(*model, in, cfg.knots);
  const int nq = cfg.joint_points, np = cfg.response_points, kk = cfg.knots - 1;
  const int dof    = kNumDof;
  const int off_pt = nq * dof;
  const int n      = wholebody_decision_variables(cfg);
  const double T   = cfg.horizon;
  NlpBuilder b(n);

  const Eigen::VectorXd q_lo = model->q_min(), q_hi = model->q_max();
  for (int j = 0; j < nq; ++j) {
    for (int r = 0; r < dof; ++r) {
      if (j == 0 || cfg.lock_joints) {
        b.fix(j * dof + r, in.q_act[r]);
      } else {
        b.set_bounds(j * dof + r, q_lo[r], q_hi[r]);
      }
    }
  }
  if (cfg.admittance) {
    for (int r = 0; r < 6; ++r) { b.fix(off_pt + r, 0.0); }
  }

  // tracking at knots
  Eigen::VectorXd track_w(14);
  track_w << Eigen::VectorXd::Constant(6, cfg.w_p), Eigen::VectorXd::Constant(8, cfg.w_theta);
  for (int i = 0; i <= kk; ++i) {
    const double tb = knot_tbar(i, kk);
    AffineMap m(cfg.admittance ? dof + 6 : dof);
    detail::add_curve_rows(m, 0, 0, dof, 0, dof, bernstein_weights(nq - 1, tb));
    if (cfg.admittance) { detail::add_curve_rows(m, dof, off_pt, 6, 0, 6, bernstein_weights(np - 1, tb)); }
    const TaskReference & ref = in.references[static_cast<std::size_t>(i)];
    detail::TrackingResidual f{model, ref.p_ref, ref.theta_ref.first.raw(), ref.theta_ref.second.raw(), cfg.admittance};
    b.add_nonlinear(TermKind::kCost, "tracking", m, 14, f, track_w);
  }

  // admittance force tracking: F_act + K pt + D ptdot - F_ref
  if (cfg.admittance) {
    AffineMap m(6 * (kk + 1));
    for (int i = 0; i <= kk; ++i) {
      const double tb            = knot_tbar(i, kk);
      const Eigen::VectorXd w0   = value_weights(np - 1, T, tb, 0);
      const Eigen::VectorXd w1   = value_weights(np - 1, T, tb, 1);
      for (int r = 0; r < 6; ++r) {
        const int row = 6 * i + r;
        for (int j = 0; j < np; ++j) { m.add(row, off_pt + j * 6 + r, cfg.stiffness[r] * w0[j] + cfg.damping[r] * w1[j]); }
        m.set_offset(row, in.f_act[r] - in.f_ref[static_cast<std::size_t>(i)][r]);
      }
    }
    b.add_linear(TermKind::kCost, "force", m, cfg.w_f);
  }

  // minimal upper-body motion
  {
    AffineMap m(kNumUpperDof * nq);
    const auto [first, count] = group_rows(BodyGroup::kUpper);
    for (int j = 0; j < nq; ++j) {
      for (int r = 0; r < count; ++r) { m.add(j * count + r, j * dof + first + r, 1.0); }
    }
    b.add_linear(TermKind::kCost, "upper_body", m, cfg.w_u);
  }

  // smoothness
  const AffineMap dq1 = detail::derivative_rows(0, dof, nq, T, 1);
  b.add_linear(TermKind::kCost, "smooth_q_vel", dq1, cfg.w_q_vel);
  b.add_linear(TermKind::kCost, "smooth_q_acc", detail::derivative_rows(0, dof, nq, T, 2), cfg.w_q_acc);
  if (cfg.admittance) {
    b.add_linear(TermKind::kCost, "smooth_pt_vel", detail::derivative_rows(off_pt, 6, np, T, 1), cfg.w_pt_vel);
    b.add_linear(TermKind::kCost, "smooth_pt_acc", detail::derivative_rows(off_pt, 6, np, T, 2), cfg.w_pt_acc);
  }

  // joint velocity limits on derivative control points
  if (!cfg.lock_joints) {
    const Eigen::VectorXd vlo = model->qd_min(), vhi = model->qd_max();
    const int segs = nq - 1;
    detail::add_box_rows(b, "velocity_limits", dq1, vlo.replicate(segs, 1), vhi.replicate(segs, 1));
    if (cfg.base_accel_limit > 0.0) {
      const Eigen::MatrixXd m2 = derivative_operator(nq - 1, T, 2);
      AffineMap acc(2 * static_cast<int>(m2.cols()));
      for (int k = 0; k < m2.cols(); ++k) {
        for (int r = 0; r < 2; ++r) {
          for (int j = 0; j < nq; ++j) { acc.add(2 * k + r, j * dof + r, m2(j, k)); }
        }
      }
      detail::add_box(b, "base_acceleration", acc, -cfg.base_accel_limit, cfg.base_accel_limit);
    }
  }

  if (cfg.constrain_initial_velocity && !cfg.lock_joints) {
    AffineMap m(dof);
    const Eigen::VectorXd w1 = value_weights(nq - 1, T, 0.0, 1);
    for (int r = 0; r < dof; ++r) {
      for (int j = 0; j < nq; ++j) { m.add(r, j * dof + r, w1[j]); }
      m.set_offset(r, -in.qd_act[r]);
    }
    b.add_linear(TermKind::kEquality, "initial_velocity", m);
  }

  // obstacles: palm midpoint at knots, base translation at control points (both past the fixed start)
  int mid_rows = 0, base_rows = 0;
  for (const auto & o : obstacles) {
    if (o.affects_hands()) {
      for (int i = 1; i <= kk; ++i) {
        const double tb = knot_tbar(i, kk);
        AffineMap m(dof);
        detail::add_curve_rows(m, 0, 0, dof, 0, dof, bernstein_weights(nq - 1, tb));
        b.add_nonlinear(TermKind::kInequality, "midpoint_obstacle", m, 1,
          detail::MidpointClearance{model, predicted_center(o, tb * T, cfg.prediction), o.d_safe});
        ++mid_rows;
      }
    }
    if (o.affects_base()) {
      for (int j = 1; j < nq; ++j) {
        AffineMap m(2);
        m.add(0, j * dof + 0, 1.0).add(1, j * dof + 1, 1.0);
        const double tj = static_cast<double>(j) / (nq - 1) * T;
        b.add_nonlinear(TermKind::kInequality, "base_obstacle", m, 1, detail::planar_exclusion(predicted_center(o, tj, cfg.prediction), o.d_safe));
        ++base_rows;
      }
    }
  }

  // initial guess: previous control points, else hold the current configuration
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  const bool warm_ok = warm != nullptr && warm->Q.count() == nq && warm->Q.dim() == dof &&
                       (!cfg.admittance || (warm->Pt && warm->Pt->count() == np));
  if (warm_ok) {
    x0.head(nq * dof) = warm->Q.vectorized();
    if (cfg.admittance) { x0.tail(6 * np) = warm->Pt->vectorized(); }
  } else {
    for (int j = 0; j < nq; ++j) { x0.segment(j * dof, dof) = in.q_act; }
  }
  b.set_initial(x0);

  WholeBodyProblem wp;
  wp.nlp = b.assemble();
  if (warm_ok) {
    if (warm->solution.lambda.size() == wp.nlp.num_equalities()) { wp.nlp.lambda0 = warm->solution.lambda; }
    if (warm->solution.mu.size() == wp.nlp.num_inequalities()) { wp.nlp.mu0 = warm->solution.mu; }
  }
  wp.cfg                    = cfg;
  wp.t0                     = in.t0;
  wp.midpoint_obstacle_rows = mid_rows;
  wp.base_obstacle_rows     = base_rows;
  return wp;
}

inline WholeBodyPlan unpack_wholebody(const WholeBodyProblem & problem, const NlpSolution & sol)
{
  const int nq = problem.cfg.joint_points;
  WholeBodyPlan plan;
  plan.Q = ControlPointMatrix::from_vector(sol.x.head(nq * kNumDof), kNumDof);
  if (problem.cfg.admittance) { plan.Pt = ControlPointMatrix::from_vector(sol.x.tail(6 * problem.cfg.response_points), 6); }
  plan.horizon   = problem.cfg.horizon;
  plan.t0        = problem.t0;
  plan.converged = sol.converged;
  plan.solution  = sol;
  return plan;
}

/// Solve and unpack; when not converged and `previous` exists, the previous plan is returned flagged.
inline WholeBodyPlan solve_wholebody_step(const WholeBodyProblem & problem, const WholeBodyPlan * previous = nullptr)
{
  const NlpSolution sol = solve(problem.nlp, problem.cfg.solver);
  if (!sol.converged && previous != nullptr) {
    WholeBodyPlan plan = *previous;
    plan.converged     = false;
    plan.solution      = sol;
    return plan;
  }
  return unpack_wholebody(problem, sol);
}

struct RobotCommand
{
  Eigen::VectorXd upper_positions{Eigen::VectorXd::Zero(kNumUpperDof)};
  Eigen::Vector3d base_velocity_local{Eigen::Vector3d::Zero()};  ///< (vx, vy, yaw rate) in the base frame
};

/// World-frame (vx, vy, wz) to the base frame of heading `yaw`.
inline Eigen::Vector3d world_to_local_velocity(const Eigen::Vector3d & v, double yaw)
{
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x() + s * v.y(), -s * v.x() + c * v.y(), v.z()};
}

inline Eigen::Vector3d local_to_world_velocity(const Eigen::Vector3d & v, double yaw)
{
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()};
}

/// Upper-body positions and base velocity, both read from B(Q, t_loop / T).
inline RobotCommand extract_commands(const WholeBodyPlan & plan, double t_loop, double yaw)
{
  if (!(t_loop >= 0.0) || t_loop > plan.horizon) { throw DomainError("t_loop must lie within the horizon"); }
  const double tb = t_loop / plan.horizon;
  const auto [first, count] = group_rows(BodyGroup::kUpper);
  const auto [bfirst, bcount] = group_rows(BodyGroup::kBase);
  RobotCommand cmd;
  cmd.upper_positions = eval(plan.Q, tb).segment(first, count);
  const Eigen::VectorXd qd = eval(derivative_control_points(plan.Q, plan.horizon, 1), tb);
  cmd.base_velocity_local = world_to_local_velocity(qd.segment(bfirst, bcount), yaw);
  return cmd;
}

/// Motion response and admittance force of a plan at tbar.
inline std::pair<Vector6d, Vector6d> response_at(const WholeBodyPlan & plan, double tbar, const Vector6d & f_act, const WholeBodyConfig & cfg)
{
  if (!plan.Pt) { return {Vector6d::Zero(), f_act}; }
  const Vector6d pt  = eval(*plan.Pt, tbar);
  const Vector6d ptd = eval(derivative_control_points(*plan.Pt, plan.horizon, 1), tbar);
  return {pt, admittance_force(pt, ptd, f_act, cfg.stiffness, cfg.damping)};
}

}  // namespace bmpc
