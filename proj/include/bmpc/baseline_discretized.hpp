#pragma once

/**
 * @file
 * @brief Knot-discretized whole-body planner with Euler transitions.
 *
 * Decision vector: per knot i, [q_i (18), qdot_i (18)]; with admittance the
 * knots [pt_i (6), ptdot_i (6)] follow all joint knots. Knots are linked by
 * q_{i+1} = q_i + dt qdot_i, dt = T / K. Limits hold at knots only.
 */

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <vector>

#include "mpc_wholebody.hpp"

namespace bmpc {

/// 2 (K+1) n_dof, plus 2 (K+1) 6 with admittance.
inline int discretized_decision_variables(const WholeBodyConfig & cfg)
{
  return 2 * cfg.knots * kNumDof + (cfg.admittance ? 2 * cfg.knots * 6 : 0);
}

struct DiscretizedPlan
{
  Eigen::MatrixXd q;   ///< 18 x (K+1)
  Eigen::MatrixXd qd;  ///< 18 x (K+1)
  Eigen::MatrixXd pt, ptd;  ///< 6 x (K+1), empty without admittance
  double horizon{2.0};
  double t0{0.0};
  bool converged{false};
  NlpSolution solution;

  int intervals() const { return static_cast<int>(q.cols()) - 1; }
  double dt() const { return horizon / intervals(); }

  /// max |q_{i+1} - q_i - dt qdot_i|
  double transition_residual() const
  {
    double r = 0.0;
    for (int i = 0; i < intervals(); ++i) { r = std::max(r, (q.col(i + 1) - q.col(i) - dt() * qd.col(i)).lpNorm<Eigen::Infinity>()); }
    return r;
  }
};

struct DiscretizedProblem
{
  NlpProblem nlp;
  WholeBodyConfig cfg;
  double t0{0.0};
};

inline DiscretizedProblem build_discretized_problem(std::shared_ptr<const KinematicModel> model, const WholeBodyInput & in,
  const std::vector<Obstacle> & obstacles, const WholeBodyConfig & cfg, const DiscretizedPlan * warm = nullptr)
{
  cfg.validate();
  detail::check_input(*model, in, cfg.knots);
  const int kk = cfg.knots - 1, dof = kNumDof;
  const double dt  = cfg.horizon / kk;
  const int n      = discretized_decision_variables(cfg);
  const int off_pt = 2 * cfg.knots * dof;
  auto qi   = [&](int i, int r) { return i * 2 * dof + r; };
  auto qdi  = [&](int i, int r) { return i * 2 * dof + dof + r; };
  auto pti  = [&](int i, int r) { return off_pt + i * 12 + r; };
  auto ptdi = [&](int i, int r) { return off_pt + i * 12 + 6 + r; };
  NlpBuilder b(n);

  const Eigen::VectorXd q_lo = model->q_min(), q_hi = model->q_max(), v_lo = model->qd_min(), v_hi = model->qd_max();
  for (int i = 0; i <= kk; ++i) {
    for (int r = 0; r < dof; ++r) {
      if (i == 0 || cfg.lock_joints) {
        b.fix(qi(i, r), in.q_act[r]);
      } else {
        b.set_bounds(qi(i, r), q_lo[r], q_hi[r]);
      }
      if (cfg.lock_joints) {
        b.fix(qdi(i, r), 0.0);
      } else {
        b.set_bounds(qdi(i, r), v_lo[r], v_hi[r]);
      }
    }
  }
  if (cfg.admittance) {
    for (int r = 0; r < 6; ++r) { b.fix(pti(0, r), 0.0); }
  }
  if (cfg.constrain_initial_velocity && !cfg.lock_joints) {
    for (int r = 0; r < dof; ++r) { b.fix(qdi(0, r), std::clamp(in.qd_act[r], v_lo[r], v_hi[r])); }
  }

  // Euler transitions
  {
    AffineMap tr(kk * dof + (cfg.admittance ? kk * 6 : 0));
    for (int i = 0; i < kk; ++i) {
      for (int r = 0; r < dof; ++r) { tr.add(i * dof + r, qi(i + 1, r), 1.0).add(i * dof + r, qi(i, r), -1.0).add(i * dof + r, qdi(i, r), -dt); }
      if (cfg.admittance) {
        for (int r = 0; r < 6; ++r) {
          const int row = kk * dof + i * 6 + r;
          tr.add(row, pti(i + 1, r), 1.0).add(row, pti(i, r), -1.0).add(row, ptdi(i, r), -dt);
        }
      }
    }
    b.add_linear(TermKind::kEquality, "transition", tr);
  }

  Eigen::VectorXd track_w(14);
  track_w << Eigen::VectorXd::Constant(6, cfg.w_p), Eigen::VectorXd::Constant(8, cfg.w_theta);
  for (int i = 0; i <= kk; ++i) {
    AffineMap m(cfg.admittance ? dof + 6 : dof);
    for (int r = 0; r < dof; ++r) { m.add(r, qi(i, r), 1.0); }
    if (cfg.admittance) {
      for (int r = 0; r < 6; ++r) { m.add(dof + r, pti(i, r), 1.0); }
    }
    const TaskReference & ref = in.references[static_cast<std::size_t>(i)];
    b.add_nonlinear(TermKind::kCost, "tracking", m, 14,
      detail::TrackingResidual{model, ref.p_ref, ref.theta_ref.first.raw(), ref.theta_ref.second.raw(), cfg.admittance}, track_w);
  }

  if (cfg.admittance) {
    AffineMap m(6 * (kk + 1));
    for (int i = 0; i <= kk; ++i) {
      for (int r = 0; r < 6; ++r) {
        m.add(6 * i + r, pti(i, r), cfg.stiffness[r]).add(6 * i + r, ptdi(i, r), cfg.damping[r]);
        m.set_offset(6 * i + r, in.f_act[r] - in.f_ref[static_cast<std::size_t>(i)][r]);
      }
    }
    b.add_linear(TermKind::kCost, "force", m, cfg.w_f);
  }

  {
    const auto [first, count] = group_rows(BodyGroup::kUpper);
    AffineMap m(count * (kk + 1));
    for (int i = 0; i <= kk; ++i) {
      for (int r = 0; r < count; ++r) { m.add(i * count + r, qi(i, first + r), 1.0); }
    }
    b.add_linear(TermKind::kCost, "upper_body", m, cfg.w_u);
  }

  {
    AffineMap vel(dof * (kk + 1)), acc(dof * kk);
    for (int i = 0; i <= kk; ++i) {
      for (int r = 0; r < dof; ++r) { vel.add(i * dof + r, qdi(i, r), 1.0); }
    }
    for (int i = 0; i < kk; ++i) {
      for (int r = 0; r < dof; ++r) { acc.add(i * dof + r, qdi(i + 1, r), 1.0 / dt).add(i * dof + r, qdi(i, r), -1.0 / dt); }
    }
    b.add_linear(TermKind::kCost, "smooth_q_vel", vel, cfg.w_q_vel);
    if (cfg.base_accel_limit > 0.0 && !cfg.lock_joints) {
      AffineMap base_acc(2 * kk);
      for (int i = 0; i < kk; ++i) {
        for (int r = 0; r < 2; ++r) { base_acc.add(2 * i + r, qdi(i + 1, r), 1.0 / dt).add(2 * i + r, qdi(i, r), -1.0 / dt); }
      }
      detail::add_box(b, "base_acceleration", base_acc, -cfg.base_accel_limit, cfg.base_accel_limit);
    }
    b.add_linear(TermKind::kCost, "smooth_q_acc", acc, cfg.w_q_acc);
    if (cfg.admittance) {
      AffineMap pvel(6 * (kk + 1)), pacc(6 * kk);
      for (int i = 0; i <= kk; ++i) {
        for (int r = 0; r < 6; ++r) { pvel.add(i * 6 + r, ptdi(i, r), 1.0); }
      }
      for (int i = 0; i < kk; ++i) {
        for (int r = 0; r < 6; ++r) { pacc.add(i * 6 + r, ptdi(i + 1, r), 1.0 / dt).add(i * 6 + r, ptdi(i, r), -1.0 / dt); }
      }
      b.add_linear(TermKind::kCost, "smooth_pt_vel", pvel, cfg.w_pt_vel);
      b.add_linear(TermKind::kCost, "smooth_pt_acc", pacc, cfg.w_pt_acc);
    }
  }

  for (const auto & o : obstacles) {
    for (int i = 1; i <= kk; ++i) {
      if (o.affects_hands()) {
        AffineMap m(dof);
        for (int r = 0; r < dof; ++r) { m.add(r, qi(i, r), 1.0); }
        b.add_nonlinear(TermKind::kInequality, "midpoint_obstacle", m, 1, detail::MidpointClearance{model, predicted_center(o, i * dt, cfg.prediction), o.d_safe});
      }
      if (o.affects_base()) {
        AffineMap m(2);
        m.add(0, qi(i, 0), 1.0).add(1, qi(i, 1), 1.0);
        b.add_nonlinear(TermKind::kInequality, "base_obstacle", m, 1, detail::planar_exclusion(predicted_center(o, i * dt, cfg.prediction), o.d_safe));
      }
    }
  }

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  const bool warm_ok = warm != nullptr && warm->q.cols() == cfg.knots && (!cfg.admittance || warm->pt.cols() == cfg.knots);
  for (int i = 0; i <= kk; ++i) {
    x0.segment(qi(i, 0), dof)  = warm_ok ? Eigen::VectorXd(warm->q.col(i)) : in.q_act;
    x0.segment(qdi(i, 0), dof) = warm_ok ? Eigen::VectorXd(warm->qd.col(i)) : Eigen::VectorXd::Zero(dof);
    if (cfg.admittance && warm_ok) {
      x0.segment(pti(i, 0), 6)  = warm->pt.col(i);
      x0.segment(ptdi(i, 0), 6) = warm->ptd.col(i);
    }
  }
  b.set_initial(x0);

  DiscretizedProblem dp;
  dp.nlp = b.assemble();
  if (warm_ok) {
    if (warm->solution.lambda.size() == dp.nlp.num_equalities()) { dp.nlp.lambda0 = warm->solution.lambda; }
    if (warm->solution.mu.size() == dp.nlp.num_inequalities()) { dp.nlp.mu0 = warm->solution.mu; }
  }
  dp.cfg = cfg;
  dp.t0  = in.t0;
  return dp;
}

inline DiscretizedPlan unpack_discretized(const DiscretizedProblem & problem, const NlpSolution & sol)
{
  const int k1 = problem.cfg.knots, dof = kNumDof;
  DiscretizedPlan plan;
  plan.q.resize(dof, k1);
  plan.qd.resize(dof, k1);
  for (int i = 0; i < k1; ++i) {
    plan.q.col(i)  = sol.x.segment(i * 2 * dof, dof);
    plan.qd.col(i) = sol.x.segment(i * 2 * dof + dof, dof);
  }
  if (problem.cfg.admittance) {
    const int off = 2 * k1 * dof;
    plan.pt.resize(6, k1);
    plan.ptd.resize(6, k1);
    for (int i = 0; i < k1; ++i) {
      plan.pt.col(i)  = sol.x.segment(off + i * 12, 6);
      plan.ptd.col(i) = sol.x.segment(off + i * 12 + 6, 6);
    }
  }
  plan.horizon   = problem.cfg.horizon;
  plan.t0        = problem.t0;
  plan.converged = sol.converged;
  plan.solution  = sol;
  return plan;
}

inline DiscretizedPlan solve_discretized_step(const DiscretizedProblem & problem, const DiscretizedPlan * previous = nullptr)
{
  const NlpSolution sol = solve(problem.nlp, problem.cfg.solver);
  if (!sol.converged && previous != nullptr) {
    DiscretizedPlan plan = *previous;
    plan.converged       = false;
    plan.solution        = sol;
    return plan;
  }
  return unpack_discretized(problem, sol);
}

/// Linear interpolation of q knots for the upper body; zero-order hold of qdot_0 for the base.
inline RobotCommand extract_commands_discretized(const DiscretizedPlan & plan, double t_loop, double yaw)
{
  if (!(t_loop >= 0.0) || t_loop > plan.horizon) { throw DomainError("t_loop must lie within the horizon"); }
  const double u = t_loop / plan.dt();
  const int i    = std::min(static_cast<int>(u), plan.intervals() - 1);
  const double f = u - i;
  const Eigen::VectorXd q = (1.0 - f) * plan.q.col(i) + f * plan.q.col(i + 1);
  const auto [first, count] = group_rows(BodyGroup::kUpper);
  RobotCommand cmd;
  cmd.upper_positions     = q.segment(first, count);
  cmd.base_velocity_local = world_to_local_velocity(plan.qd.col(0).head<3>(), yaw);
  return cmd;
}

}  // namespace bmpc
