#pragma once

/**
 * @file
 * @brief Task-space planner (MPC-T) for two cooperating end-effectors.
 *
 * Decision vector: vec(P) followed by vec(Psi), P the 6 x (Np+1) position
 * control points (right palm xyz, left palm xyz) and Psi the 6 x (Npsi+1)
 * rotation-parameter control points (right alpha beta gamma, left ...).
 * The horizon shrinks as the task progresses and is clamped at T_min.
 *
 * Two comparison formulations over (p, quaternion) are also provided, a
 * knot-discretized one and a Bezier one, both of which need explicit
 * unit-norm constraints at the knots.
 */

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

#include "bezier.hpp"
#include "nlp.hpp"
#include "obstacle.hpp"
#include "rotation.hpp"

namespace bmpc {

struct TaskPlanConfig
{
  int position_points{8};  ///< N_p + 1
  int rotation_points{8};  ///< N_psi + 1
  int knots{8};            ///< K + 1
  double initial_horizon{14.0};
  double min_horizon{1.0};
  double w_x{10.0}, w_y{10.0};
  double w_pdot{1.0}, w_psidot{1.0};
  double w_pddot{0.1}, w_psiddot{0.1};
  double d_safe{0.3};  ///< default for obstacles that do not set their own
  double v_min{-0.5}, v_max{0.5};  ///< bounds on every component of P'
  double a_min{-0.5}, a_max{0.5};  ///< bounds on every component of P''
  ObstaclePrediction prediction{ObstaclePrediction::kHold};
  SolverOptions solver{};

  void validate() const
  {
    if (position_points < 4 || rotation_points < 4) { throw DomainError("task planner needs at least 4 control points per curve"); }
    if (position_points - 1 > kMaxBezierDegree || rotation_points - 1 > kMaxBezierDegree) { throw DomainError("task planner degree too high"); }
    if (knots < 2) { throw DomainError("task planner needs at least 2 knots"); }
    if (!(initial_horizon > 0.0) || !(min_horizon > 0.0)) { throw DomainError("horizons must be positive"); }
    for (double w : {w_x, w_y, w_pdot, w_psidot, w_pddot, w_psiddot}) {
      if (!(w >= 0.0)) { throw DomainError("weights must be non-negative"); }
    }
    if (!(d_safe > 0.0)) { throw DomainError("d_safe must be positive"); }
    if (!(v_min < v_max) || !(a_min < a_max)) { throw LimitOrderError("velocity / acceleration bounds out of order"); }
  }
};

/// Measured end-effector state.
struct TaskState
{
  Vector6d p{Vector6d::Zero()};
  QuaternionPair theta{};
};

struct TaskGoal
{
  Vector6d p_goal{Vector6d::Zero()};
  QuaternionPair theta_goal{};
};

struct TaskPlan
{
  ControlPointMatrix P;
  ControlPointMatrix Psi;
  double horizon{1.0};
  double t0{0.0};
  bool converged{false};
  NlpSolution solution;

  BezierCurve position_curve() const { return {P, horizon, t0}; }
  BezierCurve rotation_curve() const { return {Psi, horizon, t0}; }
};

/// max(T0 - elapsed, T_min)
inline double shrink_horizon(double initial, double elapsed, double min_horizon)
{
  if (elapsed < 0.0) { throw DomainError("elapsed time must be non-negative"); }
  return std::max(initial - elapsed, min_horizon);
}

enum class TaskMode {
  kDiscretizedQuaternion,  ///< knots of (p, theta) and their rates, Euler transitions
  kBezierQuaternion,       ///< Bezier control points over (p, theta)
  kBezierPsi,              ///< Bezier control points over (p, psi)
};

inline const char * to_string(TaskMode m)
{
  switch (m) {
    case TaskMode::kDiscretizedQuaternion: return "discretized-p-theta";
    case TaskMode::kBezierQuaternion: return "bezier-p-theta";
    case TaskMode::kBezierPsi: return "bezier-p-psi";
  }
  return "?";
}

/// Closed-form decision-variable counts.
inline int task_decision_variables(TaskMode mode, const TaskPlanConfig & cfg)
{
  switch (mode) {
    case TaskMode::kDiscretizedQuaternion: return 2 * cfg.knots * 14;
    case TaskMode::kBezierQuaternion: return cfg.position_points * 14;
    case TaskMode::kBezierPsi: return 6 * cfg.position_points + 6 * cfg.rotation_points;
  }
  return 0;
}

/// Built MPC-T problem plus the data needed to read its solution back.
struct TaskProblem
{
  NlpProblem nlp;
  TaskMode mode{TaskMode::kBezierPsi};
  TaskPlanConfig cfg;
  double t0{0.0};
  double horizon{1.0};
  int obstacle_rows{0};
};

namespace detail {

/// Palm-alignment residuals (x_r . d, y_r . d, x_l . d, y_l . d), d = p_l - p_r.
template<class T>
void palm_alignment(const Vec3<T> & pr, const Vec3<T> & pl, const Quat<T> & qr, const Quat<T> & ql, std::span<T> out)
{
  const Vec3<T> d  = pl - pr;
  const auto cr    = rotation_columns(qr);
  const auto cl    = rotation_columns(ql);
  out[0] = dot(cr[0], d);
  out[1] = dot(cr[1], d);
  out[2] = dot(cl[0], d);
  out[3] = dot(cl[1], d);
}

/// (d^2 - |z - c|^2) / (2 d) <= 0 for a 3-input map z.
inline auto sphere_exclusion(const Eigen::Vector3d & c, double d)
{
  return [c, d](auto z, auto out) {
    using T = std::decay_t<decltype(z[0])>;
    const T dx = z[0] - c.x(), dy = z[1] - c.y(), dz = z[2] - c.z();
    out[0] = (T(d * d) - dx * dx - dy * dy - dz * dz) * (0.5 / d);
  };
}

/// Rows of a Bezier curve value (or derivative) at tbar: z[r] = sum_j w_j x[offset + j*dim + row0 + r].
inline void add_curve_rows(AffineMap & map, int map_row0, int offset, int dim, int row0, int rows, const Eigen::VectorXd & w, double scale = 1.0)
{
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < w.size(); ++j) { map.add(map_row0 + r, offset + j * dim + row0 + r, scale * w[j]); }
  }
}

/// One row per entry of the derivative control points of a block of a curve.
inline AffineMap derivative_rows(int offset, int dim, int count, double horizon, int order)
{
  const Eigen::MatrixXd m = derivative_operator(count - 1, horizon, order);
  AffineMap map(static_cast<int>(m.cols()) * dim);
  for (int k = 0; k < m.cols(); ++k) {
    for (int r = 0; r < dim; ++r) {
      for (int j = 0; j < m.rows(); ++j) { map.add(k * dim + r, offset + j * dim + r, m(j, k)); }
    }
  }
  return map;
}

/// Box bounds lo <= map <= hi as two inequality blocks.
inline void add_box(NlpBuilder & b, const std::string & name, const AffineMap & map, double lo, double hi)
{
  AffineMap upper(map.rows()), lower(map.rows());
  for (int r = 0; r < map.rows(); ++r) {
    for (const auto & [c, v] : map.row(r)) {
      upper.add(r, c, v);
      lower.add(r, c, -v);
    }
    upper.set_offset(r, map.offset()[r] - hi);
    lower.set_offset(r, lo - map.offset()[r]);
  }
  b.add_linear(TermKind::kInequality, name, upper);
  b.add_linear(TermKind::kInequality, name, lower);
}

inline Vector6d psi_of(const QuaternionPair & q, const std::optional<Vector6d> & hint)
{
  std::optional<PsiState> hr, hl;
  if (hint) {
    hr = PsiState{(*hint)[0], (*hint)[1], (*hint)[2]};
    hl = PsiState{(*hint)[3], (*hint)[4], (*hint)[5]};
  }
  Vector6d psi;
  psi.head<3>() = psi_from_quaternion(q.first, hr).vector();
  psi.tail<3>() = psi_from_quaternion(q.second, hl).vector();
  return psi;
}

inline void check_goal_clearance(const TaskGoal & goal, const std::vector<Obstacle> & obstacles)
{
  const Eigen::Vector3d mid = 0.5 * (goal.p_goal.head<3>() + goal.p_goal.tail<3>());
  for (const auto & o : obstacles) {
    if (o.affects_hands() && (mid - o.center).norm() < o.d_safe) {
      throw InfeasibleError("goal midpoint lies within d_safe of an obstacle");
    }
  }
}

}  // namespace detail

/**
 * @brief Build the (p, psi) Bezier MPC-T problem.
 *
 * `psi_hint` picks the representative of the measured orientation closest to
 * the previous plan, which keeps Psi_0 continuous from loop to loop.
 */
inline TaskProblem build_task_problem(const TaskState & state, const TaskGoal & goal, const std::vector<Obstacle> & obstacles,
  const TaskPlanConfig & cfg, double t0, double horizon, const TaskPlan * warm = nullptr,
  const std::optional<Vector6d> & psi_hint = std::nullopt)
{
  cfg.validate();
  if (!(horizon > 0.0)) { throw DomainError("horizon must be positive"); }
  if (!state.p.allFinite() || !goal.p_goal.allFinite()) { throw DomainError("non-finite task state or goal"); }
  detail::check_goal_clearance(goal, obstacles);

  const int np = cfg.position_points, nr = cfg.rotation_points;
  const int off_psi = 6 * np;
  const int n       = 6 * np + 6 * nr;
  NlpBuilder b(n);

  const Vector6d psi_act = detail::psi_of(state.theta, psi_hint);

  // boundary values through bounds: P_0, trailing three P (terminal rest), Psi_0
  for (int r = 0; r < 6; ++r) {
    b.fix(r, state.p[r]);
    for (int j = np - 3; j < np; ++j) { b.fix(j * 6 + r, goal.p_goal[r]); }
    b.fix(off_psi + r, psi_act[r]);
  }

  // terminal psi rate and acceleration: Psi_N = Psi_{N-1} = Psi_{N-2}
  AffineMap rest(12);
  for (int r = 0; r < 6; ++r) {
    rest.add(r, off_psi + (nr - 1) * 6 + r, 1.0).add(r, off_psi + (nr - 2) * 6 + r, -1.0);
    rest.add(6 + r, off_psi + (nr - 2) * 6 + r, 1.0).add(6 + r, off_psi + (nr - 3) * 6 + r, -1.0);
  }
  b.add_linear(TermKind::kEquality, "terminal_psi_rest", rest);

  // terminal orientation: vec(conj(goal) * q) = 0 for each arm
  {
    AffineMap m(6);
    for (int r = 0; r < 6; ++r) { m.add(r, off_psi + (nr - 1) * 6 + r, 1.0); }
    const Quat<double> cr = conjugate(goal.theta_goal.first.raw()), cl = conjugate(goal.theta_goal.second.raw());
    b.add_nonlinear(TermKind::kEquality, "terminal_orientation", m, 6, [cr, cl](auto z, auto out) {
      using T  = std::decay_t<decltype(z[0])>;
      const Quat<T> er = Quat<T>{T(cr.w), T(cr.x), T(cr.y), T(cr.z)} * psi_to_quaternion(z[0], z[1], z[2]);
      const Quat<T> el = Quat<T>{T(cl.w), T(cl.x), T(cl.y), T(cl.z)} * psi_to_quaternion(z[3], z[4], z[5]);
      out[0] = er.x;
      out[1] = er.y;
      out[2] = er.z;
      out[3] = el.x;
      out[4] = el.y;
      out[5] = el.z;
    });
  }

  // palm alignment at knots
  const int kk = cfg.knots - 1;
  Eigen::VectorXd align_w(4);
  align_w << cfg.w_x, cfg.w_y, cfg.w_x, cfg.w_y;
  for (int i = 0; i <= kk; ++i) {
    const double tb = knot_tbar(i, kk);
    AffineMap m(12);
    detail::add_curve_rows(m, 0, 0, 6, 0, 6, bernstein_weights(np - 1, tb));
    detail::add_curve_rows(m, 6, off_psi, 6, 0, 6, bernstein_weights(nr - 1, tb));
    b.add_nonlinear(TermKind::kCost, "palm_alignment", m, 4, [](auto z, auto out) {
      using T = std::decay_t<decltype(z[0])>;
      detail::palm_alignment<T>({z[0], z[1], z[2]}, {z[3], z[4], z[5]}, psi_to_quaternion(z[6], z[7], z[8]),
        psi_to_quaternion(z[9], z[10], z[11]), out);
    }, align_w);
  }

  // smoothness over derivative control points
  const AffineMap dp1 = detail::derivative_rows(0, 6, np, horizon, 1);
  const AffineMap dp2 = detail::derivative_rows(0, 6, np, horizon, 2);
  b.add_linear(TermKind::kCost, "smooth_p_vel", dp1, cfg.w_pdot);
  b.add_linear(TermKind::kCost, "smooth_psi_vel", detail::derivative_rows(off_psi, 6, nr, horizon, 1), cfg.w_psidot);
  b.add_linear(TermKind::kCost, "smooth_p_acc", dp2, cfg.w_pddot);
  b.add_linear(TermKind::kCost, "smooth_psi_acc", detail::derivative_rows(off_psi, 6, nr, horizon, 2), cfg.w_psiddot);

  // velocity / acceleration bounds on every derivative control point
  detail::add_box(b, "velocity_bounds", dp1, cfg.v_min, cfg.v_max);
  detail::add_box(b, "acceleration_bounds", dp2, cfg.a_min, cfg.a_max);

  // midpoint obstacle clearance at knots; knot 0 is the measured state
  int obstacle_rows = 0;
  for (const auto & o : obstacles) {
    if (!o.affects_hands()) { continue; }
    for (int i = 1; i <= kk; ++i) {
      const double tb = knot_tbar(i, kk);
      AffineMap m(3);
      const Eigen::VectorXd w = bernstein_weights(np - 1, tb);
      detail::add_curve_rows(m, 0, 0, 6, 0, 3, w, 0.5);
      detail::add_curve_rows(m, 0, 0, 6, 3, 3, w, 0.5);
      b.add_nonlinear(TermKind::kInequality, "obstacle", m, 1, detail::sphere_exclusion(predicted_center(o, tb * horizon, cfg.prediction), o.d_safe));
      ++obstacle_rows;
    }
  }

  // initial guess
  Eigen::VectorXd x0(n);
  bool warm_ok = warm != nullptr && warm->P.count() == np && warm->Psi.count() == nr && warm->P.dim() == 6 && warm->Psi.dim() == 6;
  if (warm_ok) {
    x0 << warm->P.vectorized(), warm->Psi.vectorized();
  } else {
    for (int j = 0; j < np; ++j) {
      const double s = std::min(1.0, static_cast<double>(j) / (np - 3));
      x0.segment(j * 6, 6) = state.p + s * (goal.p_goal - state.p);
    }
    for (int j = 0; j < nr; ++j) { x0.segment(off_psi + j * 6, 6) = psi_act; }
  }
  b.set_initial(x0);

  TaskProblem tp;
  tp.nlp = b.assemble();
  if (warm_ok) {
    if (warm->solution.lambda.size() == tp.nlp.num_equalities()) { tp.nlp.lambda0 = warm->solution.lambda; }
    if (warm->solution.mu.size() == tp.nlp.num_inequalities()) { tp.nlp.mu0 = warm->solution.mu; }
  }
  tp.mode          = TaskMode::kBezierPsi;
  tp.cfg           = cfg;
  tp.t0            = t0;
  tp.horizon       = horizon;
  tp.obstacle_rows = obstacle_rows;
  return tp;
}

/// Solve and unpack; when not converged and `previous` exists, the previous plan is returned flagged.
inline TaskPlan solve_task_step(const TaskProblem & problem, const TaskPlan * previous = nullptr)
{
  if (problem.mode != TaskMode::kBezierPsi) { throw DomainError("solve_task_step expects the (p, psi) formulation"); }
  const NlpSolution sol = solve(problem.nlp, problem.cfg.solver);
  const int np          = problem.cfg.position_points;
  TaskPlan plan;
  if (!sol.converged && previous != nullptr) {
    plan           = *previous;
    plan.converged = false;
    plan.solution  = sol;
    return plan;
  }
  plan.P         = ControlPointMatrix::from_vector(sol.x.head(6 * np), 6);
  plan.Psi       = ControlPointMatrix::from_vector(sol.x.tail(problem.nlp.n - 6 * np), 6);
  plan.horizon   = problem.horizon;
  plan.t0        = problem.t0;
  plan.converged = sol.converged;
  plan.solution  = sol;
  return plan;
}

struct TaskReference
{
  Vector6d p_ref{Vector6d::Zero()};
  QuaternionPair theta_ref{};
  Vector6d psi_ref{Vector6d::Zero()};
};

/// Curve values at tbar = (t - t0) / T, clamped to 1 past the horizon.
inline TaskReference extract_reference(const TaskPlan & plan, double t)
{
  if (t < plan.t0) { throw DomainError("reference requested before the plan start"); }
  const double tb = std::min((t - plan.t0) / plan.horizon, 1.0);
  TaskReference ref;
  ref.p_ref     = eval(plan.P, tb);
  ref.psi_ref   = eval(plan.Psi, tb);
  ref.theta_ref = psi_pair_to_quaternions(ref.psi_ref);
  return ref;
}

/// Largest |norm - 1| among `samples` uniformly spaced orientations of the plan.
inline double max_unit_norm_error(const TaskPlan & plan, int samples = 1000)
{
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double tb      = samples == 1 ? 0.0 : static_cast<double>(s) / (samples - 1);
    const Eigen::VectorXd psi = eval(plan.Psi, tb);
    for (int arm = 0; arm < 2; ++arm) {
      const Quat<double> q = psi_to_quaternion(psi[3 * arm], psi[3 * arm + 1], psi[3 * arm + 2]);
      worst = std::max(worst, std::abs(std::sqrt(dot(q, q)) - 1.0));
    }
  }
  return worst;
}

/**
 * @brief Comparison formulations over (p, quaternion).
 *
 * Discretized layout per knot i: [p_i (6), theta_i (8), pdot_i (6), thetadot_i (8)].
 * Bezier layout per control point j: [P_j (6), Theta_j (8)].
 */
inline TaskProblem build_task_problem_quaternion(TaskMode mode, const TaskState & state, const TaskGoal & goal,
  const std::vector<Obstacle> & obstacles, const TaskPlanConfig & cfg, double t0, double horizon)
{
  cfg.validate();
  if (mode == TaskMode::kBezierPsi) { throw DomainError("use build_task_problem for the (p, psi) formulation"); }
  detail::check_goal_clearance(goal, obstacles);
  const int n  = task_decision_variables(mode, cfg);
  const int kk = cfg.knots - 1;
  NlpBuilder b(n);

  Eigen::Matrix<double, 8, 1> th_act, th_goal;
  th_act << state.theta.first.coeffs(), state.theta.second.coeffs();
  th_goal << goal.theta_goal.first.coeffs(), goal.theta_goal.second.coeffs();
  if (state.theta.first.coeffs().dot(goal.theta_goal.first.coeffs()) < 0.0) { th_goal.head<4>() *= -1.0; }
  if (state.theta.second.coeffs().dot(goal.theta_goal.second.coeffs()) < 0.0) { th_goal.tail<4>() *= -1.0; }

  const Quat<double> cr = conjugate(goal.theta_goal.first.raw()), cl = conjugate(goal.theta_goal.second.raw());
  auto terminal = [cr, cl](auto z, auto out) {
    using T = std::decay_t<decltype(z[0])>;
    const Quat<T> er = Quat<T>{T(cr.w), T(cr.x), T(cr.y), T(cr.z)} * Quat<T>{z[0], z[1], z[2], z[3]};
    const Quat<T> el = Quat<T>{T(cl.w), T(cl.x), T(cl.y), T(cl.z)} * Quat<T>{z[4], z[5], z[6], z[7]};
    out[0] = er.x;
    out[1] = er.y;
    out[2] = er.z;
    out[3] = el.x;
    out[4] = el.y;
    out[5] = el.z;
  };
  auto unit_norm = [](auto z, auto out) {
    out[0] = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] + z[3] * z[3] - 1.0;
    out[1] = z[4] * z[4] + z[5] * z[5] + z[6] * z[6] + z[7] * z[7] - 1.0;
  };
  auto align = [](auto z, auto out) {
    using T = std::decay_t<decltype(z[0])>;
    detail::palm_alignment<T>({z[0], z[1], z[2]}, {z[3], z[4], z[5]}, Quat<T>{z[6], z[7], z[8], z[9]},
      Quat<T>{z[10], z[11], z[12], z[13]}, out);
  };
  Eigen::VectorXd align_w(4);
  align_w << cfg.w_x, cfg.w_y, cfg.w_x, cfg.w_y;
  Eigen::VectorXd x0(n);

  if (mode == TaskMode::kDiscretizedQuaternion) {
    const int stride = 28;
    const double dt  = horizon / kk;
    auto pi          = [&](int i, int r) { return i * stride + r; };
    auto thi         = [&](int i, int r) { return i * stride + 6 + r; };
    auto pdi         = [&](int i, int r) { return i * stride + 14 + r; };
    auto tdi         = [&](int i, int r) { return i * stride + 20 + r; };
    for (int r = 0; r < 6; ++r) {
      b.fix(pi(0, r), state.p[r]);
      b.fix(pi(kk, r), goal.p_goal[r]);
      b.fix(pdi(kk, r), 0.0);
      b.fix(pdi(kk - 1, r), 0.0);
    }
    for (int r = 0; r < 8; ++r) {
      b.fix(thi(0, r), th_act[r]);
      b.fix(tdi(kk, r), 0.0);
      b.fix(tdi(kk - 1, r), 0.0);
    }
    for (int i = 0; i <= kk; ++i) {
      for (int r = 0; r < 6; ++r) { b.set_bounds(pdi(i, r), cfg.v_min, cfg.v_max); }
    }
    // Euler transitions
    AffineMap tr(kk * 14);
    for (int i = 0; i < kk; ++i) {
      for (int r = 0; r < 6; ++r) { tr.add(i * 14 + r, pi(i + 1, r), 1.0).add(i * 14 + r, pi(i, r), -1.0).add(i * 14 + r, pdi(i, r), -dt); }
      for (int r = 0; r < 8; ++r) { tr.add(i * 14 + 6 + r, thi(i + 1, r), 1.0).add(i * 14 + 6 + r, thi(i, r), -1.0).add(i * 14 + 6 + r, tdi(i, r), -dt); }
    }
    b.add_linear(TermKind::kEquality, "transition", tr);
    AffineMap acc(kk * 6), tacc(kk * 8), vel(kk * 6 + 6), tvel(kk * 8 + 8);
    for (int i = 0; i < kk; ++i) {
      for (int r = 0; r < 6; ++r) { acc.add(i * 6 + r, pdi(i + 1, r), 1.0 / dt).add(i * 6 + r, pdi(i, r), -1.0 / dt); }
      for (int r = 0; r < 8; ++r) { tacc.add(i * 8 + r, tdi(i + 1, r), 1.0 / dt).add(i * 8 + r, tdi(i, r), -1.0 / dt); }
    }
    for (int i = 0; i <= kk; ++i) {
      for (int r = 0; r < 6; ++r) { vel.add(i * 6 + r, pdi(i, r), 1.0); }
      for (int r = 0; r < 8; ++r) { tvel.add(i * 8 + r, tdi(i, r), 1.0); }
    }
    b.add_linear(TermKind::kCost, "smooth_p_vel", vel, cfg.w_pdot);
    b.add_linear(TermKind::kCost, "smooth_theta_vel", tvel, cfg.w_psidot);
    b.add_linear(TermKind::kCost, "smooth_p_acc", acc, cfg.w_pddot);
    b.add_linear(TermKind::kCost, "smooth_theta_acc", tacc, cfg.w_psiddot);
    detail::add_box(b, "acceleration_bounds", acc, cfg.a_min, cfg.a_max);
    for (int i = 0; i <= kk; ++i) {
      AffineMap z(14), q(8), mid(3);
      for (int r = 0; r < 6; ++r) { z.add(r, pi(i, r), 1.0); }
      for (int r = 0; r < 8; ++r) {
        z.add(6 + r, thi(i, r), 1.0);
        q.add(r, thi(i, r), 1.0);
      }
      for (int r = 0; r < 3; ++r) { mid.add(r, pi(i, r), 0.5).add(r, pi(i, 3 + r), 0.5); }
      b.add_nonlinear(TermKind::kCost, "palm_alignment", z, 4, align, align_w);
      if (i > 0) { b.add_nonlinear(TermKind::kEquality, "unit_quaternion", q, 2, unit_norm); }
      if (i == kk) { b.add_nonlinear(TermKind::kEquality, "terminal_orientation", q, 6, terminal); }
      for (const auto & o : obstacles) {
        if (o.affects_hands()) { b.add_nonlinear(TermKind::kInequality, "obstacle", mid, 1, detail::sphere_exclusion(predicted_center(o, i * dt, cfg.prediction), o.d_safe)); }
      }
    }
    for (int i = 0; i <= kk; ++i) {
      const double s = static_cast<double>(i) / kk;
      x0.segment(pi(i, 0), 6)  = state.p + s * (goal.p_goal - state.p);
      x0.segment(thi(i, 0), 8) = th_act;
      x0.segment(pdi(i, 0), 6) = (goal.p_goal - state.p) / horizon;
      x0.segment(tdi(i, 0), 8).setZero();
    }
  } else {
    const int np = cfg.position_points;
    const int stride = 14;
    for (int r = 0; r < 6; ++r) {
      b.fix(r, state.p[r]);
      for (int j = np - 3; j < np; ++j) { b.fix(j * stride + r, goal.p_goal[r]); }
    }
    for (int r = 0; r < 8; ++r) { b.fix(6 + r, th_act[r]); }
    AffineMap rest(16);
    for (int r = 0; r < 8; ++r) {
      rest.add(r, (np - 1) * stride + 6 + r, 1.0).add(r, (np - 2) * stride + 6 + r, -1.0);
      rest.add(8 + r, (np - 2) * stride + 6 + r, 1.0).add(8 + r, (np - 3) * stride + 6 + r, -1.0);
    }
    b.add_linear(TermKind::kEquality, "terminal_theta_rest", rest);
    for (int order = 1; order <= 2; ++order) {
      const Eigen::MatrixXd m = derivative_operator(np - 1, horizon, order);
      AffineMap dp(static_cast<int>(m.cols()) * 6), dt(static_cast<int>(m.cols()) * 8);
      for (int k = 0; k < m.cols(); ++k) {
        for (int j = 0; j < m.rows(); ++j) {
          for (int r = 0; r < 6; ++r) { dp.add(k * 6 + r, j * stride + r, m(j, k)); }
          for (int r = 0; r < 8; ++r) { dt.add(k * 8 + r, j * stride + 6 + r, m(j, k)); }
        }
      }
      b.add_linear(TermKind::kCost, order == 1 ? "smooth_p_vel" : "smooth_p_acc", dp, order == 1 ? cfg.w_pdot : cfg.w_pddot);
      b.add_linear(TermKind::kCost, order == 1 ? "smooth_theta_vel" : "smooth_theta_acc", dt, order == 1 ? cfg.w_psidot : cfg.w_psiddot);
      if (order == 1) {
        detail::add_box(b, "velocity_bounds", dp, cfg.v_min, cfg.v_max);
      } else {
        detail::add_box(b, "acceleration_bounds", dp, cfg.a_min, cfg.a_max);
      }
    }
    for (int i = 0; i <= kk; ++i) {
      const Eigen::VectorXd w = bernstein_weights(np - 1, knot_tbar(i, kk));
      AffineMap z(14), q(8), mid(3);
      detail::add_curve_rows(z, 0, 0, stride, 0, 14, w);
      detail::add_curve_rows(q, 0, 0, stride, 6, 8, w);
      detail::add_curve_rows(mid, 0, 0, stride, 0, 3, w, 0.5);
      detail::add_curve_rows(mid, 0, 0, stride, 3, 3, w, 0.5);
      b.add_nonlinear(TermKind::kCost, "palm_alignment", z, 4, align, align_w);
      if (i > 0) { b.add_nonlinear(TermKind::kEquality, "unit_quaternion", q, 2, unit_norm); }
      for (const auto & o : obstacles) {
        if (o.affects_hands()) { b.add_nonlinear(TermKind::kInequality, "obstacle", mid, 1, detail::sphere_exclusion(predicted_center(o, knot_tbar(i, kk) * horizon, cfg.prediction), o.d_safe)); }
      }
    }
    AffineMap q_end(8);
    for (int r = 0; r < 8; ++r) { q_end.add(r, (np - 1) * stride + 6 + r, 1.0); }
    b.add_nonlinear(TermKind::kEquality, "terminal_orientation", q_end, 6, terminal);
    for (int j = 0; j < np; ++j) {
      const double s = std::min(1.0, static_cast<double>(j) / (np - 3));
      x0.segment(j * stride, 6)     = state.p + s * (goal.p_goal - state.p);
      x0.segment(j * stride + 6, 8) = th_act;
    }
  }
  b.set_initial(x0);
  TaskProblem tp;
  tp.nlp     = b.assemble();
  tp.mode    = mode;
  tp.cfg     = cfg;
  tp.t0      = t0;
  tp.horizon = horizon;
  return tp;
}

/// Largest |norm - 1| over `samples` uniform samples of a solved comparison formulation.
inline double quaternion_formulation_norm_error(const TaskProblem & tp, const Eigen::VectorXd & x, int samples = 1000)
{
  const int kk = tp.cfg.knots - 1;
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double tb = samples == 1 ? 0.0 : static_cast<double>(s) / (samples - 1);
    Eigen::Matrix<double, 8, 1> th;
    if (tp.mode == TaskMode::kDiscretizedQuaternion) {
      // states between knots are linear interpolations of the knot states
      const double u = tb * kk;
      const int i    = std::min(static_cast<int>(u), kk - 1);
      const double f = u - i;
      th = (1.0 - f) * x.segment(i * 28 + 6, 8) + f * x.segment((i + 1) * 28 + 6, 8);
    } else if (tp.mode == TaskMode::kBezierQuaternion) {
      const int np = tp.cfg.position_points;
      const Eigen::VectorXd w = bernstein_weights(np - 1, tb);
      th.setZero();
      for (int j = 0; j < np; ++j) { th += w[j] * x.segment(j * 14 + 6, 8); }
    } else {
      throw DomainError("use max_unit_norm_error for the (p, psi) formulation");
    }
    worst = std::max({worst, std::abs(th.head<4>().norm() - 1.0), std::abs(th.tail<4>().norm() - 1.0)});
  }
  return worst;
}

}  // namespace bmpc
