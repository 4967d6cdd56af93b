#pragma once

/**
 * @file
 * @brief Kinematic tree of a dual-arm mobile manipulator.
 *
 * Joint order is the order of declaration in the model document and equals
 * the index into the configuration vector q. The bundled model has 18 DOF:
 * base (x, y, yaw), chest pitch, head pan/tilt, right arm (6), left arm (6).
 *
 * Model document format, one statement per line, '#' starts a comment:
 *
 *   joint <name> <prismatic|revolute> <parent|world> [axis ax ay az] [offset x y z]
 *         [rpy roll pitch yaw] [limits qmin qmax] [velocity vmin vmax]
 *   frame <name> <parent> [offset x y z] [rpy roll pitch yaw]
 *
 * A joint frame is its parent frame, translated by `offset`, rotated by `rpy`
 * (R = Rz(yaw) Ry(pitch) Rx(roll)), then moved by the joint variable along or
 * about the local `axis`. Frames `right_palm` and `left_palm` are required.
 */

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rotation.hpp"

namespace bmpc {

enum class JointType { kPrismatic, kRevolute };

struct Joint
{
  std::string name;
  JointType type{JointType::kRevolute};
  int parent{-1};  ///< joint index, -1 for the world
  Vec3<double> axis{0.0, 0.0, 1.0};
  Vec3<double> offset{};
  Quat<double> fixed_rotation{};
  double q_min{-1.0}, q_max{1.0};
  double qd_min{-1.0}, qd_max{1.0};
};

struct FrameSpec
{
  std::string name;
  int parent{-1};
  Vec3<double> offset{};
  Quat<double> fixed_rotation{};
};

/// Body groups of the configuration vector.
enum class BodyGroup {
  kUpper,            ///< rows 3..17: chest, head, both arms
  kBase,             ///< rows 0..2: x, y, yaw
  kBaseTranslation,  ///< rows 0..1
};

inline constexpr int kNumDof         = 18;
inline constexpr int kNumUpperDof    = 15;
inline constexpr int kBaseYawIndex   = 2;

inline std::pair<int, int> group_rows(BodyGroup g)
{
  switch (g) {
    case BodyGroup::kUpper: return {3, 15};
    case BodyGroup::kBase: return {0, 3};
    case BodyGroup::kBaseTranslation: return {0, 2};
  }
  return {0, 0};
}

inline Quat<double> rpy_to_quaternion(double roll, double pitch, double yaw)
{
  const Quat<double> qx = axis_angle(Vec3<double>{1, 0, 0}, roll);
  const Quat<double> qy = axis_angle(Vec3<double>{0, 1, 0}, pitch);
  const Quat<double> qz = axis_angle(Vec3<double>{0, 0, 1}, yaw);
  return qz * qy * qx;
}

/**
 * @brief Validated tree of joints plus the two palm frames.
 */
class KinematicModel
{
public:
  KinematicModel(std::vector<Joint> joints, std::vector<FrameSpec> frames) : joints_(std::move(joints)), frames_(std::move(frames))
  {
    const int n = static_cast<int>(joints_.size());
    for (const auto & j : joints_) {
      if (j.parent < -1 || j.parent >= n) { throw ParseError("joint '" + j.name + "' has an unknown parent"); }
      if (!(j.q_min < j.q_max)) { throw LimitOrderError("joint '" + j.name + "' has q_min >= q_max"); }
      if (!(j.qd_min < 0.0 && 0.0 < j.qd_max)) { throw LimitOrderError("joint '" + j.name + "' needs qd_min < 0 < qd_max"); }
    }
    // topological order; a parent chain that revisits a joint is a loop
    std::vector<int> state(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) { visit(i, state); }

    right_palm_ = find_frame("right_palm");
    left_palm_  = find_frame("left_palm");

    // joints that move either palm, in topological order
    std::vector<bool> needed(static_cast<std::size_t>(n), false);
    for (int f : {right_palm_, left_palm_}) {
      for (int j = frames_[f].parent; j >= 0; j = joints_[j].parent) { needed[j] = true; }
    }
    for (int j : order_) {
      if (needed[j]) { palm_chain_.push_back(j); }
    }
  }

  int dof() const { return static_cast<int>(joints_.size()); }
  const std::vector<Joint> & joints() const { return joints_; }
  const Joint & joint(int i) const { return joints_.at(static_cast<std::size_t>(i)); }
  const std::vector<FrameSpec> & frames() const { return frames_; }
  const FrameSpec & right_palm() const { return frames_[right_palm_]; }
  const FrameSpec & left_palm() const { return frames_[left_palm_]; }
  const std::vector<int> & topological_order() const { return order_; }
  const std::vector<int> & palm_chain() const { return palm_chain_; }

  Eigen::VectorXd q_min() const { return collect([](const Joint & j) { return j.q_min; }); }
  Eigen::VectorXd q_max() const { return collect([](const Joint & j) { return j.q_max; }); }
  Eigen::VectorXd qd_min() const { return collect([](const Joint & j) { return j.qd_min; }); }
  Eigen::VectorXd qd_max() const { return collect([](const Joint & j) { return j.qd_max; }); }

  int index_of(const std::string & name) const
  {
    for (int i = 0; i < dof(); ++i) {
      if (joints_[i].name == name) { return i; }
    }
    return -1;
  }

private:
  template<class F>
  Eigen::VectorXd collect(F f) const
  {
    Eigen::VectorXd v(dof());
    for (int i = 0; i < dof(); ++i) { v[i] = f(joints_[i]); }
    return v;
  }

  void visit(int i, std::vector<int> & state)
  {
    if (state[i] == 2) { return; }
    if (state[i] == 1) { throw LoopDetectedError("kinematic loop through joint '" + joints_[i].name + "'"); }
    state[i] = 1;
    if (joints_[i].parent >= 0) { visit(joints_[i].parent, state); }
    state[i] = 2;
    order_.push_back(i);
  }

  int find_frame(const std::string & name) const
  {
    for (std::size_t k = 0; k < frames_.size(); ++k) {
      if (frames_[k].name == name) {
        if (frames_[k].parent < -1 || frames_[k].parent >= dof()) { throw ParseError("frame '" + name + "' has an unknown parent"); }
        return static_cast<int>(k);
      }
    }
    throw ParseError("model lacks the required frame '" + name + "'");
  }

  std::vector<Joint> joints_;
  std::vector<FrameSpec> frames_;
  std::vector<int> order_;
  std::vector<int> palm_chain_;
  int right_palm_{-1};
  int left_palm_{-1};
};

namespace detail {

inline std::vector<double> read_numbers(std::istringstream & in, int count, const std::string & key, int line)
{
  std::vector<double> v(static_cast<std::size_t>(count));
  for (auto & x : v) {
    if (!(in >> x)) { throw ParseError("line " + std::to_string(line) + ": '" + key + "' expects " + std::to_string(count) + " numbers"); }
  }
  return v;
}

}  // namespace detail

/// Parse a model document (see file comment for the format).
inline KinematicModel parse_model(const std::string & text)
{
  struct PendingJoint
  {
    Joint joint;
    std::string parent;
  };
  struct PendingFrame
  {
    FrameSpec frame;
    std::string parent;
  };
  std::vector<PendingJoint> joints;
  std::vector<PendingFrame> frames;

  std::istringstream doc(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(doc, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) { raw.erase(hash); }
    std::istringstream in(raw);
    std::string kind;
    if (!(in >> kind)) { continue; }
    const std::string where = "line " + std::to_string(line_no) + ": ";

    if (kind == "joint") {
      PendingJoint pj;
      std::string type;
      if (!(in >> pj.joint.name >> type >> pj.parent)) { throw ParseError(where + "joint needs <name> <type> <parent>"); }
      if (type == "prismatic") {
        pj.joint.type = JointType::kPrismatic;
      } else if (type == "revolute") {
        pj.joint.type = JointType::kRevolute;
      } else {
        throw ParseError(where + "unknown joint type '" + type + "'");
      }
      std::string key;
      while (in >> key) {
        if (key == "axis") {
          auto v = detail::read_numbers(in, 3, key, line_no);
          const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
          if (!(n > 0.0)) { throw ParseError(where + "zero joint axis"); }
          pj.joint.axis = {v[0] / n, v[1] / n, v[2] / n};
        } else if (key == "offset") {
          auto v           = detail::read_numbers(in, 3, key, line_no);
          pj.joint.offset = {v[0], v[1], v[2]};
        } else if (key == "rpy") {
          auto v                    = detail::read_numbers(in, 3, key, line_no);
          pj.joint.fixed_rotation = rpy_to_quaternion(v[0], v[1], v[2]);
        } else if (key == "limits") {
          auto v         = detail::read_numbers(in, 2, key, line_no);
          pj.joint.q_min = v[0];
          pj.joint.q_max = v[1];
        } else if (key == "velocity") {
          auto v          = detail::read_numbers(in, 2, key, line_no);
          pj.joint.qd_min = v[0];
          pj.joint.qd_max = v[1];
        } else {
          throw ParseError(where + "unknown joint key '" + key + "'");
        }
      }
      joints.push_back(std::move(pj));
    } else if (kind == "frame") {
      PendingFrame pf;
      if (!(in >> pf.frame.name >> pf.parent)) { throw ParseError(where + "frame needs <name> <parent>"); }
      std::string key;
      while (in >> key) {
        if (key == "offset") {
          auto v           = detail::read_numbers(in, 3, key, line_no);
          pf.frame.offset = {v[0], v[1], v[2]};
        } else if (key == "rpy") {
          auto v                    = detail::read_numbers(in, 3, key, line_no);
          pf.frame.fixed_rotation = rpy_to_quaternion(v[0], v[1], v[2]);
        } else {
          throw ParseError(where + "unknown frame key '" + key + "'");
        }
      }
      frames.push_back(std::move(pf));
    } else {
      throw ParseError(where + "unknown statement '" + kind + "'");
    }
  }

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    if (!index.emplace(joints[i].joint.name, static_cast<int>(i)).second) {
      throw ParseError("duplicate joint name '" + joints[i].joint.name + "'");
    }
  }
  auto resolve = [&](const std::string & parent, const std::string & child) {
    if (parent == "world") { return -1; }
    auto it = index.find(parent);
    if (it == index.end()) { throw ParseError("'" + child + "' refers to unknown parent '" + parent + "'"); }
    return it->second;
  };

  std::vector<Joint> out_joints;
  for (auto & pj : joints) {
    pj.joint.parent = resolve(pj.parent, pj.joint.name);
    out_joints.push_back(pj.joint);
  }
  std::vector<FrameSpec> out_frames;
  for (auto & pf : frames) {
    pf.frame.parent = resolve(pf.parent, pf.frame.name);
    out_frames.push_back(pf.frame);
  }
  return KinematicModel(std::move(out_joints), std::move(out_frames));
}

/// Bundled default model: 3-DOF holonomic base plus a 15-DOF humanoid upper body.
inline constexpr const char * kEvaLikeModel = R"(# EVA-like dual-arm mobile manipulator, 18 DOF
# base: holonomic x / y / yaw in the inertial frame
joint base_x     prismatic world      axis 1 0 0 limits -50 50   velocity -0.6 0.6
joint base_y     prismatic base_x     axis 0 1 0 limits -50 50   velocity -0.6 0.6
joint base_yaw   revolute  base_y     axis 0 0 1 limits -100 100 velocity -1.0 1.0
# upper body
joint chest      revolute  base_yaw   axis 0 1 0 offset 0 0 0.35 limits -0.3 0.6 velocity -0.8 0.8
joint head_pan   revolute  chest      axis 0 0 1 offset 0 0 0.60 limits -1.2 1.2 velocity -1.5 1.5
joint head_tilt  revolute  head_pan   axis 0 1 0 limits -0.6 0.8 velocity -1.5 1.5
# right arm: shoulder pitch / roll / yaw, elbow, wrist roll / yaw
joint r_sh_pitch revolute  chest      axis 0 1 0 offset 0 -0.22 0.45 limits -2.6 2.6 velocity -1.5 1.5
joint r_sh_roll  revolute  r_sh_pitch axis 1 0 0 limits -1.6 1.0 velocity -1.5 1.5
joint r_sh_yaw   revolute  r_sh_roll  axis 0 0 1 limits -2.0 2.0 velocity -1.5 1.5
joint r_elbow    revolute  r_sh_yaw   axis 0 1 0 offset 0 0 -0.28 limits -1.2 2.0 velocity -1.5 1.5
joint r_wr_roll  revolute  r_elbow    axis 1 0 0 offset 0.28 0 0 limits -2.0 2.0 velocity -2.0 2.0
joint r_wr_yaw   revolute  r_wr_roll  axis 0 0 1 limits -1.2 1.2 velocity -2.0 2.0
# left arm
joint l_sh_pitch revolute  chest      axis 0 1 0 offset 0 0.22 0.45 limits -2.6 2.6 velocity -1.5 1.5
joint l_sh_roll  revolute  l_sh_pitch axis 1 0 0 limits -1.0 1.6 velocity -1.5 1.5
joint l_sh_yaw   revolute  l_sh_roll  axis 0 0 1 limits -2.0 2.0 velocity -1.5 1.5
joint l_elbow    revolute  l_sh_yaw   axis 0 1 0 offset 0 0 -0.28 limits -1.2 2.0 velocity -1.5 1.5
joint l_wr_roll  revolute  l_elbow    axis 1 0 0 offset 0.28 0 0 limits -2.0 2.0 velocity -2.0 2.0
joint l_wr_yaw   revolute  l_wr_roll  axis 0 0 1 limits -1.2 1.2 velocity -2.0 2.0
# palms: z axis is the palm normal; at q = 0 the palms face each other
frame right_palm r_wr_yaw offset 0.12 0 0 rpy -1.5707963267948966 0 0
frame left_palm  l_wr_yaw offset 0.12 0 0 rpy 1.5707963267948966 0 0
)";

inline KinematicModel default_model() { return parse_model(kEvaLikeModel); }

inline KinematicModel load_model(const std::string & path)
{
  if (path.empty() || path == "default" || path == "eva_like") { return default_model(); }
  std::ifstream in(path);
  if (!in) { throw ParseError("cannot open model file '" + path + "'"); }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

template<class T>
struct PoseT
{
  Vec3<T> p{};
  Quat<T> q{};
};

template<class T>
PoseT<T> compose(const PoseT<T> & a, const Vec3<double> & offset, const Quat<double> & rot)
{
  const Vec3<T> o{T(offset.x), T(offset.y), T(offset.z)};
  const Quat<T> r{T(rot.w), T(rot.x), T(rot.y), T(rot.z)};
  return {a.p + rotate(a.q, o), a.q * r};
}

/**
 * @brief Palm poses (right, left) in the inertial frame; generic in the scalar for differentiation.
 */
template<class T>
std::pair<PoseT<T>, PoseT<T>> palm_poses(const KinematicModel & model, std::span<const T> q)
{
  if (static_cast<int>(q.size()) != model.dof()) {
    throw DimensionMismatchError("configuration has " + std::to_string(q.size()) + " entries, model has " + std::to_string(model.dof()));
  }
  std::vector<PoseT<T>> frames(static_cast<std::size_t>(model.dof()));
  for (int idx : model.palm_chain()) {
    const Joint & j = model.joint(idx);
    const PoseT<T> parent = j.parent >= 0 ? frames[j.parent] : PoseT<T>{};
    PoseT<T> f = compose(parent, j.offset, j.fixed_rotation);
    if (j.type == JointType::kRevolute) {
      f.q = f.q * axis_angle(j.axis, q[idx]);
    } else {
      const Vec3<T> a{T(j.axis.x), T(j.axis.y), T(j.axis.z)};
      f.p = f.p + rotate(f.q, a * q[idx]);
    }
    frames[idx] = f;
  }
  auto palm = [&](const FrameSpec & fs) {
    const PoseT<T> parent = fs.parent >= 0 ? frames[fs.parent] : PoseT<T>{};
    return compose(parent, fs.offset, fs.fixed_rotation);
  };
  return {palm(model.right_palm()), palm(model.left_palm())};
}

struct EndEffectorPose
{
  Eigen::Vector3d position{Eigen::Vector3d::Zero()};
  UnitQuaternion orientation{};
  Eigen::Matrix3d rotation{Eigen::Matrix3d::Identity()};
};

inline EndEffectorPose to_pose(const PoseT<double> & p)
{
  EndEffectorPose out;
  out.position    = {p.p.x, p.p.y, p.p.z};
  out.orientation = UnitQuaternion::normalized(p.q);
  out.rotation    = quaternion_to_rotation(out.orientation);
  return out;
}

inline std::pair<EndEffectorPose, EndEffectorPose> forward_kinematics(const KinematicModel & model, const Eigen::Ref<const Eigen::VectorXd> & q)
{
  if (q.size() != model.dof()) {
    throw DimensionMismatchError("configuration has " + std::to_string(q.size()) + " entries, model has " + std::to_string(model.dof()));
  }
  const auto [r, l] = palm_poses<double>(model, std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
  return {to_pose(r), to_pose(l)};
}

/**
 * @brief Palm transforms by a chain of 4x4 homogeneous matrices.
 *
 * Shares no code with palm_poses() beyond the model; the simulator's safety
 * monitor uses it so that a defect in the planners' kinematics cannot hide
 * a clearance violation.
 */
inline std::pair<Eigen::Isometry3d, Eigen::Isometry3d> forward_kinematics_homogeneous(
  const KinematicModel & model, const Eigen::Ref<const Eigen::VectorXd> & q)
{
  if (q.size() != model.dof()) { throw DimensionMismatchError("configuration dimension mismatch"); }
  auto fixed = [](const Vec3<double> & offset, const Quat<double> & rot) {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.translate(Eigen::Vector3d(offset.x, offset.y, offset.z));
    t.rotate(Eigen::Quaterniond(rot.w, rot.x, rot.y, rot.z).toRotationMatrix());
    return t;
  };
  std::vector<Eigen::Isometry3d> world(static_cast<std::size_t>(model.dof()), Eigen::Isometry3d::Identity());
  for (int idx : model.topological_order()) {
    const Joint & j = model.joint(idx);
    const Eigen::Isometry3d parent = j.parent >= 0 ? world[j.parent] : Eigen::Isometry3d::Identity();
    const Eigen::Vector3d axis(j.axis.x, j.axis.y, j.axis.z);
    Eigen::Isometry3d motion = Eigen::Isometry3d::Identity();
    if (j.type == JointType::kRevolute) {
      motion.linear() = Eigen::AngleAxisd(q[idx], axis).toRotationMatrix();
    } else {
      motion.translation() = axis * q[idx];
    }
    world[idx] = parent * fixed(j.offset, j.fixed_rotation) * motion;
  }
  auto palm = [&](const FrameSpec & fs) {
    const Eigen::Isometry3d parent = fs.parent >= 0 ? world[fs.parent] : Eigen::Isometry3d::Identity();
    return Eigen::Isometry3d(parent * fixed(fs.offset, fs.fixed_rotation));
  };
  return {palm(model.right_palm()), palm(model.left_palm())};
}

/// (p_right + p_left) / 2
template<class T>
Vec3<T> midpoint(const Vec3<T> & right, const Vec3<T> & left)
{
  return (right + left) * T(0.5);
}

inline Eigen::Vector3d midpoint(const Eigen::Vector3d & right, const Eigen::Vector3d & left) { return 0.5 * (right + left); }

/// Rows of a configuration vector or control-point matrix belonging to a body group.
inline Eigen::MatrixXd select_group(const Eigen::Ref<const Eigen::MatrixXd> & q_or_cpm, BodyGroup group)
{
  if (q_or_cpm.rows() != kNumDof) {
    throw DimensionMismatchError("expected " + std::to_string(kNumDof) + " rows, got " + std::to_string(q_or_cpm.rows()));
  }
  const auto [first, count] = group_rows(group);
  return q_or_cpm.middleRows(first, count);
}

}  // namespace bmpc
