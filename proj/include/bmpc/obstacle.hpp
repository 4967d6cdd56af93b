#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "errors.hpp"

namespace bmpc {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Which monitored robot point an obstacle constrains.
enum class ObstacleTarget { kHands, kBase, kBoth };

/**
 * @brief Sphere obstacle. `d_safe` is the minimum allowed distance between the
 * obstacle center and the monitored point (end-effector midpoint, or the base
 * origin measured in the xy plane).
 */
struct Obstacle
{
  Eigen::Vector3d center{Eigen::Vector3d::Zero()};
  Eigen::Vector3d velocity{Eigen::Vector3d::Zero()};
  double d_safe{0.3};
  ObstacleTarget target{ObstacleTarget::kHands};

  bool affects_hands() const { return target != ObstacleTarget::kBase; }
  bool affects_base() const { return target != ObstacleTarget::kHands; }
  Eigen::Vector3d center_after(double dt) const { return center + velocity * dt; }
};

/// Center used for a constraint `dt` seconds ahead of the current time.
enum class ObstaclePrediction { kHold, kConstantVelocity };

inline Eigen::Vector3d predicted_center(const Obstacle & o, double dt, ObstaclePrediction policy)
{
  return policy == ObstaclePrediction::kConstantVelocity ? o.center_after(dt) : o.center;
}

inline void validate(const Obstacle & o)
{
  if (!o.center.allFinite() || !o.velocity.allFinite()) { throw ScenarioError("obstacle has non-finite center or velocity"); }
  if (!(o.d_safe > 0.0)) { throw ScenarioError("obstacle d_safe must be positive"); }
}

inline ObstacleTarget parse_obstacle_target(const std::string & s)
{
  if (s == "hands") { return ObstacleTarget::kHands; }
  if (s == "base") { return ObstacleTarget::kBase; }
  if (s == "both") { return ObstacleTarget::kBoth; }
  throw ScenarioError("unknown obstacle target '" + s + "'");
}

inline const char * to_string(ObstacleTarget t)
{
  switch (t) {
    case ObstacleTarget::kHands: return "hands";
    case ObstacleTarget::kBase: return "base";
    case ObstacleTarget::kBoth: return "both";
  }
  return "?";
}

}  // namespace bmpc
