#pragma once

// Planar N-link chain with absolute joint angles: bone k points at angle
// theta[k] from +x in the world frame, so the tip is
//   t = sum_k b_k (cos theta_k, sin theta_k).

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "ikdp/error.hpp"

namespace ikdp {

using Point2 = Eigen::Vector2d;
using JointAngles = Eigen::VectorXd;

class ChainSpec {
 public:
  ChainSpec() = default;
  explicit ChainSpec(std::vector<double> bone_lengths);

  /// N unit-length bones.
  static ChainSpec unit(int num_joints);

  int num_joints() const noexcept { return static_cast<int>(bones_.size()); }
  const std::vector<double>& bone_lengths() const noexcept { return bones_; }
  Eigen::Map<const Eigen::VectorXd> bones() const { return {bones_.data(), static_cast<Eigen::Index>(bones_.size())}; }
  double reach() const noexcept { return reach_; }
  bool unit_bones() const noexcept;

  bool operator==(const ChainSpec& o) const noexcept { return bones_ == o.bones_; }

 private:
  std::vector<double> bones_;
  double reach_ = 0.0;
};

namespace detail {
inline void check_length(const ChainSpec& chain, Eigen::Index n) {
  if (n != chain.num_joints())
    throw Error(ErrorCode::kShapeMismatch, "chain has " + std::to_string(chain.num_joints()) + " joints, got " +
                                               std::to_string(n) + " angles");
}
}  // namespace detail

/// Tip position by the closed-form sum of cosines and sines.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 2, 1> forward_kinematics(const ChainSpec& chain,
                                                                 const Eigen::MatrixBase<Derived>& theta) {
  using Scalar = typename Derived::Scalar;
  detail::check_length(chain, theta.size());
  const auto b = chain.bones().template cast<Scalar>();
  return {b.dot(theta.array().cos().matrix()), b.dot(theta.array().sin().matrix())};
}

/// Batched tip positions: one row of angles in, one row (x, y) out. The whole
/// block is evaluated as two matrix-vector products.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 2> forward_kinematics_batch(
    const ChainSpec& chain, const Eigen::MatrixBase<Derived>& thetas) {
  using Scalar = typename Derived::Scalar;
  detail::check_length(chain, thetas.cols());
  const auto b = chain.bones().template cast<Scalar>();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 2> tips(thetas.rows(), 2);
  tips.col(0).noalias() = thetas.array().cos().matrix() * b;
  tips.col(1).noalias() = thetas.array().sin().matrix() * b;
  return tips;
}

/// Joint positions p_0 = origin, p_{k+1} = p_k + b_k (cos theta_k, sin theta_k),
/// as the columns of a 2 x (N+1) matrix.
Eigen::Matrix2Xd joint_positions(const ChainSpec& chain, const Eigen::Ref<const Eigen::VectorXd>& theta);

/// Euclidean distance between two tip positions.
double target_distance(const Point2& a, const Point2& b);

/// Plain L2 distance between joint-angle vectors; no wrapping.
double angle_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

/// L2 distance with each component difference wrapped into [-pi, pi).
/// Diagnostic only; training and the reported metrics use angle_distance.
double wrapped_angle_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

/// Whether the tip can be placed at t. A single bone only reaches its circle.
bool reachable(const ChainSpec& chain, const Point2& t);

/// Rotation of a planar point by delta radians about the origin.
inline Point2 rotate(const Point2& p, double delta) { return Eigen::Rotation2Dd(delta) * p; }

}  // namespace ikdp
