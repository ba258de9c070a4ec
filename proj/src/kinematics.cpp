#include "ikdp/kinematics.hpp"

#include <algorithm>
#include <numeric>

namespace ikdp {

ChainSpec::ChainSpec(std::vector<double> bone_lengths) : bones_(std::move(bone_lengths)) {
  if (bones_.empty()) throw Error(ErrorCode::kInvalidArgument, "chain needs at least one joint");
  for (double b : bones_)
    if (!(b > 0.0) || !std::isfinite(b))
      throw Error(ErrorCode::kInvalidArgument, "bone lengths must be finite and positive");
  reach_ = std::accumulate(bones_.begin(), bones_.end(), 0.0);
}

ChainSpec ChainSpec::unit(int num_joints) {
  if (num_joints < 1) throw Error(ErrorCode::kInvalidArgument, "chain needs at least one joint");
  return ChainSpec(std::vector<double>(static_cast<std::size_t>(num_joints), 1.0));
}

bool ChainSpec::unit_bones() const noexcept {
  return std::all_of(bones_.begin(), bones_.end(), [](double b) { return b == 1.0; });
}

Eigen::Matrix2Xd joint_positions(const ChainSpec& chain, const Eigen::Ref<const Eigen::VectorXd>& theta) {
  detail::check_length(chain, theta.size());
  const int n = chain.num_joints();
  Eigen::Matrix2Xd points(2, n + 1);
  points.col(0).setZero();
  for (int k = 0; k < n; ++k) {
    const double b = chain.bone_lengths()[static_cast<std::size_t>(k)];
    points.col(k + 1) = points.col(k) + b * Eigen::Vector2d(std::cos(theta(k)), std::sin(theta(k)));
  }
  return points;
}

double target_distance(const Point2& a, const Point2& b) { return (a - b).norm(); }

double angle_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::kShapeMismatch,
                "angle vectors differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  return (a - b).norm();
}

double wrapped_angle_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::kShapeMismatch,
                "angle vectors differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = std::fmod(a(i) - b(i) + std::numbers::pi, kTwoPi);
    if (d < 0.0) d += kTwoPi;
    d -= std::numbers::pi;
    total += d * d;
  }
  return std::sqrt(total);
}

bool reachable(const ChainSpec& chain, const Point2& t) {
  const double r = t.norm();
  if (chain.num_joints() == 1) return std::abs(r - chain.reach()) <= 1e-9;
  return r <= chain.reach();
}

}  // namespace ikdp
