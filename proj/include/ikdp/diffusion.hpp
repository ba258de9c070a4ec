#pragma once

// Gaussian diffusion over joint-angle vectors.
//
// Steps are 1-based: t = 1..T. Batched states are B x N matrices, one chain
// configuration per row; single configurations may be passed as vectors.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ikdp/error.hpp"
#include "ikdp/rng.hpp"

namespace ikdp {

enum class Parameterization { kPredictX0, kPredictEps };

std::string_view to_string(Parameterization p);
/// Accepts "x0" or "eps".
Parameterization parse_parameterization(std::string_view text);

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Betas interpolated linearly from beta_start (t = 1) to beta_end (t = T)
  /// inclusive. Products are formed in double.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }
  /// sigma_t = sqrt(beta_t).
  double sigma(int t) const { return sigmas_[index(t)]; }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  void check_step(int t) const {
    if (t < 1 || t > steps())
      throw Error(ErrorCode::kOutOfRange, "step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }

 private:
  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_, alphas_, alpha_bars_, sigmas_;
};

inline NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule::linear(steps, beta_start, beta_end);
}

/// Default beta range for a T-step chain: the 1e-4 .. 0.02 range of a
/// 1000-step chain compressed to T steps (both ends scaled by 1000 / T, the
/// upper end capped at 0.999). Every T then ends at the same near-pure-noise
/// level, alpha_bar_T < 1e-4 for T >= 21.
std::pair<double, double> default_beta_range(int steps);

/// theta_t = sqrt(abar_t) theta_0 + sqrt(1 - abar_t) eps.
template <typename D0, typename DE>
typename D0::PlainObject q_sample(const Eigen::MatrixBase<D0>& theta0, int t, const Eigen::MatrixBase<DE>& eps,
                                  const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  using S = typename D0::Scalar;
  return static_cast<S>(std::sqrt(ab)) * theta0 + static_cast<S>(std::sqrt(1.0 - ab)) * eps;
}

/// theta_0 estimate implied by a noise estimate at step t.
template <typename DT, typename DE>
typename DT::PlainObject eps_to_x0(const Eigen::MatrixBase<DT>& theta_t, int t, const Eigen::MatrixBase<DE>& eps,
                                   const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  using S = typename DT::Scalar;
  return (theta_t - static_cast<S>(std::sqrt(1.0 - ab)) * eps) / static_cast<S>(std::sqrt(ab));
}

/// Noise estimate implied by a theta_0 estimate at step t.
template <typename DT, typename DX>
typename DT::PlainObject x0_to_eps(const Eigen::MatrixBase<DT>& theta_t, int t, const Eigen::MatrixBase<DX>& x0,
                                   const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  using S = typename DT::Scalar;
  return (theta_t - static_cast<S>(std::sqrt(ab)) * x0) / static_cast<S>(std::sqrt(1.0 - ab));
}

/// One ancestral step:
///   theta_{t-1} = (theta_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sigma_t z
/// where eps is the model output, or derived from it when the model predicts
/// theta_0. z must be zero at t == 1.
Eigen::MatrixXd p_sample_step(const Eigen::Ref<const Eigen::MatrixXd>& theta_t, int t,
                              const Eigen::Ref<const Eigen::MatrixXd>& model_output,
                              const Eigen::Ref<const Eigen::MatrixXd>& z, const NoiseSchedule& sched,
                              Parameterization param);

/// Model callback: (theta_t [B x N], step, targets [B x 2]) -> output [B x N].
using DenoiseFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int, const Eigen::MatrixXd&)>;

struct SampleOptions {
  /// Keep every intermediate state, theta_T first and theta_0 last.
  bool trace = false;
  /// When false all z are zero, so the chain is deterministic given theta_T.
  bool stochastic = true;
  /// Start state; drawn from N(0, I) when empty.
  Eigen::MatrixXd initial;
};

struct SampleResult {
  Eigen::MatrixXd theta0;
  std::vector<Eigen::MatrixXd> trace;
};

/// Runs t = T..1 from theta_T ~ N(0, I), one chain per target row. Random
/// draws come from `rng` in a fixed order: theta_T row-major, then z for each
/// step t > 1 row-major.
SampleResult sample(const DenoiseFn& denoiser, const Eigen::MatrixXd& targets, int num_joints,
                    const NoiseSchedule& sched, Parameterization param, Rng& rng, const SampleOptions& options = {});

}  // namespace ikdp
