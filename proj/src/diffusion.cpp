#include "ikdp/diffusion.hpp"

#include <algorithm>

namespace ikdp {

std::string_view to_string(Parameterization p) {
  return p == Parameterization::kPredictX0 ? "x0" : "eps";
}

Parameterization parse_parameterization(std::string_view text) {
  if (text == "x0") return Parameterization::kPredictX0;
  if (text == "eps") return Parameterization::kPredictEps;
  throw Error(ErrorCode::kInvalidArgument, "parameterization must be x0 or eps, got '" + std::string(text) + "'");
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw Error(ErrorCode::kInvalidArgument, "schedule needs at least 2 steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "need 0 < beta_start <= beta_end < 1, got " +
                                                 std::to_string(beta_start) + ", " + std::to_string(beta_end));
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<std::size_t>(steps);
  s.betas_.resize(n);
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  s.sigmas_.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    const double beta = i + 1 == n ? beta_end : beta_start + (beta_end - beta_start) * frac;
    s.betas_[i] = beta;
    s.alphas_[i] = 1.0 - beta;
    prod *= 1.0 - beta;
    s.alpha_bars_[i] = prod;
    s.sigmas_[i] = std::sqrt(beta);
  }
  return s;
}

std::pair<double, double> default_beta_range(int steps) {
  if (steps < 2) throw Error(ErrorCode::kInvalidArgument, "schedule needs at least 2 steps");
  const double scale = 1000.0 / static_cast<double>(steps);
  const double hi = std::min(0.02 * scale, 0.999);
  const double lo = std::min(1e-4 * scale, hi);
  return {lo, hi};
}

Eigen::MatrixXd p_sample_step(const Eigen::Ref<const Eigen::MatrixXd>& theta_t, int t,
                              const Eigen::Ref<const Eigen::MatrixXd>& model_output,
                              const Eigen::Ref<const Eigen::MatrixXd>& z, const NoiseSchedule& sched,
                              Parameterization param) {
  sched.check_step(t);
  if (model_output.rows() != theta_t.rows() || model_output.cols() != theta_t.cols() ||
      z.rows() != theta_t.rows() || z.cols() != theta_t.cols())
    throw Error(ErrorCode::kShapeMismatch, "p_sample_step operands differ in shape");
  if (t == 1 && !z.isZero(0.0)) throw Error(ErrorCode::kInvalidArgument, "z must be zero at the final step");
  const Eigen::MatrixXd eps =
      param == Parameterization::kPredictX0 ? x0_to_eps(theta_t, t, model_output, sched) : Eigen::MatrixXd(model_output);
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  return (theta_t - coef * eps) / std::sqrt(sched.alpha(t)) + sched.sigma(t) * z;
}

SampleResult sample(const DenoiseFn& denoiser, const Eigen::MatrixXd& targets, int num_joints,
                    const NoiseSchedule& sched, Parameterization param, Rng& rng, const SampleOptions& options) {
  const Eigen::Index batch = targets.rows();
  if (targets.cols() != 2) throw Error(ErrorCode::kShapeMismatch, "targets must be B x 2");
  if (num_joints < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one joint");

  auto normals = [&] {
    Eigen::MatrixXd m(batch, num_joints);
    for (Eigen::Index r = 0; r < batch; ++r)
      for (int c = 0; c < num_joints; ++c) m(r, c) = rng.normal();
    return m;
  };

  SampleResult result;
  Eigen::MatrixXd theta;
  if (options.initial.size() != 0) {
    if (options.initial.rows() != batch || options.initial.cols() != num_joints)
      throw Error(ErrorCode::kShapeMismatch, "initial state must be B x N");
    theta = options.initial;
  } else {
    theta = normals();
  }
  if (options.trace) {
    result.trace.reserve(static_cast<std::size_t>(sched.steps()) + 1);
    result.trace.push_back(theta);
  }
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(batch, num_joints);
  for (int t = sched.steps(); t >= 1; --t) {
    const Eigen::MatrixXd out = denoiser(theta, t, targets);
    if (out.rows() != batch || out.cols() != num_joints)
      throw Error(ErrorCode::kShapeMismatch, "denoiser output has wrong shape at step " + std::to_string(t));
    if (!out.allFinite())
      throw Error(ErrorCode::kNonFinite, "denoiser returned non-finite values at step " + std::to_string(t));
    if (t > 1 && options.stochastic)
      theta = p_sample_step(theta, t, out, normals(), sched, param);
    else
      theta = p_sample_step(theta, t, out, zero, sched, param);
    if (options.trace) result.trace.push_back(theta);
  }
  result.theta0 = std::move(theta);
  return result;
}

}  // namespace ikdp
