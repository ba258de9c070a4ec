#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ikdp/checkpoint.hpp"
#include "ikdp/dataset.hpp"

namespace ikdp {

struct TrainingConfig {
  int epochs = 20;
  int batch_size = 128;
  double lr = 1e-3;
  int timesteps = 80;
  double beta_start = default_beta_range(80).first;
  double beta_end = default_beta_range(80).second;
  Parameterization param = Parameterization::kPredictX0;
  std::uint64_t seed = 0;
  /// Share of the dataset held out for the logged Dist metric.
  double eval_fraction = 0.02;
  /// Dist is logged at step 1 and every eval_interval steps.
  int eval_interval = 100;
  /// Held-out targets sampled per Dist evaluation.
  int eval_targets = 32;
  /// Stop after this many optimizer steps (0 = run all epochs).
  long max_steps = 0;
  /// Width/depth; `joints` and `param` are overwritten from the dataset and
  /// the field above.
  DenoiserConfig model;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;

  void validate() const;
};

/// One training-log row. `dist` is set on evaluation steps only.
struct LogEntry {
  long step = 0;
  double loss = 0.0;
  std::optional<double> dist;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogEntry> log;
};

/// Minibatch training of the conditional denoiser. Per row: t ~ U{1..T},
/// eps ~ N(0, I), theta_t = q_sample(theta_0, t, eps); the loss is the MSE
/// between the network output and theta_0 (x0) or eps (eps). Reference mode:
/// single-threaded and bit-deterministic in cfg.seed.
TrainResult train(const Dataset& ds, const TrainingConfig& cfg);

/// CSV "step,loss,dist"; dist empty where not evaluated.
void write_log_csv(const std::vector<LogEntry>& log, const std::filesystem::path& path);

struct EvalMetrics {
  /// Mean over all samples of angle_distance(theta, theta_hat).
  double mean_angle_distance = 0.0;
  /// Mean over all samples of |t - FK(theta_hat)|.
  double mean_target_distance = 0.0;
  Index samples = 0;
};

/// Runs the full sampler for every target of `targets` (whose thetas are the
/// ground truth) and averages both metrics.
EvalMetrics evaluate(const DenoiseFn& denoiser, const NoiseSchedule& sched, Parameterization param,
                     const Dataset& targets, int samples_per_target, Rng& rng);

/// evaluate() with the checkpoint's own network and schedule.
EvalMetrics eval(const Checkpoint& ckpt, const Dataset& targets, int samples_per_target, Rng& rng);

/// Denoiser callback bound to a diffusion checkpoint.
DenoiseFn make_denoiser(const Checkpoint& ckpt);

}  // namespace ikdp
