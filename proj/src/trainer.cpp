#include "ikdp/trainer.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "ikdp/adam.hpp"

namespace ikdp {

namespace {

// Stream salts so that init, batching and held-out evaluation draw from
// independent generators derived from one seed.
constexpr std::uint64_t kBatchSalt = 0x62617463685f7275ULL;
constexpr std::uint64_t kHoldoutSalt = 0x686f6c646f75745fULL;
constexpr std::uint64_t kEvalSalt = 0x6576616c5f726e67ULL;

}  // namespace

void TrainingConfig::validate() const {
  if (epochs < 0 || batch_size < 1 || !(lr > 0.0) || eval_interval < 1 || eval_targets < 1 || max_steps < 0)
    throw Error(ErrorCode::kInvalidArgument, "training sizes and learning rate must be positive");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "eval_fraction must lie in (0, 1)");
  NoiseSchedule::linear(timesteps, beta_start, beta_end);
}

DenoiseFn make_denoiser(const Checkpoint& ckpt) {
  if (ckpt.kind != ModelKind::kDiffusion) throw Error(ErrorCode::kCheckpointMismatch, "not a diffusion checkpoint");
  auto shared = std::make_shared<const Checkpoint>(ckpt);
  return [shared](const Eigen::MatrixXd& theta_t, int t, const Eigen::MatrixXd& targets) {
    return denoise(shared->params, shared->model, shared->chain, theta_t, t, targets);
  };
}

TrainResult train(const Dataset& ds, const TrainingConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot train on an empty dataset");

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.kind = ModelKind::kDiffusion;
  ckpt.chain = ds.chain;
  ckpt.model = cfg.model;
  ckpt.model.joints = ds.chain.num_joints();
  ckpt.model.param = cfg.param;
  ckpt.timesteps = cfg.timesteps;
  ckpt.beta_start = cfg.beta_start;
  ckpt.beta_end = cfg.beta_end;
  ckpt.seed = cfg.seed;
  {
    Rng init_rng(cfg.seed);
    ckpt.params = init_params(ckpt.model, init_rng);
  }
  const NoiseSchedule sched = ckpt.schedule();
  const int n = ds.chain.num_joints();

  // Held-out rows for Dist; the rest train.
  Dataset train_set = ds;
  Dataset holdout;
  const auto n_hold = static_cast<Index>(std::llround(cfg.eval_fraction * static_cast<double>(ds.size())));
  if (n_hold >= 1 && n_hold < ds.size()) {
    auto [tr, ho] = split(ds, 1.0 - static_cast<double>(n_hold) / static_cast<double>(ds.size()), cfg.seed ^ kHoldoutSalt);
    train_set = std::move(tr);
    holdout = std::move(ho);
    if (holdout.size() > cfg.eval_targets) {
      std::vector<Index> first(static_cast<std::size_t>(cfg.eval_targets));
      std::iota(first.begin(), first.end(), Index{0});
      holdout = subset(holdout, first);
    }
  }

  Rng rng(cfg.seed ^ kBatchSalt);
  AdamState<float> adam;
  const AdamConfig adam_cfg{cfg.lr};
  const Index rows = train_set.size();
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::vector<int> steps;
  Mat<float> theta0, eps, theta_t;
  long step = 0;
  bool stop = cfg.max_steps > 0 && step >= cfg.max_steps;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = rows - 1; i > 0; --i) {
      const auto j = static_cast<Index>(rng.index(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (Index begin = 0; begin < rows && !stop; begin += cfg.batch_size) {
      const Index batch = std::min<Index>(cfg.batch_size, rows - begin);
      theta0.resize(batch, n);
      eps.resize(batch, n);
      theta_t.resize(batch, n);
      Mat<float> targets(batch, 2);
      steps.assign(static_cast<std::size_t>(batch), 0);
      for (Index b = 0; b < batch; ++b) {
        const Index row = order[static_cast<std::size_t>(begin + b)];
        theta0.row(b) = train_set.thetas.row(row);
        targets.row(b) = train_set.targets.row(row);
        steps[static_cast<std::size_t>(b)] = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(cfg.timesteps)));
        for (int j = 0; j < n; ++j) eps(b, j) = static_cast<float>(rng.normal());
        theta_t.row(b) = q_sample(theta0.row(b), steps[static_cast<std::size_t>(b)], eps.row(b), sched);
      }

      ++step;
      double loss_value = 0.0;
      try {
        Graph<float> g(&ckpt.params);
        Var<float> out = denoiser_forward<float>(g, ckpt.model, ds.chain, theta_t, steps, targets);
        const Mat<float>& truth = cfg.param == Parameterization::kPredictX0 ? theta0 : eps;
        Var<float> loss = mse(out, g.constant(Array<float>(Shape{batch, n}, truth)));
        loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) throw Error(ErrorCode::kNonFinite, "loss is not finite");
        adam_step(ckpt.params, g.backward(loss), adam, adam_cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kNonFinite, "training step " + std::to_string(step) + ": " + e.detail());
      }

      LogEntry entry{step, loss_value, std::nullopt};
      if (holdout.size() > 0 && (step == 1 || step % cfg.eval_interval == 0)) {
        Rng eval_rng(cfg.seed ^ kEvalSalt);
        ckpt.steps = step;
        entry.dist = evaluate(make_denoiser(ckpt), sched, cfg.param, holdout, 1, eval_rng).mean_target_distance;
      }
      result.log.push_back(entry);
      stop = cfg.max_steps > 0 && step >= cfg.max_steps;
    }
  }
  ckpt.steps = step;

  if (!cfg.checkpoint_path.empty()) save_checkpoint(ckpt, cfg.checkpoint_path);
  if (!cfg.log_path.empty()) write_log_csv(result.log, cfg.log_path);
  return result;
}

void write_log_csv(const std::vector<LogEntry>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "step,loss,dist\n";
  for (const auto& e : log) {
    out << e.step << ',' << format_double(e.loss) << ',';
    if (e.dist) out << format_double(*e.dist);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

EvalMetrics evaluate(const DenoiseFn& denoiser, const NoiseSchedule& sched, Parameterization param,
                     const Dataset& targets, int samples_per_target, Rng& rng) {
  if (targets.size() == 0) throw Error(ErrorCode::kInvalidArgument, "evaluation needs at least one target");
  if (samples_per_target < 1) throw Error(ErrorCode::kInvalidArgument, "samples_per_target must be positive");
  constexpr Index kChunk = 256;
  const int n = targets.chain.num_joints();
  double angle_sum = 0.0, target_sum = 0.0;
  Index count = 0;
  for (int s = 0; s < samples_per_target; ++s) {
    for (Index begin = 0; begin < targets.size(); begin += kChunk) {
      const Index rows = std::min(kChunk, targets.size() - begin);
      const Eigen::MatrixXd tg = targets.targets.middleRows(begin, rows).cast<double>();
      const Eigen::MatrixXd truth = targets.thetas.middleRows(begin, rows).cast<double>();
      const SampleResult res = sample(denoiser, tg, n, sched, param, rng);
      const auto tips = forward_kinematics_batch(targets.chain, res.theta0);
      for (Index r = 0; r < rows; ++r) {
        angle_sum += angle_distance(truth.row(r).transpose(), res.theta0.row(r).transpose());
        target_sum += (tips.row(r) - tg.row(r)).norm();
        ++count;
      }
    }
  }
  return {angle_sum / static_cast<double>(count), target_sum / static_cast<double>(count), count};
}

EvalMetrics eval(const Checkpoint& ckpt, const Dataset& targets, int samples_per_target, Rng& rng) {
  if (ckpt.kind != ModelKind::kDiffusion) throw Error(ErrorCode::kCheckpointMismatch, "not a diffusion checkpoint");
  if (!(ckpt.chain == targets.chain))
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint chain has " + std::to_string(ckpt.chain.num_joints()) +
                                                    " joints, targets have " + std::to_string(targets.chain.num_joints()));
  return evaluate(make_denoiser(ckpt), ckpt.schedule(), ckpt.param(), targets, samples_per_target, rng);
}

}  // namespace ikdp
