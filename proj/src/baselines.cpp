#include "ikdp/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <thread>

#include "ikdp/adam.hpp"

namespace ikdp {

namespace {
constexpr std::uint64_t kBatchSalt = 0x6d6c705f62617463ULL;
}

std::vector<std::pair<std::string, Shape>> mlp_layout(int joints, const std::vector<int>& hidden) {
  if (joints < 1) throw Error(ErrorCode::kInvalidArgument, "MLP needs at least one output joint");
  std::vector<std::pair<std::string, Shape>> out;
  Index fan_in = 2;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l] < 1) throw Error(ErrorCode::kInvalidArgument, "MLP widths must be positive");
    const std::string p = "mlp.l" + std::to_string(l);
    out.push_back({p + ".w", Shape{fan_in, hidden[l]}});
    out.push_back({p + ".b", Shape{hidden[l]}});
    fan_in = hidden[l];
  }
  out.push_back({"mlp.out.w", Shape{fan_in, joints}});
  out.push_back({"mlp.out.b", Shape{joints}});
  return out;
}

TrainResult mlp_train(const Dataset& ds, const MlpBaselineConfig& cfg) {
  if (ds.size() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot train on an empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0) || cfg.max_steps < 0)
    throw Error(ErrorCode::kInvalidArgument, "training sizes and learning rate must be positive");

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.kind = ModelKind::kMlp;
  ckpt.chain = ds.chain;
  ckpt.model.joints = ds.chain.num_joints();
  ckpt.hidden = cfg.hidden;
  ckpt.seed = cfg.seed;
  {
    Rng init_rng(cfg.seed);
    for (const auto& [name, shape] : mlp_layout(ckpt.model.joints, cfg.hidden)) {
      Array<float> value(shape);
      if (shape.rank() == 2) {
        const double stddev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        for (Index i = 0; i < value.size(); ++i) value[i] = static_cast<float>(stddev * init_rng.normal());
      }
      ckpt.params.add(name, std::move(value));
    }
  }

  Rng rng(cfg.seed ^ kBatchSalt);
  AdamState<float> adam;
  const AdamConfig adam_cfg{cfg.lr};
  const Index rows = ds.size();
  const int n = ds.chain.num_joints();
  std::vector<Index> order(static_cast<std::size_t>(rows));
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
      Mat<float> targets(batch, 2), truth(batch, n);
      for (Index b = 0; b < batch; ++b) {
        const Index row = order[static_cast<std::size_t>(begin + b)];
        targets.row(b) = ds.targets.row(row);
        truth.row(b) = ds.thetas.row(row);
      }
      Graph<float> g(&ckpt.params);
      Var<float> out = mlp_forward<float>(g, cfg.hidden, ds.chain, targets);
      Var<float> loss = mse(out, g.constant(Array<float>(Shape{batch, n}, std::move(truth))));
      const double loss_value = loss.value().item();
      ++step;
      if (!std::isfinite(loss_value))
        throw Error(ErrorCode::kNonFinite, "loss is not finite at step " + std::to_string(step));
      adam_step(ckpt.params, g.backward(loss), adam, adam_cfg);
      result.log.push_back({step, loss_value, std::nullopt});
      stop = cfg.max_steps > 0 && step >= cfg.max_steps;
    }
  }
  ckpt.steps = step;
  if (!cfg.checkpoint_path.empty()) save_checkpoint(ckpt, cfg.checkpoint_path);
  if (!cfg.log_path.empty()) write_log_csv(result.log, cfg.log_path);
  return result;
}

Eigen::MatrixXd mlp_predict(const Checkpoint& ckpt, const Eigen::MatrixXd& targets) {
  if (ckpt.kind != ModelKind::kMlp) throw Error(ErrorCode::kCheckpointMismatch, "not an MLP checkpoint");
  if (targets.cols() != 2) throw Error(ErrorCode::kShapeMismatch, "targets must be B x 2");
  Graph<float> g(&ckpt.params, false);
  const Mat<float> tg = targets.cast<float>();
  return mlp_forward<float>(g, ckpt.hidden, ckpt.chain, tg).matrix().cast<double>();
}

EvalMetrics mlp_eval(const Checkpoint& ckpt, const Dataset& targets) {
  if (targets.size() == 0) throw Error(ErrorCode::kInvalidArgument, "evaluation needs at least one target");
  if (!(ckpt.chain == targets.chain)) throw Error(ErrorCode::kCheckpointMismatch, "checkpoint chain differs from targets");
  const Eigen::MatrixXd tg = targets.targets.cast<double>();
  const Eigen::MatrixXd pred = mlp_predict(ckpt, tg);
  const auto tips = forward_kinematics_batch(ckpt.chain, pred);
  EvalMetrics m;
  for (Index r = 0; r < targets.size(); ++r) {
    m.mean_angle_distance += angle_distance(targets.thetas.row(r).transpose().cast<double>(), pred.row(r).transpose());
    m.mean_target_distance += (tips.row(r) - tg.row(r)).norm();
  }
  m.samples = targets.size();
  m.mean_angle_distance /= static_cast<double>(m.samples);
  m.mean_target_distance /= static_cast<double>(m.samples);
  return m;
}

std::string_view to_string(Solver s) { return s == Solver::kDiffusion ? "diffusion" : "mlp"; }

BenchStats benchmark_solve(Solver solver, const Checkpoint& ckpt, const Dataset& targets, int repetitions,
                           std::uint64_t seed) {
  if (repetitions < 1) throw Error(ErrorCode::kInvalidArgument, "repetitions must be at least 1");
  if (targets.size() == 0) throw Error(ErrorCode::kInvalidArgument, "benchmark needs at least one target");
  const bool diffusion = solver == Solver::kDiffusion;
  if (diffusion != (ckpt.kind == ModelKind::kDiffusion))
    throw Error(ErrorCode::kCheckpointMismatch, std::string(to_string(solver)) + " solver given the wrong checkpoint kind");

  Rng rng(seed);
  DenoiseFn denoiser;
  NoiseSchedule sched;
  if (diffusion) {
    denoiser = make_denoiser(ckpt);
    sched = ckpt.schedule();
  }
  const int n = ckpt.chain.num_joints();
  auto solve = [&](Index row) -> Eigen::VectorXd {
    const Eigen::MatrixXd tg = targets.targets.row(row).cast<double>();
    if (diffusion) return sample(denoiser, tg, n, sched, ckpt.param(), rng).theta0.row(0).transpose();
    return mlp_predict(ckpt, tg).row(0).transpose();
  };

  for (int w = 0; w < 10; ++w) solve(w % targets.size());

  std::vector<double> seconds;
  double dist_sum = 0.0;
  for (int rep = 0; rep < repetitions; ++rep) {
    for (Index r = 0; r < targets.size(); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Eigen::VectorXd theta = solve(r);
      const auto t1 = std::chrono::steady_clock::now();
      seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      dist_sum += target_distance(targets.targets.row(r).transpose().cast<double>(), forward_kinematics(ckpt.chain, theta));
    }
  }
  BenchStats stats;
  stats.solver = solver;
  stats.joints = n;
  stats.timesteps = diffusion ? ckpt.timesteps : 0;
  stats.solves = static_cast<Index>(seconds.size());
  stats.mean_target_distance = dist_sum / static_cast<double>(seconds.size());
  stats.mean_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  std::sort(seconds.begin(), seconds.end());
  const std::size_t mid = seconds.size() / 2;
  stats.median_seconds = seconds.size() % 2 ? seconds[mid] : 0.5 * (seconds[mid - 1] + seconds[mid]);
  return stats;
}

std::string hardware_summary() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

void write_bench_csv(const std::vector<BenchStats>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "solver,n_joints,T,mean_target_distance,mean_seconds_per_solve\n";
  for (const auto& r : rows)
    out << to_string(r.solver) << ',' << r.joints << ',' << r.timesteps << ',' << format_double(r.mean_target_distance)
        << ',' << format_double(r.mean_seconds) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace ikdp
