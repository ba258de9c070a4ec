#pragma once

// Direct-regression MLP baseline (normalized target -> joint angles) and
// wall-clock solve benchmarks.

#include <filesystem>
#include <string_view>
#include <vector>

#include "ikdp/trainer.hpp"

namespace ikdp {

struct MlpBaselineConfig {
  std::vector<int> hidden{256, 256};
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 128;
  std::uint64_t seed = 0;
  long max_steps = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
};

std::vector<std::pair<std::string, Shape>> mlp_layout(int joints, const std::vector<int>& hidden);

/// 2 -> hidden... -> N, GELU between layers.
template <typename Scalar>
Var<Scalar> mlp_forward(Graph<Scalar>& g, const std::vector<int>& hidden, const ChainSpec& chain,
                        const Mat<Scalar>& targets) {
  Mat<Scalar> x(targets.rows(), 2);
  for (Index r = 0; r < targets.rows(); ++r)
    x.row(r) = normalize_target(targets.row(r).transpose().template cast<double>(), chain).transpose().template cast<Scalar>();
  Var<Scalar> h = g.constant(Array<Scalar>(Shape{targets.rows(), 2}, std::move(x)));
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const std::string p = "mlp.l" + std::to_string(l);
    h = gelu(linear(h, g.param(p + ".w"), g.param(p + ".b")));
  }
  return linear(h, g.param("mlp.out.w"), g.param("mlp.out.b"));
}

/// Trains target -> theta with MSE on theta. Deterministic in cfg.seed.
TrainResult mlp_train(const Dataset& ds, const MlpBaselineConfig& cfg);

/// Predicted angles, one row per target row.
Eigen::MatrixXd mlp_predict(const Checkpoint& ckpt, const Eigen::MatrixXd& targets);

/// Mean metrics of the MLP's single deterministic answer per target.
EvalMetrics mlp_eval(const Checkpoint& ckpt, const Dataset& targets);

enum class Solver { kDiffusion, kMlp };
std::string_view to_string(Solver s);

struct BenchStats {
  Solver solver = Solver::kDiffusion;
  int joints = 0;
  /// Diffusion steps per solve; 0 for the MLP.
  int timesteps = 0;
  double mean_target_distance = 0.0;
  double mean_seconds = 0.0;
  double median_seconds = 0.0;
  Index solves = 0;
};

/// Times single-target solves (batch of one) over every target, repeated
/// `repetitions` times, after 10 untimed warm-up solves.
BenchStats benchmark_solve(Solver solver, const Checkpoint& ckpt, const Dataset& targets, int repetitions,
                           std::uint64_t seed = 0);

/// One line naming the CPU model and hardware thread count, for reports.
std::string hardware_summary();

/// CSV "solver,n_joints,T,mean_target_distance,mean_seconds_per_solve".
void write_bench_csv(const std::vector<BenchStats>& rows, const std::filesystem::path& path);

}  // namespace ikdp
