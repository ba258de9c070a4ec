#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>

#include "ikdp/kinematics.hpp"
#include "ikdp/tensor.hpp"

namespace ikdp {

struct IKRecord {
  JointAngles theta;
  Point2 target;
};

/// Ground-truth (theta, target) rows for one chain, stored as two float
/// blocks: thetas is count x N, targets is count x 2.
struct Dataset {
  ChainSpec chain;
  Mat<float> thetas;
  Mat<float> targets;
  std::uint64_t seed = 0;

  Index size() const noexcept { return thetas.rows(); }
  IKRecord record(Index i) const;
};

/// Records per generation shard. Shard s draws from Rng(seed ^ s), so the
/// output does not depend on how many workers run the shards.
inline constexpr Index kShardRecords = 4096;

/// Worker cap from IKDP_THREADS, else hardware concurrency (at least 1).
int worker_count();

/// Draws every angle uniformly from [-pi, pi) and computes the targets with
/// one batched forward-kinematics pass per shard.
Dataset generate(const ChainSpec& chain, Index count, std::uint64_t seed, int workers = 0);

/// Throws kFkInconsistent naming the first row whose stored target differs
/// from forward kinematics by more than `tolerance`.
void validate(const Dataset& ds, double tolerance);

/// CSV with a "# ikdp-dataset v1 N=<N> seed=<seed>" comment line, a
/// theta_0..theta_{N-1},t_x,t_y header, and shortest round-trip float text.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// Loads a CSV written by save_csv (unit bones). Every row is checked against
/// forward kinematics at 1e-4.
Dataset load_csv(const std::filesystem::path& path);

/// Rows in the given order.
Dataset subset(const Dataset& ds, std::span<const Index> rows);

/// Seeded shuffle, then the first round(train_fraction * size) rows train.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);

}  // namespace ikdp
