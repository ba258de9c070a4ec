#pragma once

// Self-describing binary model container, little-endian:
//
//   "IKDP"                      4 bytes magic
//   u32 version                 = 1
//   u32 length, UTF-8 bytes     metadata, one key=value per line
//   u32 tensor count
//   per tensor:
//     u16 length, UTF-8 name
//     u8 rank, u32 dims[rank]
//     f32 payload[prod(dims)]
//
// Metadata keys are written in a fixed order so save -> load -> save is
// byte-identical.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ikdp/denoiser.hpp"

namespace ikdp {

enum class ModelKind { kDiffusion, kMlp };

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelKind kind = ModelKind::kDiffusion;
  ChainSpec chain;
  /// Diffusion model shape (joints doubles as the MLP output width).
  DenoiserConfig model;
  int timesteps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  /// MLP hidden widths (kMlp only).
  std::vector<int> hidden;
  ParamStore<float> params;
  long steps = 0;
  std::uint64_t seed = 0;

  NoiseSchedule schedule() const { return NoiseSchedule::linear(timesteps, beta_start, beta_end); }
  Parameterization param() const noexcept { return model.param; }
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace ikdp
