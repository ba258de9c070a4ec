#pragma once

// SVG figures: the denoising trace of one chain and the arccos-histogram
// view of the forward noising process.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ikdp/dataset.hpp"
#include "ikdp/diffusion.hpp"

namespace ikdp {

/// Side of the square trace canvas in pixels.
inline constexpr double kTraceCanvas = 480.0;

/// World -> pixel mapping of the trace canvas: the reach disk plus a 10%
/// margin fills the square, y pointing up.
Eigen::Vector2d trace_to_pixels(const Point2& p, const ChainSpec& chain);

/// One <polyline class="chain"> per state (theta_T first), opacity ramped
/// linearly from 0.1 to 1.0, and one <path class="target"> cross.
std::string render_trace_svg(const std::vector<Eigen::VectorXd>& trace, const ChainSpec& chain, const Point2& target);
void emit_trace_svg(const std::vector<Eigen::VectorXd>& trace, const ChainSpec& chain, const Point2& target,
                    const std::filesystem::path& path);

struct HistogramPanel {
  /// 0 for the raw dataset.
  int step = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<Index> counts;
};

/// Panel 0 is the raw dataset; then one panel per entry of `steps` (each in
/// 1..T) after q_sample with fresh noise. For a one-joint chain the value is
/// arccos(clamp(t_x, -1, 1)) of the noised t_x over [0, pi]; otherwise every
/// noised joint angle, clamped into [-pi, pi].
std::vector<HistogramPanel> noising_histograms(const Dataset& ds, const NoiseSchedule& sched, std::span<const int> steps,
                                               int bins, std::uint64_t seed);

std::string render_histogram_svg(const std::vector<HistogramPanel>& panels, bool arccos_view);
void emit_noising_histogram(const Dataset& ds, const NoiseSchedule& sched, std::span<const int> steps, int bins,
                            std::uint64_t seed, const std::filesystem::path& path);

}  // namespace ikdp
