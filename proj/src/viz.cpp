#include "ikdp/viz.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace ikdp {

namespace {

std::string fmt3(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Index bin_of(double v, double lo, double hi, int bins) {
  const double u = (v - lo) / (hi - lo);
  return std::clamp(static_cast<Index>(u * bins), Index{0}, static_cast<Index>(bins - 1));
}

}  // namespace

Eigen::Vector2d trace_to_pixels(const Point2& p, const ChainSpec& chain) {
  const double half = 1.1 * chain.reach();
  return {(p.x() + half) / (2.0 * half) * kTraceCanvas, (half - p.y()) / (2.0 * half) * kTraceCanvas};
}

std::string render_trace_svg(const std::vector<Eigen::VectorXd>& trace, const ChainSpec& chain, const Point2& target) {
  if (trace.empty()) throw Error(ErrorCode::kInvalidArgument, "trace is empty");
  const std::string size = fmt3(kTraceCanvas);
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + size + "\" height=\"" + size + "\" viewBox=\"0 0 " + size +
       " " + size + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const Eigen::Vector2d origin = trace_to_pixels(Point2::Zero(), chain);
  const double radius = chain.reach() / (2.2 * chain.reach()) * kTraceCanvas;
  s += "<circle class=\"reach\" cx=\"" + fmt3(origin.x()) + "\" cy=\"" + fmt3(origin.y()) + "\" r=\"" + fmt3(radius) +
       "\" fill=\"none\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";

  const std::size_t last = trace.size() - 1;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const double opacity = last == 0 ? 1.0 : 0.1 + 0.9 * static_cast<double>(k) / static_cast<double>(last);
    const Eigen::Matrix2Xd joints = joint_positions(chain, trace[k]);
    s += "<polyline class=\"chain\" fill=\"none\" stroke=\"#1f3a93\" stroke-width=\"2\" stroke-opacity=\"" +
         fmt3(opacity) + "\" points=\"";
    for (Index j = 0; j < joints.cols(); ++j) {
      const Eigen::Vector2d px = trace_to_pixels(joints.col(j), chain);
      if (j) s += ' ';
      s += fmt3(px.x()) + "," + fmt3(px.y());
    }
    s += "\"/>\n";
  }

  const Eigen::Vector2d c = trace_to_pixels(target, chain);
  constexpr double arm = 8.0;
  s += "<path class=\"target\" stroke=\"red\" stroke-width=\"2.5\" d=\"M" + fmt3(c.x() - arm) + " " + fmt3(c.y() - arm) +
       " L" + fmt3(c.x() + arm) + " " + fmt3(c.y() + arm) + " M" + fmt3(c.x() - arm) + " " + fmt3(c.y() + arm) + " L" +
       fmt3(c.x() + arm) + " " + fmt3(c.y() - arm) + "\"/>\n";
  s += "</svg>\n";
  return s;
}

void emit_trace_svg(const std::vector<Eigen::VectorXd>& trace, const ChainSpec& chain, const Point2& target,
                    const std::filesystem::path& path) {
  write_text(render_trace_svg(trace, chain, target), path);
}

std::vector<HistogramPanel> noising_histograms(const Dataset& ds, const NoiseSchedule& sched, std::span<const int> steps,
                                               int bins, std::uint64_t seed) {
  if (steps.empty()) throw Error(ErrorCode::kInvalidArgument, "no diffusion steps requested");
  if (bins < 1) throw Error(ErrorCode::kInvalidArgument, "bins must be positive");
  if (ds.size() == 0) throw Error(ErrorCode::kInvalidArgument, "dataset is empty");
  for (int t : steps) sched.check_step(t);

  const bool arccos_view = ds.chain.num_joints() == 1;
  const double lo = arccos_view ? 0.0 : -std::numbers::pi;
  const double hi = std::numbers::pi;
  // Signal being noised: t_x (scaled to [-1, 1]) for one joint, else the angles.
  const Eigen::MatrixXd signal = arccos_view ? Eigen::MatrixXd(ds.targets.col(0).cast<double>() / ds.chain.reach())
                                             : Eigen::MatrixXd(ds.thetas.cast<double>());
  auto to_value = [&](double x) { return arccos_view ? std::acos(std::clamp(x, -1.0, 1.0)) : std::clamp(x, lo, hi); };

  std::vector<HistogramPanel> panels;
  auto fill = [&](int step, const Eigen::MatrixXd& values) {
    HistogramPanel p{step, lo, hi, std::vector<Index>(static_cast<std::size_t>(bins), 0)};
    for (Index i = 0; i < values.size(); ++i) ++p.counts[static_cast<std::size_t>(bin_of(to_value(values.data()[i]), lo, hi, bins))];
    panels.push_back(std::move(p));
  };
  fill(0, signal);
  Rng rng(seed);
  for (int t : steps) {
    Eigen::MatrixXd eps(signal.rows(), signal.cols());
    for (Index r = 0; r < eps.rows(); ++r)
      for (Index c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();
    fill(t, q_sample(signal, t, eps, sched));
  }
  return panels;
}

std::string render_histogram_svg(const std::vector<HistogramPanel>& panels, bool arccos_view) {
  constexpr double kPanelW = 240.0, kPanelH = 180.0, kPad = 20.0, kTitle = 24.0;
  const double width = kPad + static_cast<double>(panels.size()) * (kPanelW + kPad);
  const double height = kTitle + kPanelH + 2.0 * kPad;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt3(width) + "\" height=\"" + fmt3(height) +
                  "\" viewBox=\"0 0 " + fmt3(width) + " " + fmt3(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double x0 = kPad + static_cast<double>(p) * (kPanelW + kPad);
    const double y_base = kTitle + kPad + kPanelH;
    const Index peak = std::max<Index>(1, *std::max_element(panel.counts.begin(), panel.counts.end()));
    const double bar_w = kPanelW / static_cast<double>(panel.counts.size());
    s += "<g class=\"panel\">\n";
    s += "<text x=\"" + fmt3(x0) + "\" y=\"" + fmt3(kTitle) + "\" font-family=\"sans-serif\" font-size=\"14\">t=" +
         std::to_string(panel.step) + (arccos_view ? " arccos(t_x)" : " theta") + "</text>\n";
    for (std::size_t b = 0; b < panel.counts.size(); ++b) {
      const double h = static_cast<double>(panel.counts[b]) / static_cast<double>(peak) * kPanelH;
      s += "<rect class=\"bar\" x=\"" + fmt3(x0 + static_cast<double>(b) * bar_w) + "\" y=\"" + fmt3(y_base - h) +
           "\" width=\"" + fmt3(bar_w) + "\" height=\"" + fmt3(h) + "\" fill=\"#4878a8\" stroke=\"white\"/>\n";
    }
    s += "<line x1=\"" + fmt3(x0) + "\" y1=\"" + fmt3(y_base) + "\" x2=\"" + fmt3(x0 + kPanelW) + "\" y2=\"" +
         fmt3(y_base) + "\" stroke=\"black\"/>\n";
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

void emit_noising_histogram(const Dataset& ds, const NoiseSchedule& sched, std::span<const int> steps, int bins,
                            std::uint64_t seed, const std::filesystem::path& path) {
  write_text(render_histogram_svg(noising_histograms(ds, sched, steps, bins, seed), ds.chain.num_joints() == 1), path);
}

}  // namespace ikdp
