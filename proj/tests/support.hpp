#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>

#include <unistd.h>

#include "ikdp/ops.hpp"

namespace ikdp::testing {

using LossFn = std::function<Var<double>(Graph<double>&)>;

inline double loss_value(const ParamStore<double>& params, const LossFn& build) {
  Graph<double> g(&params, false);
  return build(g).value().item();
}

/// Max over the probed entries of |autodiff - central difference| /
/// max(|autodiff|, |fd|, floor). `probes` < 0 checks every entry; otherwise
/// that many entries are drawn at random across all parameters.
inline double grad_check(ParamStore<double> params, const LossFn& build, double h = 1e-3, int probes = -1,
                         std::uint64_t seed = 0, double floor = 1e-3) {
  ParamStore<double> grads;
  {
    Graph<double> g(&params);
    grads = g.backward(build(g));
  }
  std::vector<std::pair<std::size_t, Index>> picks;
  if (probes < 0) {
    for (std::size_t p = 0; p < params.size(); ++p)
      for (Index i = 0; i < params[p].value.size(); ++i) picks.emplace_back(p, i);
  } else {
    Rng rng(seed);
    const Index total = params.total_size();
    for (int k = 0; k < probes; ++k) {
      Index flat = static_cast<Index>(rng.index(static_cast<std::uint64_t>(total)));
      std::size_t p = 0;
      while (flat >= params[p].value.size()) flat -= params[p++].value.size();
      picks.emplace_back(p, flat);
    }
  }
  double worst = 0.0;
  for (const auto& [p, i] : picks) {
    double& w = params[p].value[i];
    const double saved = w;
    w = saved + h;
    const double up = loss_value(params, build);
    w = saved - h;
    const double down = loss_value(params, build);
    w = saved;
    const double fd = (up - down) / (2.0 * h);
    const double ad = grads[p].value[i];
    worst = std::max(worst, std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor}));
  }
  return worst;
}

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("ikdp_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace ikdp::testing
