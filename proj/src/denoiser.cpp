#include "ikdp/denoiser.hpp"

#include <cmath>

namespace ikdp {

void DenoiserConfig::validate() const {
  if (joints < 1 || embed_dim < 2 || num_heads < 1 || enc_layers < 0 || dec_layers < 0 || mlp_hidden < 1 ||
      time_embed_dim < 2)
    throw Error(ErrorCode::kInvalidArgument, "denoiser dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw Error(ErrorCode::kInvalidArgument, std::to_string(num_heads) + " heads do not divide width " +
                                                 std::to_string(embed_dim));
  if (time_embed_dim % 2 != 0) throw Error(ErrorCode::kInvalidArgument, "time embedding width must be even");
}

Eigen::VectorXd time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw Error(ErrorCode::kInvalidArgument, "time embedding width must be even");
  if (t < 0) throw Error(ErrorCode::kOutOfRange, "negative diffusion step");
  Eigen::VectorXd e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
    e(2 * i) = std::sin(t * freq);
    e(2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

Point2 normalize_target(const Point2& target, const ChainSpec& chain) { return target / chain.reach(); }

Eigen::VectorXd embed_condition(const ParamStore<float>& params, const Point2& target, const ChainSpec& chain) {
  const Eigen::Vector2d c = normalize_target(target, chain);
  const auto& w = params.at("cond.w").matrix();
  const auto& b = params.at("cond.b").matrix();
  return (c.transpose() * w.cast<double>() + b.cast<double>()).transpose();
}

std::vector<std::pair<std::string, Shape>> param_layout(const DenoiserConfig& cfg) {
  cfg.validate();
  const Index d = cfg.embed_dim, h = cfg.mlp_hidden;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"tok.w", Shape{1, d}});
  out.push_back({"tok.b", Shape{d}});
  out.push_back({"pos", Shape{cfg.joints, d}});
  auto block = [&](const std::string& p) {
    out.push_back({p + ".ln1.g", Shape{d}});
    out.push_back({p + ".ln1.b", Shape{d}});
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + ".attn.w" + m, Shape{d, d}});
      out.push_back({p + ".attn.b" + m, Shape{d}});
    }
    out.push_back({p + ".ln2.g", Shape{d}});
    out.push_back({p + ".ln2.b", Shape{d}});
    out.push_back({p + ".ff.w1", Shape{d, h}});
    out.push_back({p + ".ff.b1", Shape{h}});
    out.push_back({p + ".ff.w2", Shape{h, d}});
    out.push_back({p + ".ff.b2", Shape{d}});
  };
  for (int l = 0; l < cfg.enc_layers; ++l) block("enc" + std::to_string(l));
  out.push_back({"enc.ln.g", Shape{d}});
  out.push_back({"enc.ln.b", Shape{d}});
  out.push_back({"cond.w", Shape{2, d}});
  out.push_back({"cond.b", Shape{d}});
  out.push_back({"fuse.w1", Shape{2 * d + cfg.time_embed_dim, h}});
  out.push_back({"fuse.b1", Shape{h}});
  out.push_back({"fuse.w2", Shape{h, d}});
  out.push_back({"fuse.b2", Shape{d}});
  for (int l = 0; l < cfg.dec_layers; ++l) block("dec" + std::to_string(l));
  out.push_back({"head.ln.g", Shape{d}});
  out.push_back({"head.ln.b", Shape{d}});
  out.push_back({"head.w", Shape{d, 1}});
  out.push_back({"head.b", Shape{1}});
  return out;
}

ParamStore<float> init_params(const DenoiserConfig& cfg, Rng& rng) {
  ParamStore<float> params;
  for (const auto& [name, shape] : param_layout(cfg)) {
    Array<float> value(shape);
    const bool is_gain = name.ends_with(".g");
    const bool is_head = name.starts_with("head.w") || name == "head.b";
    if (is_gain) {
      value.matrix().setOnes();
    } else if (shape.rank() == 2 && !is_head) {
      // tok.w and pos have fan-in 1 (a scalar, a one-hot position).
      const double fan_in = name == "pos" ? 1.0 : static_cast<double>(shape[0]);
      const double stddev = 1.0 / std::sqrt(fan_in);
      for (Index i = 0; i < value.size(); ++i) value[i] = static_cast<float>(stddev * rng.normal());
    }
    params.add(name, std::move(value));
  }
  return params;
}

Eigen::MatrixXd denoise(const ParamStore<float>& params, const DenoiserConfig& cfg, const ChainSpec& chain,
                        const Eigen::MatrixXd& theta_t, int step, const Eigen::MatrixXd& targets) {
  Graph<float> g(&params, false);
  const std::vector<int> steps(static_cast<std::size_t>(theta_t.rows()), step);
  const Mat<float> theta = theta_t.cast<float>();
  const Mat<float> tg = targets.cast<float>();
  Var<float> out = denoiser_forward<float>(g, cfg, chain, theta, steps, tg);
  return out.matrix().cast<double>();
}

}  // namespace ikdp
