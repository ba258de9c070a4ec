#pragma once

// Conditional denoiser over joint tokens.
//
// theta_t (B x N) -> one token per joint -> pre-norm transformer encoder ->
// mean-pooled feature, concatenated with the step embedding and the
// projected target -> fusion MLP -> fused vector added to every token ahead
// of each decoder block -> per-token scalar head -> plus theta_t.
//
// With the head zero-initialized the network starts as the identity on
// theta_t.

#include <span>
#include <string>
#include <vector>

#include "ikdp/diffusion.hpp"
#include "ikdp/kinematics.hpp"
#include "ikdp/ops.hpp"

namespace ikdp {

struct DenoiserConfig {
  int joints = 4;
  int embed_dim = 64;
  int num_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  /// Hidden width of the fusion MLP and of every block's feed-forward.
  int mlp_hidden = 128;
  int time_embed_dim = 64;
  Parameterization param = Parameterization::kPredictX0;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal embedding: [2i] = sin(t / 10000^(2i/dim)), [2i+1] = cos(same).
Eigen::VectorXd time_embedding(int t, int dim);

/// Target scaled by the chain's reach, so reachable targets land in the unit disk.
Point2 normalize_target(const Point2& target, const ChainSpec& chain);

/// Condition embedding of one target: the normalized target through the
/// learned projection (cond.w, cond.b).
Eigen::VectorXd embed_condition(const ParamStore<float>& params, const Point2& target, const ChainSpec& chain);

/// Weights ~ N(0, 1/fan_in), biases zero, layer-norm gains one, output head
/// zero. Deterministic in the rng state.
ParamStore<float> init_params(const DenoiserConfig& cfg, Rng& rng);

/// Parameter names and shapes implied by a config, in init_params order.
std::vector<std::pair<std::string, Shape>> param_layout(const DenoiserConfig& cfg);

namespace detail {

template <typename Scalar>
void check_finite(const Var<Scalar>& v, const std::string& layer) {
  if (!v.value().all_finite()) throw Error(ErrorCode::kNonFinite, "non-finite activation after " + layer);
}

template <typename Scalar>
Var<Scalar> transformer_block(Graph<Scalar>& g, const DenoiserConfig& cfg, const std::string& p, Var<Scalar> x) {
  auto h = layer_norm(x, g.param(p + ".ln1.g"), g.param(p + ".ln1.b"));
  auto q = linear(h, g.param(p + ".attn.wq"), g.param(p + ".attn.bq"));
  auto k = linear(h, g.param(p + ".attn.wk"), g.param(p + ".attn.bk"));
  auto v = linear(h, g.param(p + ".attn.wv"), g.param(p + ".attn.bv"));
  auto a = linear(attention(q, k, v, cfg.num_heads), g.param(p + ".attn.wo"), g.param(p + ".attn.bo"));
  x = add(x, a);
  h = layer_norm(x, g.param(p + ".ln2.g"), g.param(p + ".ln2.b"));
  h = gelu(linear(h, g.param(p + ".ff.w1"), g.param(p + ".ff.b1")));
  h = linear(h, g.param(p + ".ff.w2"), g.param(p + ".ff.b2"));
  x = add(x, h);
  check_finite(x, p);
  return x;
}

}  // namespace detail

/// Records the network on `g` (whose store must hold init_params-shaped
/// weights) and returns the B x N output: theta_0 or eps estimate per
/// cfg.param. `steps` holds one diffusion step per row.
template <typename Scalar>
Var<Scalar> denoiser_forward(Graph<Scalar>& g, const DenoiserConfig& cfg, const ChainSpec& chain,
                             const Mat<Scalar>& theta_t, std::span<const int> steps, const Mat<Scalar>& targets) {
  const Index batch = theta_t.rows();
  const Index n = cfg.joints;
  const Index d = cfg.embed_dim;
  if (theta_t.cols() != n || chain.num_joints() != n)
    throw Error(ErrorCode::kShapeMismatch, "denoiser configured for " + std::to_string(n) + " joints, got " +
                                               std::to_string(theta_t.cols()));
  if (targets.rows() != batch || targets.cols() != 2 || static_cast<Index>(steps.size()) != batch)
    throw Error(ErrorCode::kShapeMismatch, "denoiser needs one target and one step per row");

  Mat<Scalar> temb(batch, cfg.time_embed_dim);
  Mat<Scalar> cond(batch, 2);
  for (Index b = 0; b < batch; ++b) {
    temb.row(b) = time_embedding(steps[static_cast<std::size_t>(b)], cfg.time_embed_dim).transpose().cast<Scalar>();
    cond.row(b) = normalize_target(targets.row(b).transpose().template cast<double>(), chain).transpose().template cast<Scalar>();
  }

  Var<Scalar> theta = g.constant(Array<Scalar>(Shape{batch, n}, theta_t));
  Var<Scalar> x = linear(reshape(theta, Shape{batch * n, 1}), g.param("tok.w"), g.param("tok.b"));
  x = add_tiled(reshape(x, Shape{batch, n, d}), g.param("pos"));
  detail::check_finite(x, "tokens");

  for (int l = 0; l < cfg.enc_layers; ++l) x = detail::transformer_block(g, cfg, "enc" + std::to_string(l), x);

  auto pooled = mean_tokens(layer_norm(x, g.param("enc.ln.g"), g.param("enc.ln.b")));
  auto cond_emb = linear(g.constant(Array<Scalar>(Shape{batch, 2}, std::move(cond))), g.param("cond.w"), g.param("cond.b"));
  auto fused = concat_cols<Scalar>({pooled, g.constant(Array<Scalar>(Shape{batch, cfg.time_embed_dim}, std::move(temb))), cond_emb});
  fused = gelu(linear(fused, g.param("fuse.w1"), g.param("fuse.b1")));
  fused = linear(fused, g.param("fuse.w2"), g.param("fuse.b2"));
  detail::check_finite(fused, "fusion");

  for (int l = 0; l < cfg.dec_layers; ++l) {
    x = add_to_tokens(x, fused);
    x = detail::transformer_block(g, cfg, "dec" + std::to_string(l), x);
  }

  auto head = layer_norm(x, g.param("head.ln.g"), g.param("head.ln.b"));
  head = reshape(linear(head, g.param("head.w"), g.param("head.b")), Shape{batch, n});
  auto out = add(head, theta);
  detail::check_finite(out, "head");
  return out;
}

/// Inference pass in float with every row at the same step.
Eigen::MatrixXd denoise(const ParamStore<float>& params, const DenoiserConfig& cfg, const ChainSpec& chain,
                        const Eigen::MatrixXd& theta_t, int step, const Eigen::MatrixXd& targets);

}  // namespace ikdp
