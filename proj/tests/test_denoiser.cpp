#include <doctest.h>

#include <numbers>
#include <set>

#include "ikdp/denoiser.hpp"
#include "support.hpp"

using namespace ikdp;

namespace {

DenoiserConfig small_config(int joints) {
  DenoiserConfig cfg;
  cfg.joints = joints;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.mlp_hidden = 24;
  cfg.time_embed_dim = 8;
  return cfg;
}

Eigen::MatrixXd random_rows(Rng& rng, Index rows, Index cols, double span) {
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-span, span);
  return m;
}

}  // namespace

TEST_CASE("time embedding") {
  const Eigen::VectorXd zero = time_embedding(0, 8);
  for (int i = 0; i < 8; ++i) CHECK(zero(i) == (i % 2 == 0 ? 0.0 : 1.0));
  CHECK_THROWS_AS(time_embedding(3, 7), Error);

  std::vector<Eigen::VectorXd> all;
  for (int t = 1; t <= 80; ++t) {
    all.push_back(time_embedding(t, 64));
    CHECK(all.back().cwiseAbs().maxCoeff() <= 1.0);
  }
  double closest = 1e9;
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) closest = std::min(closest, (all[a] - all[b]).norm());
  CHECK(closest > 1e-6);
}

TEST_CASE("condition embedding") {
  const DenoiserConfig cfg;
  Rng rng(1);
  ParamStore<float> p = init_params(cfg, rng);
  for (Index i = 0; i < p.at("cond.b").size(); ++i) p.at("cond.b")[i] = 0.01f * static_cast<float>(i);
  const ChainSpec chain = ChainSpec::unit(4);
  CHECK(embed_condition(p, Point2(0, 0), chain).isApprox(p.at("cond.b").matrix().transpose().cast<double>()));
  CHECK(normalize_target(Point2(4, 0), chain) == Point2(1, 0));
  for (int k = 0; k < 360; ++k) {
    const double a = k * std::numbers::pi / 180;
    CHECK(normalize_target(Point2(4 * std::cos(a), 4 * std::sin(a)), chain).norm() <= std::sqrt(2.0));
  }
}

TEST_CASE("config validation") {
  DenoiserConfig cfg;
  cfg.num_heads = 5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = DenoiserConfig{};
  cfg.time_embed_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_NOTHROW(DenoiserConfig{}.validate());
}

TEST_CASE("init params") {
  const DenoiserConfig cfg;
  Rng a(2), b(2);
  const ParamStore<float> p = init_params(cfg, a), q = init_params(cfg, b);
  REQUIRE(p.size() == q.size());
  std::set<std::string> names;
  const auto layout = param_layout(cfg);
  REQUIRE(layout.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i].value.matrix() == q[i].value.matrix());
    CHECK(p[i].name == layout[i].first);
    CHECK(p[i].value.shape() == layout[i].second);
    CHECK(p[i].value.all_finite());
    names.insert(p[i].name);
  }
  CHECK(names.size() == p.size());
  CHECK(p.at("head.w").matrix().isZero());
  CHECK(p.at("head.b").matrix().isZero());
  CHECK(p.at("enc0.ln1.g").matrix().isOnes());

  for (const char* name : {"enc0.attn.wq", "dec1.ff.w1", "dec1.ff.w2", "fuse.w1", "fuse.w2"}) {
    const auto& w = p.at(name);
    const double fan_in = static_cast<double>(w.shape()[0]);
    const Eigen::ArrayXd v = Eigen::Map<const Eigen::VectorXf>(w.data(), w.size()).cast<double>().array();
    const double var = (v - v.mean()).square().mean();
    CAPTURE(name);
    CHECK(std::abs(var * fan_in - 1.0) < 0.2);
  }
}

TEST_CASE("forward shape contract and residual identity at init") {
  Rng rng(3);
  for (int n : {1, 2, 4, 8}) {
    DenoiserConfig cfg;
    cfg.joints = n;
    const ParamStore<float> p = init_params(cfg, rng);
    const ChainSpec chain = ChainSpec::unit(n);
    for (Index batch : {1, 128}) {
      CAPTURE(n);
      CAPTURE(batch);
      // float-representable inputs so the identity is exact after the cast
      const Eigen::MatrixXd theta = random_rows(rng, batch, n, 3.0).cast<float>().cast<double>();
      const Eigen::MatrixXd targets = random_rows(rng, batch, 2, 1.0);
      const Eigen::MatrixXd out = denoise(p, cfg, chain, theta, 17, targets);
      CHECK(out.rows() == batch);
      CHECK(out.cols() == n);
      CHECK(out == theta);
    }
  }
}

TEST_CASE("forward is pure and depends on step and target once trained weights are nonzero") {
  const DenoiserConfig cfg = small_config(3);
  Rng rng(4);
  ParamStore<float> p = init_params(cfg, rng);
  for (auto& e : p)
    for (Index i = 0; i < e.value.size(); ++i) e.value[i] += static_cast<float>(0.1 * rng.normal());
  const ChainSpec chain = ChainSpec::unit(3);
  const Eigen::MatrixXd theta = random_rows(rng, 4, 3, 2.0), targets = random_rows(rng, 4, 2, 2.0);
  const Eigen::MatrixXd a = denoise(p, cfg, chain, theta, 5, targets);
  CHECK(a == denoise(p, cfg, chain, theta, 5, targets));
  CHECK_FALSE(a == denoise(p, cfg, chain, theta, 6, targets));
  CHECK_FALSE(a == denoise(p, cfg, chain, theta, 5, Eigen::MatrixXd(targets * 0.5)));
  // Rows are independent: a batch equals its rows run one at a time.
  for (Index r = 0; r < 4; ++r) {
    const Eigen::MatrixXd one = denoise(p, cfg, chain, theta.row(r), 5, targets.row(r));
    CHECK((one.row(0) - a.row(r)).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("forward rejects mismatched shapes and names the failing layer") {
  const DenoiserConfig cfg = small_config(2);
  Rng rng(5);
  ParamStore<float> p = init_params(cfg, rng);
  const ChainSpec chain = ChainSpec::unit(2);
  CHECK_THROWS_AS(denoise(p, cfg, chain, Eigen::MatrixXd::Zero(2, 3), 1, Eigen::MatrixXd::Zero(2, 2)), Error);
  CHECK_THROWS_AS(denoise(p, cfg, chain, Eigen::MatrixXd::Zero(2, 2), 1, Eigen::MatrixXd::Zero(3, 2)), Error);
  p.at("fuse.w2")[0] = std::numeric_limits<float>::infinity();
  try {
    denoise(p, cfg, chain, Eigen::MatrixXd::Ones(2, 2), 1, Eigen::MatrixXd::Ones(2, 2));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    CHECK(std::string(e.what()).find("fusion") != std::string::npos);
  }
}

TEST_CASE("end-to-end gradient matches finite differences") {
  // Shrunken network: width 8, one encoder and one decoder block, two joints.
  DenoiserConfig cfg;
  cfg.joints = 2;
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.mlp_hidden = 8;
  cfg.time_embed_dim = 8;
  Rng rng(6);
  ParamStore<double> p = init_params(cfg, rng).cast<double>();
  // Nonzero head so gradients reach every layer.
  for (auto& e : p)
    for (Index i = 0; i < e.value.size(); ++i) e.value[i] += 0.3 * rng.normal();
  const ChainSpec chain = ChainSpec::unit(2);
  const Mat<double> theta = random_rows(rng, 3, 2, 2.0);
  const Mat<double> targets = random_rows(rng, 3, 2, 1.5);
  const Mat<double> truth = random_rows(rng, 3, 2, 3.0);
  const std::vector<int> steps = {1, 7, 20};
  auto loss = [&](Graph<double>& g) {
    return mse(denoiser_forward<double>(g, cfg, chain, theta, steps, targets),
               g.constant(Array<double>(Shape{3, 2}, truth)));
  };
  const double err = ikdp::testing::grad_check(p, loss, 1e-3, 20, 11);
  MESSAGE("max relative error over 20 weights: " << err);
  CHECK(err < 1e-2);
  // Denser sweep, still well inside the tolerance.
  CHECK(ikdp::testing::grad_check(p, loss, 1e-3, 300, 12) < 1e-2);
}
