#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ikdp/adam.hpp"
#include "ikdp/ops.hpp"
#include "support.hpp"

using namespace ikdp;
using ikdp::testing::grad_check;

namespace {

Array<double> random_array(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  return rand_uniform<double>(rng, lo, hi, shape);
}

// Projects a non-scalar op output to a scalar with fixed random weights, so
// every output entry contributes a distinct gradient.
Var<double> project(Graph<double>& g, const Var<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_array(rng, y.shape()))));
}

}  // namespace

TEST_CASE("matmul small products") {
  Graph<float> g;
  auto eye = g.constant(Array<float>(Shape{2, 2}, {1, 0, 0, 1}));
  auto m = g.constant(Array<float>(Shape{2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(eye, m).matrix() == m.matrix());
  auto r = matmul(g.constant(Array<float>(Shape{1, 2}, {1, 2})), g.constant(Array<float>(Shape{2, 1}, {3, 4})));
  CHECK(r.value().item() == 11.0f);
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(1);
  Graph<float> g;
  auto a = g.constant(rand_uniform<float>(rng, -1, 1, Shape{3, 4}));
  auto b = g.constant(rand_uniform<float>(rng, -1, 1, Shape{4, 2}));
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += double(a.matrix()(i, k)) * double(b.matrix()(k, j));
      CHECK(std::abs(c.matrix()(i, j) - acc) < 1e-6);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph<float> g;
  auto a = g.constant(Array<float>(Shape{2, 3}));
  auto b = g.constant(Array<float>(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("elementwise values") {
  Graph<float> g;
  auto a = g.constant(Array<float>(Shape{2}, {1, 2}));
  auto b = g.constant(Array<float>(Shape{2}, {3, 4}));
  CHECK(add(a, b).matrix() == Array<float>(Shape{2}, {4, 6}).matrix());
  CHECK(relu(g.constant(Array<float>(Shape{2}, {-1, 2}))).matrix() == Array<float>(Shape{2}, {0, 2}).matrix());
  CHECK(mul(a, g.constant(Array<float>::scalar(2))).matrix() == Array<float>(Shape{2}, {2, 4}).matrix());
  CHECK_THROWS_AS(add(a, g.constant(Array<float>(Shape{3}))), Error);
}

TEST_CASE("gelu gradient at 0.5 matches a central difference") {
  ParamStore<double> p;
  p.add("x", Array<double>::scalar(0.5));
  CHECK(grad_check(p, [](Graph<double>& g) { return sum(gelu(g.param("x"))); }) < 1e-3);
}

TEST_CASE("softmax rows") {
  Graph<float> g;
  auto s = softmax_rows(g.constant(Array<float>(Shape{1, 3}, {0, 0, 0})));
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s.matrix()(0, j) - 1.0f / 3) < 1e-6);
  auto big = softmax_rows(g.constant(Array<float>(Shape{1, 2}, {1000, 0})));
  CHECK(std::abs(big.matrix()(0, 0) - 1) < 1e-6);
  CHECK(std::abs(big.matrix()(0, 1)) < 1e-6);

  Rng rng(3);
  for (double scale : {1.0, 1e2, 1e4}) {
    auto r = softmax_rows(g.constant(rand_uniform<float>(rng, -scale, scale, Shape{4, 5})));
    CHECK(r.value().all_finite());
    for (int i = 0; i < 4; ++i) {
      double total = 0;
      for (int j = 0; j < 5; ++j) {
        CHECK(r.matrix()(i, j) >= 0);
        total += r.matrix()(i, j);
      }
      CHECK(std::abs(total - 1) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm normalizes rows") {
  Graph<float> g;
  auto gain = g.constant(Array<float>(Shape{4}, {1, 1, 1, 1}));
  auto bias = g.constant(Array<float>(Shape{4}));
  auto flat = layer_norm(g.constant(Array<float>(Shape{1, 4}, {3, 3, 3, 3})), gain, bias);
  CHECK(flat.matrix().cwiseAbs().maxCoeff() == 0.0f);
  Rng rng(4);
  auto y = layer_norm(g.constant(rand_uniform<float>(rng, -5, 5, Shape{6, 4})), gain, bias);
  for (int i = 0; i < 6; ++i) CHECK(std::abs(y.matrix().row(i).cast<double>().mean()) < 1e-6);
}

TEST_CASE("mse values") {
  Graph<float> g;
  auto a = g.constant(Array<float>(Shape{2}, {0, 0}));
  CHECK(mse(a, a).value().item() == 0.0f);
  CHECK(mse(a, g.constant(Array<float>(Shape{2}, {3, 4}))).value().item() == 12.5f);
  CHECK_THROWS_AS(mse(a, g.constant(Array<float>(Shape{3}))), Error);
}

TEST_CASE("mse gradient is 2(a-b)/n") {
  ParamStore<float> p;
  p.add("a", Array<float>(Shape{3}, {1, -2, 0.5}));
  Graph<float> g(&p);
  auto b = g.constant(Array<float>(Shape{3}, {0, 1, 2}));
  const auto grads = g.backward(mse(g.param("a"), b));
  const float expect[] = {2.0f / 3, -6.0f / 3, -3.0f / 3};
  for (int i = 0; i < 3; ++i) CHECK(grads.at("a")[i] == doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("backward basics") {
  SUBCASE("x squared") {
    ParamStore<float> p;
    p.add("x", Array<float>::scalar(3));
    Graph<float> g(&p);
    auto x = g.param("x");
    CHECK(g.backward(mul(x, x)).at("x").item() == 6.0f);
  }
  SUBCASE("fan-out accumulates") {
    ParamStore<float> p;
    p.add("x", Array<float>::scalar(3));
    Graph<float> g(&p);
    CHECK(g.backward(add(g.param("x"), g.param("x"))).at("x").item() == 2.0f);
  }
  SUBCASE("non-scalar loss is rejected") {
    ParamStore<float> p;
    p.add("x", Array<float>(Shape{2}));
    Graph<float> g(&p);
    CHECK_THROWS_AS(g.backward(g.param("x")), Error);
  }
  SUBCASE("untouched parameters get zeros and the graph is cleared") {
    ParamStore<float> p;
    p.add("x", Array<float>::scalar(3));
    p.add("unused", Array<float>(Shape{2}, {1, 1}));
    Graph<float> g(&p);
    const auto grads = g.backward(sum(g.param("x")));
    CHECK(grads.size() == 2);
    CHECK(grads.at("unused").matrix().isZero());
    CHECK(g.size() == 0);
  }
}

TEST_CASE("mse(Wx, y) gradient matches finite differences") {
  Rng rng(5);
  ParamStore<double> p;
  p.add("w", random_array(rng, Shape{3, 4}));
  const Array<double> x = random_array(rng, Shape{5, 3});
  const Array<double> y = random_array(rng, Shape{5, 4});
  CHECK(grad_check(p, [&](Graph<double>& g) { return mse(matmul(g.constant(x), g.param("w")), g.constant(y)); }) < 1e-3);
}

TEST_CASE("two-layer network matches the hand derivation") {
  // loss = (v * relu(w * x) - y)^2 with scalars, w x > 0.
  const float w = 0.5f, v = -1.5f, x = 2.0f, y = 0.25f;
  ParamStore<float> p;
  p.add("w", Array<float>::scalar(w));
  p.add("v", Array<float>::scalar(v));
  Graph<float> g(&p);
  auto h = relu(mul(g.param("w"), g.constant(Array<float>::scalar(x))));
  auto out = mul(g.param("v"), h);
  auto r = sub(out, g.constant(Array<float>::scalar(y)));
  const auto grads = g.backward(mul(r, r));
  const float resid = v * w * x - y;
  CHECK(grads.at("v").item() == doctest::Approx(2 * resid * w * x));
  CHECK(grads.at("w").item() == doctest::Approx(2 * resid * v * x));
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(6);
  // Inputs kept away from relu's kink.
  auto away_from_zero = [&](const Shape& s) {
    Array<double> a = random_array(rng, s, 0.2, 1.0);
    for (Index i = 0; i < a.size(); ++i)
      if (rng.uniform() < 0.5) a[i] = -a[i];
    return a;
  };
  ParamStore<double> p;
  p.add("a", away_from_zero(Shape{3, 4}));
  p.add("b", random_array(rng, Shape{3, 4}));
  p.add("w", random_array(rng, Shape{4, 5}));
  p.add("bias", random_array(rng, Shape{5}));
  p.add("gain", random_array(rng, Shape{4}, 0.5, 1.5));
  p.add("shift", random_array(rng, Shape{4}));
  p.add("s", random_array(rng, Shape{1}));
  p.add("x3", random_array(rng, Shape{2, 3, 4}));
  p.add("table", random_array(rng, Shape{3, 4}));
  p.add("c", random_array(rng, Shape{2, 4}));
  p.add("q", random_array(rng, Shape{2, 3, 4}));
  p.add("k", random_array(rng, Shape{2, 3, 4}));
  p.add("v", random_array(rng, Shape{2, 3, 4}));

  const std::vector<std::pair<const char*, ikdp::testing::LossFn>> cases = {
      {"matmul", [](Graph<double>& g) { return project(g, matmul(g.param("a"), g.param("w"))); }},
      {"matmul rank 3", [](Graph<double>& g) { return project(g, matmul(g.param("x3"), g.param("w"))); }},
      {"linear", [](Graph<double>& g) { return project(g, linear(g.param("a"), g.param("w"), g.param("bias"))); }},
      {"add", [](Graph<double>& g) { return project(g, add(g.param("a"), g.param("b"))); }},
      {"sub", [](Graph<double>& g) { return project(g, sub(g.param("a"), g.param("b"))); }},
      {"mul", [](Graph<double>& g) { return project(g, mul(g.param("a"), g.param("b"))); }},
      {"mul scalar", [](Graph<double>& g) { return project(g, mul(g.param("a"), g.param("s"))); }},
      {"scale", [](Graph<double>& g) { return project(g, scale(g.param("a"), -1.7)); }},
      {"relu", [](Graph<double>& g) { return project(g, relu(g.param("a"))); }},
      {"gelu", [](Graph<double>& g) { return project(g, gelu(g.param("b"))); }},
      {"sin", [](Graph<double>& g) { return project(g, sin(g.param("b"))); }},
      {"cos", [](Graph<double>& g) { return project(g, cos(g.param("b"))); }},
      {"softmax_rows", [](Graph<double>& g) { return project(g, softmax_rows(g.param("b"))); }},
      {"layer_norm",
       [](Graph<double>& g) { return project(g, layer_norm(g.param("b"), g.param("gain"), g.param("shift"))); }},
      {"mse", [](Graph<double>& g) { return mse(g.param("a"), g.param("b")); }},
      {"reshape", [](Graph<double>& g) { return project(g, reshape(g.param("x3"), Shape{6, 4})); }},
      {"concat_cols",
       [](Graph<double>& g) { return project(g, concat_cols<double>({g.param("a"), g.param("b"), g.param("a")})); }},
      {"add_tiled", [](Graph<double>& g) { return project(g, add_tiled(g.param("x3"), g.param("table"))); }},
      {"add_to_tokens", [](Graph<double>& g) { return project(g, add_to_tokens(g.param("x3"), g.param("c"))); }},
      {"mean_tokens", [](Graph<double>& g) { return project(g, mean_tokens(g.param("x3"))); }},
      {"attention 1 head",
       [](Graph<double>& g) { return project(g, attention(g.param("q"), g.param("k"), g.param("v"), 1)); }},
      {"attention 2 heads",
       [](Graph<double>& g) { return project(g, attention(g.param("q"), g.param("k"), g.param("v"), 2)); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(grad_check(p, fn) < 1e-3);
  }
}

TEST_CASE("adam") {
  AdamConfig cfg;
  SUBCASE("zero gradient leaves params unchanged") {
    ParamStore<float> p, grads;
    p.add("x", Array<float>(Shape{2}, {1, -2}));
    grads.add("x", Array<float>(Shape{2}));
    AdamState<float> st;
    adam_step(p, grads, st, cfg);
    CHECK(p.at("x")[0] == 1.0f);
    CHECK(p.at("x")[1] == -2.0f);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamStore<float> p, grads;
    p.add("x", Array<float>(Shape{2}, {1, -2}));
    grads.add("x", Array<float>(Shape{2}, {3, -0.5}));
    AdamState<float> st;
    adam_step(p, grads, st, cfg);
    CHECK(p.at("x")[0] == doctest::Approx(1 - cfg.lr).epsilon(1e-6));
    CHECK(p.at("x")[1] == doctest::Approx(-2 + cfg.lr).epsilon(1e-6));
  }
  SUBCASE("three steps on x^2 strictly decrease it") {
    ParamStore<float> p;
    p.add("x", Array<float>::scalar(2));
    AdamState<float> st;
    float prev = 4;
    for (int i = 0; i < 3; ++i) {
      Graph<float> g(&p);
      auto x = g.param("x");
      const auto grads = g.backward(mul(x, x));
      adam_step(p, grads, st, cfg);
      const float now = p.at("x").item() * p.at("x").item();
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("non-finite gradient names the parameter") {
    ParamStore<float> p, grads;
    p.add("layer.w", Array<float>::scalar(1));
    grads.add("layer.w", Array<float>::scalar(std::nanf("")));
    AdamState<float> st;
    try {
      adam_step(p, grads, st, cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonFinite);
      CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
    }
    CHECK(p.at("layer.w").item() == 1.0f);
  }
}

TEST_CASE("rng") {
  Rng a(42), b(42);
  for (int i = 0; i < 8; ++i) CHECK(a.normal() == b.normal());

  Rng rng(7);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(s2 / n - mean * mean - 1) < 0.05);

  for (int i = 0; i < 10000; ++i) {
    const auto t = 1 + rng.index(80);
    CHECK((t >= 1 && t <= 80));
    const double u = rng.uniform(-std::numbers::pi, std::numbers::pi);
    CHECK((u >= -std::numbers::pi && u < std::numbers::pi));
  }

  Rng c(42);
  const auto r1 = randn<float>(c, Shape{2, 4});
  c.reseed(42);
  CHECK(randn<float>(c, Shape{2, 4}).matrix() == r1.matrix());
}

TEST_CASE("shape limits") {
  CHECK_THROWS_AS(Shape({1, 2, 3, 4}), Error);
  CHECK_THROWS_AS(Shape({2, 0}), Error);
  CHECK(Shape({2, 3, 4}).rows() == 6);
}
