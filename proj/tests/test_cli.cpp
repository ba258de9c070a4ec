#include <doctest.h>

#include <sstream>

#include <sys/wait.h>

#include "ikdp/cli.hpp"
#include "support.hpp"

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "ikdp");
  std::ostringstream out, err;
  const int code = ikdp::run(args, out, err);
  return {code, out.str(), err.str()};
}

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("every command end to end on a tiny chain") {
  ikdp::testing::TempDir dir("cli");
  auto p = [&](const std::string& name) { return (dir / name).string(); };

  auto r = call({"gen", "--joints", "2", "--count", "1000", "--seed", "1", "--out", p("train.csv")});
  REQUIRE(r.code == 0);
  CHECK(count_lines(ikdp::testing::read_file(p("train.csv"))) == 1002);  // comment + header + rows
  REQUIRE(call({"gen", "--joints", "2", "--count", "50", "--seed", "2", "--out", p("test.csv")}).code == 0);

  const std::vector<std::string> train_args = {"train", "--data", p("train.csv"), "--timesteps", "10", "--epochs", "1",
                                               "--batch", "32", "--max-steps", "20", "--eval-interval", "10",
                                               "--embed-dim", "16", "--heads", "2", "--enc-layers", "1",
                                               "--dec-layers", "1", "--mlp-hidden", "32", "--seed", "3"};
  auto train_with = [&](const std::string& out, const std::string& log) {
    auto args = train_args;
    args.insert(args.end(), {"--out", out, "--log", log});
    return call(args);
  };
  r = train_with(p("a.ckpt"), p("a.log"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trained 20 steps") != std::string::npos);
  REQUIRE(train_with(p("b.ckpt"), p("b.log")).code == 0);
  CHECK(ikdp::testing::read_file(p("a.ckpt")) == ikdp::testing::read_file(p("b.ckpt")));
  CHECK(ikdp::testing::read_file(p("a.log")) == ikdp::testing::read_file(p("b.log")));
  CHECK(ikdp::testing::read_file(p("a.log")).rfind("step,loss,dist\n", 0) == 0);

  r = call({"sample", "--ckpt", p("a.ckpt"), "--target", "1.0,0.5", "--seed", "4", "--count", "3"});
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 3);
  const auto first = r.out.substr(0, r.out.find('\n'));
  const auto theta = first.substr(6, first.find(' ') - 6);
  CHECK(std::count(theta.begin(), theta.end(), ',') == 1);
  CHECK(first.find(" tip=") != std::string::npos);
  CHECK(call({"sample", "--ckpt", p("a.ckpt"), "--target", "1.0,0.5", "--seed", "4", "--count", "3"}).out == r.out);

  r = call({"viz-trace", "--ckpt", p("a.ckpt"), "--target", "1.0,0.5", "--seed", "4", "--trace", p("trace.svg")});
  REQUIRE(r.code == 0);
  const std::string svg = ikdp::testing::read_file(p("trace.svg"));
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t chains = 0;
  for (auto at = svg.find("class=\"chain\""); at != std::string::npos; at = svg.find("class=\"chain\"", at + 1)) ++chains;
  CHECK(chains == 11);

  r = call({"eval", "--ckpt", p("a.ckpt"), "--data", p("test.csv"), "--report", p("eval.csv"), "--samples", "2"});
  REQUIRE(r.code == 0);
  const std::string report = ikdp::testing::read_file(p("eval.csv"));
  CHECK(report.rfind("solver,n_joints,T,samples,mean_angle_distance,mean_target_distance\ndiffusion,2,10,100,", 0) == 0);

  r = call({"baseline", "train", "--data", p("train.csv"), "--hidden", "16,16", "--epochs", "1", "--seed", "5",
            "--out", p("mlp.ckpt")});
  REQUIRE(r.code == 0);
  r = call({"baseline", "eval", "--ckpt", p("mlp.ckpt"), "--data", p("test.csv"), "--report", p("mlp.csv")});
  REQUIRE(r.code == 0);
  CHECK(ikdp::testing::read_file(p("mlp.csv")).find("\nmlp,2,0,50,") != std::string::npos);

  r = call({"bench", "--ckpt", p("a.ckpt"), "--baseline-ckpt", p("mlp.ckpt"), "--targets", p("test.csv"), "--reps",
            "1", "--report", p("bench.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("hardware: ", 0) == 0);
  CHECK(count_lines(ikdp::testing::read_file(p("bench.csv"))) == 3);

  r = call({"viz-noising", "--data", p("train.csv"), "--timesteps", "10", "--steps", "0,5,10", "--out", p("h.svg")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 3 panels") != std::string::npos);

  SUBCASE("runtime failures exit 2") {
    r = call({"sample", "--ckpt", p("mlp.ckpt"), "--target", "1,0", "--seed", "1"});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("ikdp: error: ", 0) == 0);
    CHECK(call({"eval", "--ckpt", p("missing.ckpt"), "--data", p("test.csv"), "--report", p("x.csv")}).code == 2);
    CHECK(call({"viz-noising", "--data", p("train.csv"), "--timesteps", "10", "--steps", "11", "--out", p("h.svg")})
              .code == 2);
  }
}

TEST_CASE("usage errors exit 1 and name the flag") {
  auto r = call({"gen", "--joints", "2", "--seed", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--out") != std::string::npos);
  CHECK(count_lines(r.err) == 1);
  r = call({"sample", "--ckpt", "x", "--target", "1;2", "--seed", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--target") != std::string::npos);
  CHECK(call({"train", "--data", "x", "--epochs", "1", "--seed", "1", "--out", "y", "--param", "v"}).code == 1);
  CHECK(call({}).code == 1);
  CHECK(call({"frobnicate"}).code == 1);
  r = call({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("viz-noising") != std::string::npos);
}

TEST_CASE("installed binary propagates exit codes") {
  const std::string tool = IKDP_TOOL_PATH;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(tool + " --help") == 0);
  CHECK(status(tool + " gen --joints 2") == 1);
  CHECK(status(tool + " eval --ckpt /nonexistent/a --data /nonexistent/b --report /tmp/r.csv") == 2);
}
