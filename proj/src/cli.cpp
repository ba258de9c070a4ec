#include "ikdp/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>

#include "ikdp/baselines.hpp"
#include "ikdp/viz.hpp"

namespace ikdp {

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string_view item(text.data() + start, comma - start);
    T v{};
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw CLI::ValidationError(flag, "cannot parse '" + std::string(item) + "' in '" + text + "'");
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

Point2 parse_target(const std::string& text) {
  const auto v = parse_list<double>(text, "--target");
  if (v.size() != 2) throw CLI::ValidationError("--target", "expected x,y, got '" + text + "'");
  return {v[0], v[1]};
}

std::string join(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v(i));
  }
  return s;
}

void write_eval_report(const std::filesystem::path& path, std::string_view solver, const ChainSpec& chain, int timesteps,
                       const EvalMetrics& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "solver,n_joints,T,samples,mean_angle_distance,mean_target_distance\n";
  out << solver << ',' << chain.num_joints() << ',' << timesteps << ',' << m.samples << ','
      << format_double(m.mean_angle_distance) << ',' << format_double(m.mean_target_distance) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

struct SampleFlags {
  std::string ckpt;
  std::string target;
  std::uint64_t seed = 0;
  std::string trace;
  int count = 1;
};

void add_sample_flags(CLI::App* cmd, SampleFlags& f, bool trace_required) {
  cmd->add_option("--ckpt", f.ckpt, "Diffusion checkpoint")->required();
  cmd->add_option("--target", f.target, "Target tip position x,y")->required();
  cmd->add_option("--seed", f.seed, "Sampler seed")->required();
  auto* trace = cmd->add_option("--trace", f.trace, "Write the denoising trace of the first sample as SVG");
  if (trace_required) trace->required();
  cmd->add_option("--count", f.count, "Samples to draw for the target")->capture_default_str()->check(CLI::PositiveNumber);
}

void run_sample(const SampleFlags& f, std::ostream& out) {
  const Point2 target = parse_target(f.target);
  const Checkpoint ckpt = load_checkpoint(f.ckpt);
  if (ckpt.kind != ModelKind::kDiffusion) throw Error(ErrorCode::kCheckpointMismatch, "sample needs a diffusion checkpoint");
  Eigen::MatrixXd targets(f.count, 2);
  targets.rowwise() = target.transpose();
  Rng rng(f.seed);
  SampleOptions opts;
  opts.trace = !f.trace.empty();
  const SampleResult res =
      sample(make_denoiser(ckpt), targets, ckpt.chain.num_joints(), ckpt.schedule(), ckpt.param(), rng, opts);
  for (Eigen::Index r = 0; r < res.theta0.rows(); ++r) {
    const Eigen::VectorXd theta = res.theta0.row(r).transpose();
    const Point2 tip = forward_kinematics(ckpt.chain, theta);
    out << "theta=" << join(theta) << " tip=" << join(tip) << " distance=" << format_double(target_distance(tip, target))
        << '\n';
  }
  if (opts.trace) {
    std::vector<Eigen::VectorXd> first;
    for (const auto& state : res.trace) first.push_back(state.row(0).transpose());
    emit_trace_svg(first, ckpt.chain, target, f.trace);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inverse kinematics by conditional denoising diffusion", "ikdp"};
  app.require_subcommand(1);

  // gen
  int gen_joints = 0;
  Index gen_count = 100000;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a (theta, target) dataset");
  gen->add_option("--joints", gen_joints, "Number of unit-length bones")->required()->check(CLI::PositiveNumber);
  gen->add_option("--count", gen_count, "Records")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generation seed")->required();
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // train
  TrainingConfig tcfg;
  std::string train_data, train_param = "x0";
  std::optional<double> beta_start, beta_end;
  auto* train_cmd = app.add_subcommand("train", "Train the diffusion denoiser");
  train_cmd->add_option("--data", train_data, "Dataset CSV")->required();
  train_cmd->add_option("--timesteps", tcfg.timesteps, "Diffusion steps T")->capture_default_str();
  train_cmd->add_option("--beta-start", beta_start, "First beta (default 0.1/T, i.e. 1e-4 at T=1000)");
  train_cmd->add_option("--beta-end", beta_end, "Last beta (default min(20/T, 0.999), i.e. 0.02 at T=1000)");
  train_cmd->add_option("--epochs", tcfg.epochs, "Passes over the data")->required();
  train_cmd->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", tcfg.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--param", train_param, "Network target: x0 or eps")->capture_default_str()->check(CLI::IsMember({"x0", "eps"}));
  train_cmd->add_option("--seed", tcfg.seed, "Training seed")->required();
  train_cmd->add_option("--out", tcfg.checkpoint_path, "Checkpoint path")->required();
  train_cmd->add_option("--log", tcfg.log_path, "Training log CSV (step,loss,dist)");
  train_cmd->add_option("--max-steps", tcfg.max_steps, "Stop after this many steps (0 = all epochs)")->capture_default_str();
  train_cmd->add_option("--eval-interval", tcfg.eval_interval, "Steps between Dist evaluations")->capture_default_str();
  train_cmd->add_option("--embed-dim", tcfg.model.embed_dim, "Token width")->capture_default_str();
  train_cmd->add_option("--heads", tcfg.model.num_heads, "Attention heads")->capture_default_str();
  train_cmd->add_option("--enc-layers", tcfg.model.enc_layers, "Encoder blocks")->capture_default_str();
  train_cmd->add_option("--dec-layers", tcfg.model.dec_layers, "Decoder blocks")->capture_default_str();
  train_cmd->add_option("--mlp-hidden", tcfg.model.mlp_hidden, "Fusion and feed-forward width")->capture_default_str();

  // sample / viz-trace
  SampleFlags sample_flags, trace_flags;
  auto* sample_cmd = app.add_subcommand("sample", "Solve a target with a trained checkpoint");
  add_sample_flags(sample_cmd, sample_flags, false);
  auto* trace_cmd = app.add_subcommand("viz-trace", "Same as sample, with --trace required");
  add_sample_flags(trace_cmd, trace_flags, true);

  // eval
  std::string eval_ckpt, eval_data, eval_report;
  int eval_samples = 1;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Mean angle and target distance over a dataset");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Diffusion checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Targets with ground-truth angles (CSV)")->required();
  eval_cmd->add_option("--report", eval_report, "Report CSV")->required();
  eval_cmd->add_option("--samples", eval_samples, "Samples per target")->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "Sampler seed")->capture_default_str();

  // baseline train / eval
  auto* baseline = app.add_subcommand("baseline", "MLP regression baseline");
  baseline->require_subcommand(1);
  MlpBaselineConfig mcfg;
  std::string mlp_data, mlp_hidden = "256,256";
  auto* btrain = baseline->add_subcommand("train", "Train the MLP baseline");
  btrain->add_option("--data", mlp_data, "Dataset CSV")->required();
  btrain->add_option("--hidden", mlp_hidden, "Hidden widths")->capture_default_str();
  btrain->add_option("--epochs", mcfg.epochs, "Passes over the data")->required();
  btrain->add_option("--batch", mcfg.batch_size, "Batch size")->capture_default_str();
  btrain->add_option("--lr", mcfg.lr, "Adam learning rate")->capture_default_str();
  btrain->add_option("--seed", mcfg.seed, "Training seed")->required();
  btrain->add_option("--out", mcfg.checkpoint_path, "Checkpoint path")->required();
  btrain->add_option("--log", mcfg.log_path, "Training log CSV");
  btrain->add_option("--max-steps", mcfg.max_steps, "Stop after this many steps (0 = all epochs)")->capture_default_str();
  std::string beval_ckpt, beval_data, beval_report;
  auto* beval = baseline->add_subcommand("eval", "Evaluate the MLP baseline");
  beval->add_option("--ckpt", beval_ckpt, "MLP checkpoint")->required();
  beval->add_option("--data", beval_data, "Targets with ground-truth angles (CSV)")->required();
  beval->add_option("--report", beval_report, "Report CSV")->required();

  // bench
  std::string bench_ckpt, bench_baseline, bench_targets, bench_report;
  int bench_reps = 1;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "Wall-clock single-target solve times");
  bench->add_option("--ckpt", bench_ckpt, "Diffusion checkpoint")->required();
  bench->add_option("--baseline-ckpt", bench_baseline, "MLP checkpoint");
  bench->add_option("--targets", bench_targets, "Targets CSV")->required();
  bench->add_option("--reps", bench_reps, "Passes over the targets")->required()->check(CLI::PositiveNumber);
  bench->add_option("--report", bench_report, "Report CSV")->required();
  bench->add_option("--seed", bench_seed, "Sampler seed")->capture_default_str();

  // viz-noising
  std::string vn_data, vn_out, vn_steps = "0,20,40,80";
  int vn_timesteps = 80, vn_bins = 20;
  std::uint64_t vn_seed = 0;
  std::optional<double> vn_beta_start, vn_beta_end;
  auto* vn = app.add_subcommand("viz-noising", "Histograms of the forward noising process");
  vn->add_option("--data", vn_data, "Dataset CSV")->required();
  vn->add_option("--timesteps", vn_timesteps, "Diffusion steps T")->capture_default_str();
  vn->add_option("--beta-start", vn_beta_start, "First beta (default 0.1/T)");
  vn->add_option("--beta-end", vn_beta_end, "Last beta (default min(20/T, 0.999))");
  vn->add_option("--steps", vn_steps, "Steps to show; 0 is the raw data panel, always drawn")->capture_default_str();
  vn->add_option("--bins", vn_bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  vn->add_option("--seed", vn_seed, "Noise seed")->capture_default_str();
  vn->add_option("--out", vn_out, "Output SVG")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "ikdp: usage: " << e.what() << '\n';
    return 1;
  }

  try {
    if (gen->parsed()) {
      const Dataset ds = generate(ChainSpec::unit(gen_joints), gen_count, gen_seed);
      save_csv(ds, gen_out);
      out << "wrote " << ds.size() << " records to " << gen_out << '\n';
    } else if (train_cmd->parsed()) {
      const Dataset ds = load_csv(train_data);
      const auto [lo, hi] = default_beta_range(tcfg.timesteps);
      tcfg.beta_start = beta_start.value_or(lo);
      tcfg.beta_end = beta_end.value_or(hi);
      tcfg.param = parse_parameterization(train_param);
      const TrainResult res = train(ds, tcfg);
      out << "trained " << res.checkpoint.steps << " steps, final loss "
          << (res.log.empty() ? 0.0 : res.log.back().loss) << ", checkpoint " << tcfg.checkpoint_path.string() << '\n';
    } else if (sample_cmd->parsed()) {
      run_sample(sample_flags, out);
    } else if (trace_cmd->parsed()) {
      run_sample(trace_flags, out);
    } else if (eval_cmd->parsed()) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const Dataset ds = load_csv(eval_data);
      Rng rng(eval_seed);
      const EvalMetrics m = eval(ckpt, ds, eval_samples, rng);
      write_eval_report(eval_report, "diffusion", ckpt.chain, ckpt.timesteps, m);
      out << "mean_angle_distance=" << m.mean_angle_distance << " mean_target_distance=" << m.mean_target_distance << '\n';
    } else if (baseline->parsed()) {
      if (btrain->parsed()) {
        mcfg.hidden = parse_list<int>(mlp_hidden, "--hidden");
        const TrainResult res = mlp_train(load_csv(mlp_data), mcfg);
        out << "trained " << res.checkpoint.steps << " steps, final loss "
            << (res.log.empty() ? 0.0 : res.log.back().loss) << ", checkpoint " << mcfg.checkpoint_path.string() << '\n';
      } else {
        const Checkpoint ckpt = load_checkpoint(beval_ckpt);
        const EvalMetrics m = mlp_eval(ckpt, load_csv(beval_data));
        write_eval_report(beval_report, "mlp", ckpt.chain, 0, m);
        out << "mean_angle_distance=" << m.mean_angle_distance << " mean_target_distance=" << m.mean_target_distance
            << '\n';
      }
    } else if (bench->parsed()) {
      const Dataset targets = load_csv(bench_targets);
      std::vector<BenchStats> rows;
      rows.push_back(benchmark_solve(Solver::kDiffusion, load_checkpoint(bench_ckpt), targets, bench_reps, bench_seed));
      if (!bench_baseline.empty())
        rows.push_back(benchmark_solve(Solver::kMlp, load_checkpoint(bench_baseline), targets, bench_reps, bench_seed));
      write_bench_csv(rows, bench_report);
      out << "hardware: " << hardware_summary() << '\n';
      for (const auto& r : rows)
        out << to_string(r.solver) << ": mean " << r.mean_seconds << " s/solve, median " << r.median_seconds
            << " s/solve, mean target distance " << r.mean_target_distance << '\n';
    } else if (vn->parsed()) {
      const Dataset ds = load_csv(vn_data);
      const auto [lo, hi] = default_beta_range(vn_timesteps);
      const NoiseSchedule sched = linear_schedule(vn_timesteps, vn_beta_start.value_or(lo), vn_beta_end.value_or(hi));
      std::vector<int> steps;
      for (int t : parse_list<int>(vn_steps, "--steps"))
        if (t != 0) steps.push_back(t);
      emit_noising_histogram(ds, sched, steps, vn_bins, vn_seed, vn_out);
      out << "wrote " << steps.size() + 1 << " panels to " << vn_out << '\n';
    }
  } catch (const CLI::ValidationError& e) {
    err << "ikdp: usage: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "ikdp: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "ikdp: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace ikdp
