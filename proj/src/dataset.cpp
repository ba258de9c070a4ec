#include "ikdp/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ikdp {

namespace {

constexpr std::string_view kMagicComment = "# ikdp-dataset v1";

float uniform_angle(Rng& rng) {
  constexpr double kPi = std::numbers::pi;
  float v = static_cast<float>(rng.uniform(-kPi, kPi));
  // float(pi) is above pi; keep the half-open interval after rounding.
  if (static_cast<double>(v) >= kPi) v = std::nextafter(static_cast<float>(kPi), 0.0f);
  return v;
}

void fill_shard(const ChainSpec& chain, Dataset& ds, Index shard, std::uint64_t seed) {
  const Index begin = shard * kShardRecords;
  const Index end = std::min(ds.size(), begin + kShardRecords);
  const int n = chain.num_joints();
  Rng rng(seed ^ static_cast<std::uint64_t>(shard));
  auto block = ds.thetas.middleRows(begin, end - begin);
  for (Index r = 0; r < block.rows(); ++r)
    for (int j = 0; j < n; ++j) block(r, j) = uniform_angle(rng);
  ds.targets.middleRows(begin, end - begin) =
      forward_kinematics_batch(chain, block.template cast<double>()).template cast<float>();
}

std::string format_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

float parse_field(std::string_view field, std::size_t line_no, std::size_t column) {
  float v = 0.0f;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v))
    throw Error(ErrorCode::kNonFinite, "line " + std::to_string(line_no) + " column " + std::to_string(column) +
                                           ": '" + std::string(field) + "' is not a finite number");
  return v;
}

}  // namespace

IKRecord Dataset::record(Index i) const {
  return {thetas.row(i).transpose().cast<double>(), targets.row(i).transpose().cast<double>()};
}

int worker_count() {
  if (const char* env = std::getenv("IKDP_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset generate(const ChainSpec& chain, Index count, std::uint64_t seed, int workers) {
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "dataset count must be positive");
  Dataset ds;
  ds.chain = chain;
  ds.seed = seed;
  ds.thetas.resize(count, chain.num_joints());
  ds.targets.resize(count, 2);
  const Index shards = (count + kShardRecords - 1) / kShardRecords;
  const int pool = static_cast<int>(std::min<Index>(workers > 0 ? workers : worker_count(), shards));
  if (pool <= 1) {
    for (Index s = 0; s < shards; ++s) fill_shard(chain, ds, s, seed);
    return ds;
  }
  std::vector<std::thread> threads;
  for (int w = 0; w < pool; ++w)
    threads.emplace_back([&, w] {
      for (Index s = w; s < shards; s += pool) fill_shard(chain, ds, s, seed);
    });
  for (auto& t : threads) t.join();
  return ds;
}

void validate(const Dataset& ds, double tolerance) {
  const auto tips = forward_kinematics_batch(ds.chain, ds.thetas.cast<double>());
  for (Index i = 0; i < ds.size(); ++i) {
    const double err = (tips.row(i) - ds.targets.row(i).cast<double>()).norm();
    if (!(err <= tolerance))
      throw Error(ErrorCode::kFkInconsistent, "record " + std::to_string(i) + ": stored target is " +
                                                  std::to_string(err) + " from forward kinematics");
  }
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const int n = ds.chain.num_joints();
  out << kMagicComment << " N=" << n << " seed=" << ds.seed << '\n';
  for (int j = 0; j < n; ++j) out << "theta_" << j << ',';
  out << "t_x,t_y\n";
  std::string line;
  for (Index i = 0; i < ds.size(); ++i) {
    line.clear();
    for (int j = 0; j < n; ++j) {
      line += format_float(ds.thetas(i, j));
      line += ',';
    }
    line += format_float(ds.targets(i, 0));
    line += ',';
    line += format_float(ds.targets(i, 1));
    line += '\n';
    out << line;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t seed = 0;

  if (!std::getline(in, line)) throw Error(ErrorCode::kMalformedHeader, path.string() + " is empty");
  ++line_no;
  if (line.starts_with('#')) {
    if (!line.starts_with(kMagicComment))
      throw Error(ErrorCode::kMalformedHeader, "unrecognized comment line: " + line);
    if (const auto pos = line.find("seed="); pos != std::string::npos)
      std::from_chars(line.data() + pos + 5, line.data() + line.size(), seed);
    if (!std::getline(in, line)) throw Error(ErrorCode::kMalformedHeader, "missing column header");
    ++line_no;
  }

  const auto header = split_fields(line);
  if (header.size() < 3) throw Error(ErrorCode::kMalformedHeader, "header needs theta columns and t_x,t_y: " + line);
  const int n = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < n; ++j)
    if (header[static_cast<std::size_t>(j)] != "theta_" + std::to_string(j))
      throw Error(ErrorCode::kMalformedHeader, "expected theta_" + std::to_string(j) + ", got '" +
                                                   std::string(header[static_cast<std::size_t>(j)]) + "'");
  if (header[header.size() - 2] != "t_x" || header.back() != "t_y")
    throw Error(ErrorCode::kMalformedHeader, "header must end with t_x,t_y: " + line);

  std::vector<float> values;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::kColumnCount, "line " + std::to_string(line_no) + " has " +
                                               std::to_string(fields.size()) + " fields, header has " +
                                               std::to_string(header.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) values.push_back(parse_field(fields[c], line_no, c));
    ++rows;
  }

  Dataset ds;
  ds.chain = ChainSpec::unit(n);
  ds.seed = seed;
  ds.thetas.resize(rows, n);
  ds.targets.resize(rows, 2);
  const Eigen::Map<const Mat<float>> all(values.data(), rows, n + 2);
  ds.thetas = all.leftCols(n);
  ds.targets = all.rightCols(2);
  validate(ds, 1e-4);
  return ds;
}

Dataset subset(const Dataset& ds, std::span<const Index> rows) {
  Dataset out;
  out.chain = ds.chain;
  out.seed = ds.seed;
  out.thetas.resize(static_cast<Index>(rows.size()), ds.thetas.cols());
  out.targets.resize(static_cast<Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.thetas.row(static_cast<Index>(i)) = ds.thetas.row(rows[i]);
    out.targets.row(static_cast<Index>(i)) = ds.targets.row(rows[i]);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "train fraction must lie in (0, 1)");
  const Index n = ds.size();
  const Index n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train <= 0 || n_train >= n)
    throw Error(ErrorCode::kInvalidArgument, "split of " + std::to_string(n) + " records at " +
                                                 std::to_string(train_fraction) + " leaves one side empty");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.index(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const std::span<const Index> all(order);
  return {subset(ds, all.first(static_cast<std::size_t>(n_train))), subset(ds, all.subspan(static_cast<std::size_t>(n_train)))};
}

}  // namespace ikdp
