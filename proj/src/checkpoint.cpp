#include "ikdp/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "ikdp/baselines.hpp"

namespace ikdp {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'I', 'K', 'D', 'P'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::kTruncated, "file ends inside " + what + " (need " + std::to_string(n) + " bytes, " +
                                             std::to_string(bytes_.size() - pos_) + " left)");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, const std::string& key) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::kCheckpointMismatch, "metadata '" + key + "' has unreadable value '" + std::string(text) + "'");
  return v;
}

std::string metadata_text(const Checkpoint& c) {
  std::ostringstream m;
  m << "kind=" << (c.kind == ModelKind::kDiffusion ? "ikdp" : "mlp") << '\n';
  m << "joints=" << c.chain.num_joints() << '\n';
  m << "bones=" << join_doubles(c.chain.bone_lengths()) << '\n';
  if (c.kind == ModelKind::kDiffusion) {
    m << "param=" << to_string(c.model.param) << '\n';
    m << "embed_dim=" << c.model.embed_dim << '\n';
    m << "num_heads=" << c.model.num_heads << '\n';
    m << "enc_layers=" << c.model.enc_layers << '\n';
    m << "dec_layers=" << c.model.dec_layers << '\n';
    m << "mlp_hidden=" << c.model.mlp_hidden << '\n';
    m << "time_embed_dim=" << c.model.time_embed_dim << '\n';
    m << "timesteps=" << c.timesteps << '\n';
    m << "beta_start=" << format_double(c.beta_start) << '\n';
    m << "beta_end=" << format_double(c.beta_end) << '\n';
  } else {
    m << "hidden=" << join_ints(c.hidden) << '\n';
  }
  m << "steps=" << c.steps << '\n';
  m << "seed=" << c.seed << '\n';
  return m.str();
}

std::map<std::string, std::string, std::less<>> parse_metadata(std::string_view text) {
  std::map<std::string, std::string, std::less<>> kv;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::kCheckpointMismatch, "metadata line without '=': " + std::string(line));
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return kv;
}

const std::string& required(const std::map<std::string, std::string, std::less<>>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::kCheckpointMismatch, "metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  const std::string meta = metadata_text(ckpt);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    const Shape& s = e.value.shape();
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.rank()));
    for (int i = 0; i < s.rank(); ++i) put<std::uint32_t>(out, static_cast<std::uint32_t>(s[i]));
    out.append(reinterpret_cast<const char*>(e.value.data()), static_cast<std::size_t>(e.value.size()) * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (magic != std::string_view(kMagic, 4)) throw Error(ErrorCode::kBadMagic, "not an IKDP checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion)
    throw Error(ErrorCode::kUnsupportedVersion, "checkpoint version " + std::to_string(version) + ", expected " +
                                                    std::to_string(Checkpoint::kVersion));
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto kv = parse_metadata(r.take(meta_len, "metadata"));

  Checkpoint c;
  const std::string& kind = required(kv, "kind");
  if (kind == "ikdp")
    c.kind = ModelKind::kDiffusion;
  else if (kind == "mlp")
    c.kind = ModelKind::kMlp;
  else
    throw Error(ErrorCode::kCheckpointMismatch, "unknown model kind '" + kind + "'");

  std::vector<double> bones;
  for (auto b : split_list(required(kv, "bones"))) bones.push_back(parse_number<double>(b, "bones"));
  c.chain = ChainSpec(std::move(bones));
  const int joints = parse_number<int>(required(kv, "joints"), "joints");
  if (joints != c.chain.num_joints())
    throw Error(ErrorCode::kCheckpointMismatch, "joints=" + std::to_string(joints) + " but " +
                                                    std::to_string(c.chain.num_joints()) + " bone lengths");
  c.model.joints = joints;
  c.steps = parse_number<long>(required(kv, "steps"), "steps");
  c.seed = parse_number<std::uint64_t>(required(kv, "seed"), "seed");

  std::vector<std::pair<std::string, Shape>> layout;
  if (c.kind == ModelKind::kDiffusion) {
    c.model.param = parse_parameterization(required(kv, "param"));
    c.model.embed_dim = parse_number<int>(required(kv, "embed_dim"), "embed_dim");
    c.model.num_heads = parse_number<int>(required(kv, "num_heads"), "num_heads");
    c.model.enc_layers = parse_number<int>(required(kv, "enc_layers"), "enc_layers");
    c.model.dec_layers = parse_number<int>(required(kv, "dec_layers"), "dec_layers");
    c.model.mlp_hidden = parse_number<int>(required(kv, "mlp_hidden"), "mlp_hidden");
    c.model.time_embed_dim = parse_number<int>(required(kv, "time_embed_dim"), "time_embed_dim");
    c.timesteps = parse_number<int>(required(kv, "timesteps"), "timesteps");
    c.beta_start = parse_number<double>(required(kv, "beta_start"), "beta_start");
    c.beta_end = parse_number<double>(required(kv, "beta_end"), "beta_end");
    c.schedule();  // validates the stored range
    layout = param_layout(c.model);
  } else {
    for (auto h : split_list(required(kv, "hidden"))) c.hidden.push_back(parse_number<int>(h, "hidden"));
    layout = mlp_layout(joints, c.hidden);
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != layout.size())
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                                                    std::to_string(layout.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>(where + " name length");
    const std::string name(r.take(name_len, where + " name"));
    const auto rank = r.get<std::uint8_t>("tensor '" + name + "' rank");
    if (rank < 1 || rank > Shape::kMaxRank)
      throw Error(ErrorCode::kCheckpointMismatch, "tensor '" + name + "' has rank " + std::to_string(rank));
    std::array<Index, Shape::kMaxRank> dims{};
    for (int k = 0; k < rank; ++k) dims[k] = r.get<std::uint32_t>("tensor '" + name + "' dims");
    const Shape shape = rank == 1 ? Shape{dims[0]} : rank == 2 ? Shape{dims[0], dims[1]} : Shape{dims[0], dims[1], dims[2]};
    const auto& [want_name, want_shape] = layout[i];
    if (name != want_name || !(shape == want_shape))
      throw Error(ErrorCode::kCheckpointMismatch, "tensor '" + name + "' " + shape.str() + " where config expects '" +
                                                      want_name + "' " + want_shape.str());
    const auto payload = r.take(static_cast<std::size_t>(shape.numel()) * sizeof(float), "tensor '" + name + "' payload");
    Array<float> value(shape);
    std::memcpy(value.data(), payload.data(), payload.size());
    c.params.add(name, std::move(value));
  }
  if (!r.done()) throw Error(ErrorCode::kCheckpointMismatch, "trailing bytes after last tensor");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace ikdp
