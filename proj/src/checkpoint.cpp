#include "defmod/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "defmod/error.hpp"

namespace defmod {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'F', 'M', 'O', 'D', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put_raw<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = raw<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(Vec& out, std::size_t n) {
    need(n * sizeof(double));
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(n <= bytes_.size() - pos_, ErrorCode::Format, "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string hexfloat(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put_raw<std::uint32_t>(out, kVersion);
  put_raw<std::uint64_t>(out, meta.size());
  for (const auto& [k, v] : meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_raw<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_str(out, name);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_raw<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  require(bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0,
          ErrorCode::Format, "not a checkpoint file (bad magic)");
  Reader rd(bytes);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) rd.raw<char>();
  const auto version = rd.raw<std::uint32_t>();
  require(version == kVersion, ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto n_meta = rd.raw<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = rd.str();
    ck.meta[k] = rd.str();
  }
  const auto n_tensors = rd.raw<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    auto name = rd.str();
    StoredTensor t;
    const auto ndim = rd.raw<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(rd.raw<std::uint64_t>());
      count *= t.shape.back();
    }
    rd.doubles(t.data, count);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  require(rd.done(), ErrorCode::Format, "trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

const std::string& Checkpoint::get_meta(const std::string& key) const {
  auto it = meta.find(key);
  require(it != meta.end(), ErrorCode::Format, "checkpoint is missing metadata '" + key + "'");
  return it->second;
}

const StoredTensor& Checkpoint::get_tensor(const std::string& name) const {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::Format, "checkpoint is missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put(const std::string& prefix, const ParamTensor& p, bool with_moments) {
  const std::vector<std::uint64_t> shape{p.rows(), p.cols()};
  tensors[prefix + p.name()] = {shape, p.value};
  if (with_moments) {
    tensors["adam.m/" + prefix + p.name()] = {shape, p.m};
    tensors["adam.v/" + prefix + p.name()] = {shape, p.v};
  }
}

void Checkpoint::put(const std::string& prefix, const ParamList& params, bool with_moments) {
  for (const auto* p : params) put(prefix, *p, with_moments);
}

void Checkpoint::get(const std::string& prefix, ParamTensor& p, bool with_moments) const {
  auto load_into = [&](const std::string& key, Vec& dst) {
    const auto& t = get_tensor(key);
    require(t.shape.size() == 2 && t.shape[0] == p.rows() && t.shape[1] == p.cols(), ErrorCode::Format,
            "shape mismatch for tensor '" + key + "'");
    dst = t.data;
  };
  load_into(prefix + p.name(), p.value);
  if (with_moments && tensors.contains("adam.m/" + prefix + p.name())) {
    load_into("adam.m/" + prefix + p.name(), p.m);
    load_into("adam.v/" + prefix + p.name(), p.v);
  }
}

void Checkpoint::get(const std::string& prefix, const ParamList& params, bool with_moments) const {
  for (auto* p : params) get(prefix, *p, with_moments);
}

void Checkpoint::put_adam(const std::string& prefix, const AdamConfig& cfg) {
  meta[prefix + "adam.lr"] = hexfloat(cfg.lr);
  meta[prefix + "adam.beta1"] = hexfloat(cfg.beta1);
  meta[prefix + "adam.beta2"] = hexfloat(cfg.beta2);
  meta[prefix + "adam.eps"] = hexfloat(cfg.eps);
  meta[prefix + "adam.step"] = std::to_string(cfg.step);
}

void Checkpoint::get_adam(const std::string& prefix, AdamConfig& cfg) const {
  cfg.lr = std::strtod(get_meta(prefix + "adam.lr").c_str(), nullptr);
  cfg.beta1 = std::strtod(get_meta(prefix + "adam.beta1").c_str(), nullptr);
  cfg.beta2 = std::strtod(get_meta(prefix + "adam.beta2").c_str(), nullptr);
  cfg.eps = std::strtod(get_meta(prefix + "adam.eps").c_str(), nullptr);
  cfg.step = std::stol(get_meta(prefix + "adam.step"));
}

}  // namespace defmod
