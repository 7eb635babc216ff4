#include "sparnet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "sparnet/error.hpp"

namespace sparnet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'P', 'A', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint while reading " + what);
  return v;
}

}  // namespace

std::string config_fingerprint(const nlohmann::json& config) {
  const std::string canon = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const Tensor& CheckpointContainer::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw CheckpointError("checkpoint has no array '" + name + "'");
  return it->second;
}

void CheckpointContainer::set_config(const nlohmann::json& config) {
  metadata_["config"] = config;
  metadata_["fingerprint"] = config_fingerprint(config);
}

std::string CheckpointContainer::fingerprint() const {
  if (!metadata_.contains("fingerprint")) return "";
  return metadata_.at("fingerprint").get<std::string>();
}

void CheckpointContainer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  nlohmann::json meta = metadata_;
  meta["format_version"] = kFormatVersion;
  const std::string text = meta.dump();
  out.write(kMagic, sizeof kMagic);
  write_pod<std::uint32_t>(out, kFormatVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_pod<std::uint64_t>(out, arrays_.size());
  for (const auto& [name, t] : arrays_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(real)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

CheckpointContainer CheckpointContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
  const auto meta_len = read_pod<std::uint64_t>(in, "metadata length");
  if (meta_len > (1ULL << 30)) throw CheckpointError("implausible metadata length");
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw CheckpointError("truncated checkpoint metadata");

  CheckpointContainer c;
  try {
    c.metadata_ = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  c.metadata_.erase("format_version");
  const auto count = read_pod<std::uint64_t>(in, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw CheckpointError("implausible array name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    Shape s;
    s.n = read_pod<std::int32_t>(in, name + " shape");
    s.c = read_pod<std::int32_t>(in, name + " shape");
    s.h = read_pod<std::int32_t>(in, name + " shape");
    s.w = read_pod<std::int32_t>(in, name + " shape");
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.numel() > (1ULL << 32))
      throw CheckpointError("implausible shape for array '" + name + "'");
    Tensor t(s);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(real)));
    if (!in) throw CheckpointError("truncated data for array '" + name + "'");
    c.arrays_[name] = std::move(t);
  }
  return c;
}

void CheckpointContainer::store(const nn::ParameterList& params, const std::string& prefix) {
  for (const auto& p : params) arrays_[prefix + p.name] = p.var.value();
}

void CheckpointContainer::restore(const nn::ParameterList& params,
                                  const std::string& prefix) const {
  for (const auto& p : params) {
    const Tensor& t = get(prefix + p.name);
    if (!(t.shape() == p.var.shape()))
      throw CheckpointError("array '" + prefix + p.name + "' has shape " + t.shape().str() +
                            ", model expects " + p.var.shape().str());
    p.var.node()->value = t;
  }
}

}  // namespace sparnet
