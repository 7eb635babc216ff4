#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "sparnet/nn.hpp"

namespace sparnet {

// Named-array archive with a JSON metadata record.
//
// File layout (little-endian):
//   "SPARCKPT"                       8-byte magic
//   u32 format_version
//   u64 metadata length, metadata bytes (UTF-8 JSON)
//   u64 array count, then per array:
//     u32 name length, name bytes, i32 n, i32 c, i32 h, i32 w,
//     numel x f64 values
//
// Arrays are kept sorted by name so the encoding is canonical.
class CheckpointContainer {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  void put(const std::string& name, const Tensor& t) { arrays_[name] = t; }
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& arrays() const { return arrays_; }

  // Stores the config record and its fingerprint.
  void set_config(const nlohmann::json& config);
  std::string fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static CheckpointContainer load(const std::filesystem::path& path);

  // Copies `prefix + name` arrays into the listed variables. Every variable
  // must be present with a matching shape.
  void store(const nn::ParameterList& params, const std::string& prefix = "");
  void restore(const nn::ParameterList& params, const std::string& prefix = "") const;

 private:
  nlohmann::json metadata_ = nlohmann::json::object();
  std::map<std::string, Tensor> arrays_;
};

// FNV-1a 64 over the canonical (sorted-key, compact) JSON dump, as 16 hex chars.
std::string config_fingerprint(const nlohmann::json& config);

}  // namespace sparnet
