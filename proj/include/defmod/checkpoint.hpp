#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "defmod/tensor.hpp"

namespace defmod {

struct StoredTensor {
  std::vector<std::uint64_t> shape;
  Vec data;
  bool operator==(const StoredTensor&) const = default;
};

// Versioned binary container of named tensors plus string metadata (run
// configuration, vocabulary, optimizer scalars). Doubles are stored as raw
// little-endian IEEE bits, so save/load round-trips bit-exactly.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::map<std::string, StoredTensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  bool has_meta(const std::string& key) const { return meta.contains(key); }
  const std::string& get_meta(const std::string& key) const;
  const StoredTensor& get_tensor(const std::string& name) const;

  // Stores values (and, when requested, Adam moments) of each tensor under
  // prefix + name.
  void put(const std::string& prefix, const ParamList& params, bool with_moments = false);
  void put(const std::string& prefix, const ParamTensor& p, bool with_moments = false);
  // Loads into already-shaped tensors; shapes must match.
  void get(const std::string& prefix, const ParamList& params, bool with_moments = false) const;
  void get(const std::string& prefix, ParamTensor& p, bool with_moments = false) const;

  void put_adam(const std::string& prefix, const AdamConfig& cfg);
  void get_adam(const std::string& prefix, AdamConfig& cfg) const;

  bool operator==(const Checkpoint&) const = default;
};

}  // namespace defmod
