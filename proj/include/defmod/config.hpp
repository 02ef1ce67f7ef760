#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace defmod {

// Flat key/value run configuration. The text form is one "key = value" per
// line, '#' starts a comment line, keys are written in sorted order.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.contains(key); }
  void erase(const std::string& key) { values_.erase(key); }

  // Missing keys and unparsable values throw Error(Usage) naming the key.
  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Values from `other` replace ours.
  void merge(const RunConfig& other);

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string serialize() const;
  static RunConfig parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static RunConfig load(const std::filesystem::path& path);

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace defmod
