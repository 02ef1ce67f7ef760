#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "defmod/rng.hpp"

namespace test {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    defmod::Rng rng(defmod::fnv1a64(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() / ("defmod-" + tag + "-" + std::to_string(rng.next() % 1000000));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
