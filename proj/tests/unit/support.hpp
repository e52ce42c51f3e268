#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "progspace/universe.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("progspace-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Universe of all valid programs up to max_ops with default domain, built once per process.
inline const progspace::Universe& small_universe(int max_ops) {
  static std::map<int, progspace::Universe> cache;
  auto it = cache.find(max_ops);
  if (it == cache.end()) {
    progspace::UniverseBuildOptions opts;
    opts.max_ops = max_ops;
    it = cache.emplace(max_ops, progspace::build_universe(opts)).first;
  }
  return it->second;
}

}  // namespace testing
