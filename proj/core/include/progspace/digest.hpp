#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace progspace {

using Sha256 = std::array<std::uint8_t, 32>;
using Digest128 = std::array<std::uint8_t, 16>;

Sha256 sha256(std::span<const std::uint8_t> bytes);
Sha256 sha256(std::string_view text);
Sha256 sha256_file(const std::filesystem::path& path);

/// Incremental SHA-256 for data produced in pieces.
class Sha256Builder {
 public:
  Sha256Builder();
  ~Sha256Builder();
  Sha256Builder(const Sha256Builder&) = delete;
  Sha256Builder& operator=(const Sha256Builder&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  Sha256 finish();

 private:
  void* ctx_;
};

std::string to_hex(std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a. Stable across platforms; used to key per-program random streams.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace progspace
