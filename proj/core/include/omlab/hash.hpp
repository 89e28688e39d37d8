#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace omlab {

/// Incremental SHA-256 (OpenSSL backed) producing lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);

}  // namespace omlab
