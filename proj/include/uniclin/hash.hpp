#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace uniclin {

// 64-bit FNV-1a. Stable across platforms; used for config, catalog and weight
// fingerprints.
class Fnv1a {
 public:
  void update_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update_pod(static_cast<std::uint64_t>(s.size()));
    update_bytes(s.data(), s.size());
  }
  template <typename T>
  void update_pod(const T& v) {
    update_bytes(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.update_bytes(s.data(), s.size());
  return h.digest();
}

std::string hex64(std::uint64_t v);

}  // namespace uniclin
