#include "mrsv/common.hpp"

#include <cstdio>
#include <cstring>

namespace mrsv {

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(std::span<const double> values, std::uint64_t seed) {
  const auto bytes = std::as_bytes(values);
  return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}, seed);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t z = root ^ fnv1a64({reinterpret_cast<const unsigned char*>(tag.data()), tag.size()});
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace mrsv
