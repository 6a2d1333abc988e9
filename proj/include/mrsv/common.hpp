#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mrsv {

constexpr int kSampleRate = 16000;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by config/geometry validation before any compute starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t checksum(std::span<const double> values,
                       std::uint64_t seed = 0xcbf29ce484222325ULL);

// Child seed for one named consumer of the root seed.  Every module draws
// from its own stream so enabling one branch never perturbs another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

std::string hex64(std::uint64_t v);

}  // namespace mrsv
