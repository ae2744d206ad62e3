#pragma once

// Counter-based random streams. Every draw is a pure function of
// (root seed, stream tag, replica index, draw index), so results do not
// depend on thread count or on the order in which replicas are processed.

#include <cstdint>
#include <span>
#include <string_view>

namespace mvldp::rng {

inline constexpr std::string_view kPolicyVersion = "mvldp-rng-v1 (splitmix64 counters, ziggurat-128 normals)";

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_tag(std::string_view tag) noexcept;

struct StreamKey {
  std::uint64_t value = 0;
};

/// Key of the stream owned by `replica` within the module stream `tag`.
StreamKey derive(std::uint64_t root_seed, std::string_view tag, std::uint64_t replica) noexcept;

/// Child key, e.g. one per Picard iteration or per batch.
StreamKey child(StreamKey parent, std::uint64_t index) noexcept;

inline std::uint64_t bits(StreamKey key, std::uint64_t counter) noexcept {
  return mix64(key.value + (counter + 1) * kGolden);
}

/// Uniform on the open interval (0, 1).
inline double to_open_unit(std::uint64_t b) noexcept {
  return (static_cast<double>(b >> 12) + 0.5) * 0x1p-52;
}

inline double uniform(StreamKey key, std::uint64_t counter) noexcept {
  return to_open_unit(bits(key, counter));
}

/// Standard normal number `index` of the stream.
double normal(StreamKey key, std::uint64_t index) noexcept;

/// out[i] = normal(key, first + i).
void fill_normals(StreamKey key, std::uint64_t first, std::span<double> out) noexcept;

/// Sequential convenience wrapper over a key.
class Stream {
 public:
  explicit Stream(StreamKey key) : key_(key) {}
  double next_uniform() noexcept { return uniform(key_, counter_++); }
  double next_normal() noexcept { return normal(key_, counter_++); }
  std::uint64_t next_bits() noexcept { return bits(key_, counter_++); }
  StreamKey key() const noexcept { return key_; }

 private:
  StreamKey key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mvldp::rng
