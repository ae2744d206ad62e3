#include "mvldp/rng.hpp"

#include <array>
#include <cmath>

namespace mvldp::rng {

namespace {

// Doornik's ZIGNOR layout: 128 blocks of equal area.
constexpr int kBlocks = 128;
constexpr double kTailStart = 3.442619855899;
constexpr double kBlockArea = 9.91256303526217e-3;

struct ZigguratTables {
  std::array<double, kBlocks + 1> x{};
  std::array<double, kBlocks> ratio{};

  ZigguratTables() {
    double f = std::exp(-0.5 * kTailStart * kTailStart);
    x[0] = kBlockArea / f;
    x[1] = kTailStart;
    x[kBlocks] = 0.0;
    for (int i = 2; i < kBlocks; ++i) {
      x[i] = std::sqrt(-2.0 * std::log(kBlockArea / x[i - 1] + f));
      f = std::exp(-0.5 * x[i] * x[i]);
    }
    for (int i = 0; i < kBlocks; ++i) ratio[i] = x[i + 1] / x[i];
  }
};

const ZigguratTables& tables() {
  static const ZigguratTables t;
  return t;
}

double slow_path(std::uint64_t first_word) noexcept {
  const auto& z = tables();
  const StreamKey sub{mix64(first_word ^ 0xD1B54A32D192ED03ULL)};
  std::uint64_t counter = 0;
  std::uint64_t w = first_word;
  for (;;) {
    const int i = static_cast<int>(w & (kBlocks - 1));
    const double u = 2.0 * to_open_unit(w) - 1.0;
    if (std::fabs(u) < z.ratio[i]) return u * z.x[i];
    if (i == 0) {
      double xt = 0.0;
      double yt = 0.0;
      do {
        xt = std::log(uniform(sub, counter++)) / kTailStart;
        yt = std::log(uniform(sub, counter++));
      } while (-2.0 * yt < xt * xt);
      return u < 0.0 ? xt - kTailStart : kTailStart - xt;
    }
    const double xs = u * z.x[i];
    const double f0 = std::exp(-0.5 * (z.x[i] * z.x[i] - xs * xs));
    const double f1 = std::exp(-0.5 * (z.x[i + 1] * z.x[i + 1] - xs * xs));
    if (f1 + uniform(sub, counter++) * (f0 - f1) < 1.0) return xs;
    w = bits(sub, counter++);
  }
}

}  // namespace

std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

StreamKey derive(std::uint64_t root_seed, std::string_view tag, std::uint64_t replica) noexcept {
  const std::uint64_t a = mix64(root_seed ^ 0x6A09E667F3BCC909ULL);
  const std::uint64_t b = mix64(a ^ hash_tag(tag));
  return StreamKey{mix64(b + (replica + 1) * 0xBB67AE8584CAA73BULL)};
}

StreamKey child(StreamKey parent, std::uint64_t index) noexcept {
  return StreamKey{mix64(parent.value ^ mix64((index + 1) * 0x3C6EF372FE94F82BULL))};
}

double normal(StreamKey key, std::uint64_t index) noexcept {
  const auto& z = tables();
  const std::uint64_t w = bits(key, index);
  const int i = static_cast<int>(w & (kBlocks - 1));
  const double u = 2.0 * to_open_unit(w) - 1.0;
  if (std::fabs(u) < z.ratio[i]) return u * z.x[i];
  return slow_path(w);
}

void fill_normals(StreamKey key, std::uint64_t first, std::span<double> out) noexcept {
  const auto& z = tables();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::uint64_t w = bits(key, first + k);
    const int i = static_cast<int>(w & (kBlocks - 1));
    const double u = 2.0 * to_open_unit(w) - 1.0;
    out[k] = std::fabs(u) < z.ratio[i] ? u * z.x[i] : slow_path(w);
  }
}

}  // namespace mvldp::rng
