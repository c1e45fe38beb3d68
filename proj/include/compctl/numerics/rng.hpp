#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace compctl {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream.
///
/// The stream key is `mix64(mix64(master) ^ fnv1a64(label))`; draw `i` (0-based)
/// is `mix64(key + (i + 1) * 0x9E3779B97F4A7C15)`, i.e. the SplitMix64 sequence
/// seeded with the key. Everything above the 64-bit draws (uniform reals,
/// bounded integers, normals) is defined here rather than borrowed from
/// `<random>` distributions, whose outputs differ between standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view label)
      : master_(master_seed),
        key_(detail::mix64(detail::mix64(master_seed) ^ detail::fnv1a64(label))) {}

  /// Child stream; the result depends only on this stream's key and `label`.
  [[nodiscard]] RngStream split(std::string_view label) const {
    return RngStream(key_, label);
  }

  [[nodiscard]] std::uint64_t master_seed() const noexcept { return master_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) by rejection sampling (no modulo bias).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Uniform integer in the closed range [lo, hi].
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    return lo + static_cast<int>(uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// Standard normal draw by Box-Muller (two uniforms per draw, no caching).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t master_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by an RngStream.
template <class Container>
void shuffle(Container& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace compctl
