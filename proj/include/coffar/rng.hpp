#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace coffar {

/// xoshiro256** seeded through splitmix64. Every derived quantity
/// (uniform doubles, bounded integers, shuffles) is defined in terms of
/// next() alone so sequences are reproducible across implementations:
///
///   uniform01()      = (next() >> 11) * 2^-53
///   uniform_int(n)   = Lemire multiply-shift with rejection on the low word
///   shuffle(v)       = Fisher-Yates, i from n-1 down to 1, j = uniform_int(i+1)
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& s) {
    Rng r;
    r.s_ = s;
    return r;
  }

  std::uint64_t next() noexcept;
  double uniform01() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  template <typename T>
  void shuffle(std::span<T> v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

  const State& state() const noexcept { return s_; }

 private:
  State s_{};
};

std::uint64_t splitmix64(std::uint64_t& x) noexcept;

/// Independent per-consumer seed derived from a global seed and a tag
/// ("model", "pairs", "shuffle", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;

}  // namespace coffar
