#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace fixmatch {

// Every random decision in a run is drawn from a stream addressed by
// (root_seed, purpose, epoch, index). Streams are derived statelessly from
// the key, so batch elements can be augmented in parallel, in any order, or
// skipped entirely without disturbing any other stream.
enum class StreamPurpose : std::uint64_t {
  kParamInit = 1,
  kWeakLabeled,
  kWeakUnlabeled,
  kStrongAug,
  kCtaProbe,
  kMixUp,
  kSamplerLabeled,
  kSamplerUnlabeled,
  kSplit,
  kGlyphs,
  kGradCheck,
  kScratch,
};

struct RngKey {
  std::uint64_t purpose = 0;
  std::uint64_t epoch = 0;
  std::uint64_t index = 0;

  RngKey() = default;
  RngKey(StreamPurpose p, std::uint64_t e, std::uint64_t i)
      : purpose(static_cast<std::uint64_t>(p)), epoch(e), index(i) {}
};

namespace detail {

// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

// Deterministic keyed stream: the full draw sequence is a pure function of
// (root_seed, key). Internally a splitmix64 generator seeded by folding the
// key fields through the finalizer.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, RngKey key) {
    std::uint64_t s = detail::mix64(root_seed + detail::kGolden);
    s = detail::mix64(s + key.purpose * detail::kGolden);
    s = detail::mix64(s + key.epoch * detail::kGolden);
    s = detail::mix64(s + key.index * detail::kGolden);
    state_ = s;
  }

  std::uint64_t next_u64() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // multiply-high mapping; bias is O(n / 2^64), invisible at our scales
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool next_bool() { return (next_u64() >> 63) != 0; }

  /// Standard normal via Box-Muller; the spare is cached within the stream.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0, 1], keeps log finite
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Marsaglia-Tsang gamma sampler, shape >= 1.
  double next_gamma(double shape) {
    if (shape < 1.0) throw std::invalid_argument("next_gamma: shape < 1");
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double x = next_normal();
      const double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      const double v = t * t * t;
      const double u = 1.0 - next_unit();  // (0, 1]
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  /// Beta(a, a) via two gammas; a >= 1.
  double next_beta_symmetric(double a) {
    const double g1 = next_gamma(a);
    const double g2 = next_gamma(a);
    return g1 / (g1 + g2);
  }

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fixmatch
