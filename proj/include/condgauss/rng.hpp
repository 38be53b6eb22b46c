#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace condgauss {

/// Stream purposes; mixed into every derived key so that different consumers
/// of the same (epoch, batch, index) never share draws.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kHiddenSample = 3,
  kEstimator = 4,
  kDropout = 5,
  kFullSample = 6,
  kCertify = 7,
  kData = 8,
  kSplit = 9,
  kDiagnostic = 10,
  kEval = 11,
};

/// Deterministic splittable random stream.
///
/// The state is a SplitMix64 counter; deriving a child stream hashes the parent
/// state together with the supplied key words, so a stream is fully identified by
/// (seed, key path) and creating one is O(1). Draws are reproducible for a given
/// standard library (normal variates come from std::normal_distribution).
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  /// Child stream keyed by the given words; the parent is not advanced.
  [[nodiscard]] RngStream derive(std::initializer_list<std::uint64_t> key) const {
    std::uint64_t h = state_;
    for (std::uint64_t k : key) h = mix(h ^ mix(k + 0x9e3779b97f4a7c15ULL));
    return RngStream(Raw{}, h);
  }

  [[nodiscard]] RngStream derive(StreamTag tag, std::initializer_list<std::uint64_t> key = {}) const {
    RngStream s = derive({static_cast<std::uint64_t>(tag)});
    return key.size() == 0 ? s : s.derive(key);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(*this); }

 private:
  struct Raw {};
  RngStream(Raw, std::uint64_t state) : state_(state) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  std::normal_distribution<double> normal_;
};

}  // namespace condgauss
