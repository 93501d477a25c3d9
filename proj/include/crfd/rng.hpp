#pragma once

#include <cmath>
#include <cstdint>

namespace crfd {

// Counter-based deterministic RNG (splitmix64 core). Streams are derived by
// hashing, so any (seed, purpose, index) chain reproduces the same sequence
// on every platform; no global state anywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed + kGamma)) {}

  // Independent stream addressed by a tag; does not advance this stream.
  Rng derive(std::uint64_t tag) const {
    Rng r(0);
    r.state_ = mix(state_ ^ mix(tag + kGamma));
    return r;
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Shift into (0,1] so log() is safe.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream tags used to derive per-module randomness from the run seed.
namespace rng_tag {
constexpr std::uint64_t kDataset = 11;
constexpr std::uint64_t kTrain = 12;
constexpr std::uint64_t kInit = 13;
constexpr std::uint64_t kNoise = 14;
constexpr std::uint64_t kRaySampling = 15;
constexpr std::uint64_t kScene = 16;
constexpr std::uint64_t kLatent = 17;
}  // namespace rng_tag

}  // namespace crfd
