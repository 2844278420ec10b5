#pragma once

#include <cmath>
#include <cstdint>

namespace sfal::rng {

// Counter-based generator: output(i) = mix(key + i*gamma). No sequential state
// beyond the counter, so streams can be created and consumed in any order and
// from any thread without affecting each other. The mixer is the 64-bit
// finalizer used by splitmix64 / murmur3.
inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 33;
  z *= 0xFF51AFD7ED558CCDull;
  z ^= z >> 33;
  z *= 0xC4CEB9FE1A85EC53ull;
  z ^= z >> 33;
  return z;
}

// Noise channels. Each (seed, path, channel) triple owns an independent stream.
enum class Channel : std::uint64_t {
  kSlowNoise = 1,        // W1 driving the slow equation
  kFastNoise = 2,        // W2 driving the fast equation (also frozen-dynamics noise)
  kCouplingPrimary = 3,  // coupling noise that gets reflected
  kCouplingShared = 4,   // coupling noise shared by both marginals
  kSampler = 5,          // auxiliary sampling (validation draws, subsampling)
};

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t path, Channel channel) {
  std::uint64_t h = mix64(seed + kGamma);
  h = mix64(h ^ (path * 0xC2B2AE3D27D4EB4Full));
  h = mix64(h ^ (static_cast<std::uint64_t>(channel) * 0x165667B19E3779F9ull));
  return h;
}

// Derives an independent seed for a named sub-stage of a computation, so that
// different stages of one run never share streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
  return mix64(seed ^ mix64(stage + kGamma));
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t path, Channel channel)
      : key_(stream_key(seed, path, channel)) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

  // Uniform on (0,1), never returning an endpoint.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Standard normal stream via Box-Muller on the counter generator. Avoids
// std::normal_distribution, whose output sequence is implementation-defined;
// bit-identical reproducibility across runs is part of the contract.
class GaussianStream {
 public:
  explicit GaussianStream(CounterRng rng) : rng_(rng) {}
  GaussianStream(std::uint64_t seed, std::uint64_t path, Channel channel)
      : rng_(seed, path, channel) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.next_unit();
    const double u2 = rng_.next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  CounterRng rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sfal::rng
