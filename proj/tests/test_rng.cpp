#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sfal/parallel.hpp"
#include "sfal/rng.hpp"

using namespace sfal;

TEST_CASE("counter rng is reproducible and order independent") {
  rng::CounterRng a(42, 7, rng::Channel::kSlowNoise);
  rng::CounterRng b(42, 7, rng::Channel::kSlowNoise);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 100; ++i) first.push_back(a.next_u64());
  // Interleave consumption of an unrelated stream; b must not care.
  rng::CounterRng other(42, 8, rng::Channel::kSlowNoise);
  for (int i = 0; i < 100; ++i) {
    other.next_u64();
    CHECK(b.next_u64() == first[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("streams for distinct (seed, path, channel) differ") {
  rng::CounterRng base(1, 0, rng::Channel::kFastNoise);
  rng::CounterRng other_path(1, 1, rng::Channel::kFastNoise);
  rng::CounterRng other_channel(1, 0, rng::Channel::kSlowNoise);
  rng::CounterRng other_seed(2, 0, rng::Channel::kFastNoise);
  const std::uint64_t v = base.next_u64();
  CHECK(v != other_path.next_u64());
  CHECK(v != other_channel.next_u64());
  CHECK(v != other_seed.next_u64());
}

TEST_CASE("unit draws live strictly inside (0,1)") {
  rng::CounterRng r(123, 0, rng::Channel::kSampler);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.next_unit();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gaussian stream has standard moments") {
  rng::GaussianStream g(2024, 0, rng::Channel::kFastNoise);
  const int n = 400000;
  double sum = 0.0, sum2 = 0.0, sum3 = 0.0, sum4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = g.next();
    sum += z;
    sum2 += z * z;
    sum3 += z * z * z;
    sum4 += z * z * z * z;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double skew = sum3 / n;
  const double kurt = sum4 / n;
  // 3-sigma Monte Carlo bands around N(0,1) moments.
  CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(skew) < 3.0 * std::sqrt(15.0 / n));
  CHECK(std::abs(kurt - 3.0) < 3.0 * std::sqrt(96.0 / n));
}

TEST_CASE("derive_seed separates stages") {
  CHECK(rng::derive_seed(5, 1) != rng::derive_seed(5, 2));
  CHECK(rng::derive_seed(5, 1) == rng::derive_seed(5, 1));
  CHECK(rng::derive_seed(5, 1) != rng::derive_seed(6, 1));
}

TEST_CASE("parallel_for fills slots identically for any worker count") {
  const std::size_t n = 1000;
  std::vector<double> one(n), four(n);
  auto job = [](std::size_t i) {
    rng::GaussianStream g(99, i, rng::Channel::kSlowNoise);
    double acc = 0.0;
    for (int k = 0; k < 50; ++k) acc += g.next();
    return acc;
  };
  parallel_for(n, [&](std::size_t i) { one[i] = job(i); }, 1);
  parallel_for(n, [&](std::size_t i) { four[i] = job(i); }, 4);
  CHECK(one == four);
}

TEST_CASE("parallel_for rethrows the failure with the smallest index") {
  bool threw = false;
  try {
    parallel_for(100, [&](std::size_t i) {
      if (i == 17 || i == 63) throw std::runtime_error("boom " + std::to_string(i));
    }, 8);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()) == "boom 17");
  }
  CHECK(threw);
}
