#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sfal/errors.hpp"
#include "sfal/rng.hpp"
#include "sfal/wasserstein.hpp"

using namespace sfal;

namespace {

// Brute-force optimal matching over all permutations; exact oracle for tiny N.
double w1_bruteforce(const Mat& a, const Mat& b) {
  const int n = static_cast<int>(a.rows());
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += (a.row(i) - b.row(perm[static_cast<std::size_t>(i)])).norm();
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

Mat random_cloud(int n, int dim, std::uint64_t seed) {
  rng::GaussianStream g(seed, 0, rng::Channel::kSampler);
  Mat out(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) out(i, j) = g.next();
  return out;
}

std::vector<double> column(const Mat& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (int i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, 0);
  return out;
}

}  // namespace

TEST_CASE("w1_exact_1d: pinned examples") {
  CHECK(w1_exact_1d({0.0, 1.0}, {1.0, 2.0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w1_exact_1d({0.0, 0.0}, {-1.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w1_exact_1d({3.0, 1.0, 2.0}, {2.0, 3.0, 1.0}) == 0.0);
}

TEST_CASE("w1_exact_1d: metric properties on random clouds") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    auto a = column(random_cloud(64, 1, 100 + trial));
    auto b = column(random_cloud(64, 1, 200 + trial));
    auto c = column(random_cloud(64, 1, 300 + trial));
    const double ab = w1_exact_1d(a, b);
    const double ba = w1_exact_1d(b, a);
    const double ac = w1_exact_1d(a, c);
    const double cb = w1_exact_1d(c, b);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
    CHECK(ab <= ac + cb + 1e-12);
    CHECK(w1_exact_1d(a, a) == 0.0);
  }
}

TEST_CASE("w1_exact_1d: translation moves the distance by the shift") {
  auto a = column(random_cloud(128, 1, 7));
  std::vector<double> shifted = a;
  for (double& v : shifted) v += 2.5;
  CHECK(w1_exact_1d(a, shifted) == doctest::Approx(2.5).epsilon(1e-13));
}

TEST_CASE("assignment_cost: explicit matrices") {
  Mat cost(2, 2);
  cost << 1.0, 2.0, 3.0, 4.0;
  CHECK(assignment_cost(cost) == doctest::Approx(5.0).epsilon(1e-15));
  Mat cost3(3, 3);
  cost3 << 4.0, 1.0, 3.0,
           2.0, 0.0, 5.0,
           3.0, 2.0, 2.0;
  CHECK(assignment_cost(cost3) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("w1_exact_assignment agrees with the 1-D solver") {
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    Mat a = random_cloud(128, 1, 1000 + trial);
    Mat b = random_cloud(128, 1, 2000 + trial);
    const double sorted = w1_exact_1d(column(a), column(b));
    const double assigned = w1_exact_assignment(a, b);
    CHECK(std::abs(sorted - assigned) <= 1e-9);
  }
}

TEST_CASE("w1_exact_assignment matches brute force at N=3") {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    Mat a = random_cloud(3, 2, 5000 + trial);
    Mat b = random_cloud(3, 2, 6000 + trial);
    CHECK(w1_exact_assignment(a, b) ==
          doctest::Approx(w1_bruteforce(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("w1_exact_assignment matches brute force at N=5 in 3-D") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Mat a = random_cloud(5, 3, 7000 + trial);
    Mat b = random_cloud(5, 3, 8000 + trial);
    CHECK(w1_exact_assignment(a, b) ==
          doctest::Approx(w1_bruteforce(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("w1_exact_assignment refuses oversized clouds with guidance") {
  Mat a = Mat::Zero(513, 1), b = Mat::Zero(513, 1);
  bool threw = false;
  try {
    w1_exact_assignment(a, b);
  } catch (const ConfigError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("subsample") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("size and emptiness guards") {
  CHECK_THROWS_AS(w1_exact_1d({}, {}), ConfigError);
  CHECK_THROWS_AS(w1_exact_1d({1.0}, {1.0, 2.0}), ConfigError);
  Mat a = Mat::Zero(4, 2), b = Mat::Zero(4, 3);
  CHECK_THROWS_AS(w1_exact_assignment(a, b), ConfigError);
}
