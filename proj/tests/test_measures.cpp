#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <json.hpp>

#include "sfal/errors.hpp"
#include "sfal/measures.hpp"
#include "sfal/stats.hpp"

using namespace sfal;

namespace {

Vec vec1(double v) {
  Vec out(1);
  out[0] = v;
  return out;
}

// Quadrature oracle for the double-well stationary density exp(y^2 - y^4/2):
// normalized p-th moment via Simpson on [-6, 6] (tails are below 1e-260).
double double_well_moment(int p) {
  const int n = 12000;
  const double a = -6.0, b = 6.0, h = (b - a) / n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : ((i % 2) ? 4.0 : 2.0);
    const double y = a + i * h;
    const double d = std::exp(y * y - 0.5 * y * y * y * y);
    den += w * d;
    num += w * std::pow(y, p) * d;
  }
  return num / den;
}

std::vector<double> column(const EmpiricalMeasure& mu) {
  std::vector<double> out(static_cast<std::size_t>(mu.n()));
  for (int i = 0; i < mu.n(); ++i) out[static_cast<std::size_t>(i)] = mu.samples(i, 0);
  return out;
}

std::vector<double> powers(const EmpiricalMeasure& mu, int p) {
  std::vector<double> out = column(mu);
  for (double& v : out) v = std::pow(v, p);
  return out;
}

}  // namespace

TEST_CASE("evolution_measure: ou-lin cloud mean approaches x/2") {
  ModelSpec spec = make_ou_lin();
  const double x = 2.0;
  EmpiricalMeasure mu = evolution_measure(spec, vec1(x), 20.0, 20.0, 0.02, 4000, 21);
  auto ms = stats::mean_stderr(column(mu));
  CHECK(std::abs(ms.mean - x / 2.0) <= 3.0 * ms.se);
  CHECK(mu.meta.kind == "evolution");
  CHECK(mu.n() == 4000);
}

TEST_CASE("evolution_measure: independent of y0 and saturated in lookback") {
  ModelSpec spec = make_ou_lin();
  const Vec x = vec1(1.0);
  const double dt = 0.02;
  const int n = 800;
  const double t = 0.0;
  const double look20 = default_lookback(spec);
  const double look10 = 0.5 * look20;

  EmpiricalMeasure short_look = evolution_measure(spec, x, t, look10, dt, n, 31);
  EmpiricalMeasure base = evolution_measure(spec, x, t, look20, dt, n, 32);
  EmpiricalMeasure twin = evolution_measure(spec, x, t, look20, dt, n, 33);
  EmpiricalMeasure far_start = evolution_measure(spec, x, t, look20, dt, n, 34, vec1(5.0));

  const double floor = w1_distance(base, twin, 35).value;
  CHECK(floor > 0.0);
  CHECK(w1_distance(base, far_start, 36).value <= 3.0 * floor);
  CHECK(w1_distance(base, short_look, 37).value <= 3.0 * floor);
}

TEST_CASE("invariant_measure: ou-lin stationary mean and variance") {
  ModelSpec spec = make_ou_lin();
  const double x = 2.0;
  const double dt = 0.01;
  EmpiricalMeasure mu = invariant_measure(spec, vec1(x), 20.0, 4000, 1, dt, 41);
  auto ms = stats::mean_stderr(column(mu));
  CHECK(std::abs(ms.mean - 1.0) <= 3.0 * ms.se);

  const double var = mu.variance_1d();
  const double se_var = var * std::sqrt(2.0 / (mu.n() - 1));
  // Euler bias for the unit-rate OU chain shifts the variance to 1/(2 - dt).
  const double dt_bias = 1.0 / (2.0 - dt) - 0.5;
  CHECK(std::abs(var - 0.5) <= 3.0 * se_var + dt_bias);
  CHECK(mu.meta.kind == "invariant");
}

TEST_CASE("invariant_measure: double-well matches the quadrature oracle") {
  ModelSpec spec = make_double_well();
  EmpiricalMeasure mu = invariant_measure(spec, vec1(0.0), 30.0, 4000, 1, 0.01, 43);

  const double m2_true = double_well_moment(2);
  const double m4_true = double_well_moment(4);
  CHECK(double_well_moment(1) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(double_well_moment(3) == doctest::Approx(0.0).epsilon(1e-10));

  auto m1 = stats::mean_stderr(powers(mu, 1));
  auto m2 = stats::mean_stderr(powers(mu, 2));
  auto m3 = stats::mean_stderr(powers(mu, 3));
  auto m4 = stats::mean_stderr(powers(mu, 4));
  CHECK(std::abs(m1.mean) <= 3.0 * m1.se);
  CHECK(std::abs(m3.mean) <= 3.0 * m3.se);
  // 3 MC stderr plus an O(dt) discretization allowance.
  CHECK(std::abs(m2.mean - m2_true) <= 3.0 * m2.se + 0.03 * m2_true);
  CHECK(std::abs(m4.mean - m4_true) <= 3.0 * m4.se + 0.05 * m4_true);

  // Symmetry: skewness consistent with zero.
  const double sd = std::sqrt(mu.variance_1d());
  const double skew = m3.mean / (sd * sd * sd);
  CHECK(std::abs(skew) <= 3.0 * std::sqrt(6.0 / mu.n()));
}

TEST_CASE("invariant_measure: Lipschitz in x and first-moment bound") {
  ModelSpec spec = make_ou_lin();
  const double dt = 0.01;
  const int n = 2000;
  EmpiricalMeasure mu0 = invariant_measure(spec, vec1(0.0), 20.0, n, 1, dt, 51);
  EmpiricalMeasure mu0b = invariant_measure(spec, vec1(0.0), 20.0, n, 1, dt, 52);
  EmpiricalMeasure mu2 = invariant_measure(spec, vec1(2.0), 20.0, n, 1, dt, 53);
  const double floor = w1_distance(mu0, mu0b, 54).value;

  // True map x -> N(x/2, 1/2), so W1 = |dx|/2; C = 1 dominates it.
  const double d02 = w1_distance(mu0, mu2, 55).value;
  CHECK(d02 <= 1.0 * 2.0 + 3.0 * floor);
  CHECK(d02 >= 0.5 * 2.0 - 3.0 * floor);

  for (double x : {-4.0, -1.0, 0.0, 2.0}) {
    EmpiricalMeasure mu = invariant_measure(spec, vec1(x), 20.0, n, 1, dt, 60 + static_cast<std::uint64_t>(x + 4));
    CHECK(mu.mean_abs() <= 1.0 * (1.0 + std::abs(x)));
  }
}

TEST_CASE("invariant_measure: thinned multi-sample chains agree with one-per-chain") {
  ModelSpec spec = make_ou_lin();
  EmpiricalMeasure a = invariant_measure(spec, vec1(1.0), 20.0, 3000, 50, 0.01, 71, 4);
  EmpiricalMeasure b = invariant_measure(spec, vec1(1.0), 20.0, 3000, 1, 0.01, 72, 1);
  auto ma = stats::mean_stderr(column(a));
  auto mb = stats::mean_stderr(column(b));
  // Thinned samples are weakly correlated, so widen the band a little.
  CHECK(std::abs(ma.mean - mb.mean) <= 4.0 * std::hypot(ma.se, mb.se));
  const double floor = w1_distance(b, invariant_measure(spec, vec1(1.0), 20.0, 3000, 1, 0.01, 73, 1), 74).value;
  CHECK(w1_distance(a, b, 75).value <= 4.0 * floor);
}

TEST_CASE("invariant_measure: requires f_bar") {
  ModelSpec spec = make_periodic_weak();
  spec.f_bar = nullptr;
  CHECK_THROWS_AS(invariant_measure(spec, vec1(0.0), 10.0, 10, 1, 0.01, 1), ConfigError);
}

TEST_CASE("check_evolution_property: residuals within noise") {
  ModelSpec spec = make_ou_lin();
  const Vec x = vec1(1.0);
  auto phis = default_phi_set(1);

  EvolutionCheck same = check_evolution_property(spec, x, 2.0, 2.0, 20.0, 0.02, phis, 2000, 81);
  CHECK(same.passed(3.0));

  EvolutionCheck step = check_evolution_property(spec, x, 2.0, 3.0, 20.0, 0.02, phis, 4000, 82);
  CHECK(step.rows.size() == phis.size());
  CHECK(step.passed(3.0));

  std::vector<Phi> constant{{"const", [](const Vec&) { return 1.0; }}};
  EvolutionCheck c = check_evolution_property(spec, x, 2.0, 3.0, 20.0, 0.02, constant, 500, 83);
  CHECK(c.rows[0].residual == 0.0);
}

TEST_CASE("ergodic_decay_curve: rate, start value, and noise plateau") {
  ModelSpec spec = make_ou_lin();
  const Vec x = vec1(1.0);
  const Vec y = vec1(4.0);
  std::vector<double> grid{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 6.0, 10.0};
  DecayCurve curve = ergodic_decay_curve(spec, x, y, grid, 0.02, 500, 91);

  REQUIRE(curve.values.size() == grid.size());
  // t=0: point mass against the stationary-phase cloud, roughly |y - x/2|.
  CHECK(curve.values[0] > 2.5);
  CHECK(curve.values[0] < 4.5);
  CHECK(curve.noise_floor > 0.0);
  CHECK(curve.fit_points >= 3);
  CHECK(curve.fitted_rate >= 0.5 * theoretical_beta(spec.dissipativity).beta);
  // Large-t plateau sits at the noise floor, not at a positive bias.
  CHECK(curve.values.back() <= 4.0 * curve.noise_floor);
}

TEST_CASE("mixed_system_distance: homogeneous model sits at the noise floor") {
  ModelSpec spec = make_ou_lin();
  AveragedDriftFn f_bar = spec.f_bar;
  spec.f = [f_bar](double, const Vec& x, const Vec& y, Vec& o) { f_bar(x, y, o); };

  const Vec x = vec1(1.0);
  const int n = 3000;
  EmpiricalMeasure a = invariant_measure(spec, x, 20.0, n, 1, 0.01, 101);
  EmpiricalMeasure b = invariant_measure(spec, x, 20.0, n, 1, 0.01, 102);
  const double floor = w1_distance(a, b, 103).value;
  const double d = mixed_system_distance(spec, x, 2.0, 20.0, 0.01, n, 104, 20.0);
  CHECK(d <= 3.0 * floor);
}

TEST_CASE("mixed_system_distance: ou-lin decays strictly in t") {
  ModelSpec spec = make_ou_lin();
  const Vec x = vec1(1.0);
  const int n = 6000;
  const double dt = 0.01;
  EmpiricalMeasure a = invariant_measure(spec, x, 30.0, n, 1, dt, 111);
  EmpiricalMeasure b = invariant_measure(spec, x, 30.0, n, 1, dt, 112);
  const double floor = w1_distance(a, b, 113).value;

  const double d1 = mixed_system_distance(spec, x, 1.0, 30.0, dt, n, 114, 30.0);
  const double d10 = mixed_system_distance(spec, x, 10.0, 30.0, dt, n, 115, 30.0);
  CHECK(d1 > d10 + 3.0 * floor);

  // Domination by the inhomogeneity envelope e^{-bt} + int e^{-b(t-u)} e^{-u} du,
  // with the constant calibrated at t=1.
  const double beta = theoretical_beta(spec.dissipativity).beta;
  auto shape = [beta](double t) {
    return std::exp(-beta * t) + (std::exp(-beta * t) - std::exp(-t)) / (1.0 - beta);
  };
  const double c_cal = d1 / shape(1.0);
  const double d4 = mixed_system_distance(spec, x, 4.0, 30.0, dt, n, 116, 30.0);
  CHECK(d4 <= c_cal * shape(4.0) + 3.0 * floor);
  CHECK(d10 <= c_cal * shape(10.0) + 3.0 * floor);
}

TEST_CASE("w1_distance: subsampling and guards") {
  EmpiricalMeasure a, b;
  a.samples.resize(5, 1);
  a.samples << 0, 1, 2, 3, 4;
  b.samples.resize(3, 1);
  b.samples << 0, 1, 2;
  W1Result r1 = w1_distance(a, b, 7);
  W1Result r2 = w1_distance(a, b, 7);
  CHECK(r1.value == r2.value);
  CHECK(r1.n_used == 3);
  CHECK(r1.subsampled);

  W1Result same = w1_distance(a, a, 9);
  CHECK(same.value == 0.0);
  CHECK(!same.subsampled);

  EmpiricalMeasure c;
  c.samples.resize(3, 2);
  c.samples.setZero();
  CHECK_THROWS_AS(w1_distance(a, c, 1), ConfigError);
}

TEST_CASE("measure export: CSV schema and JSON sidecar") {
  EmpiricalMeasure mu;
  mu.samples.resize(2, 1);
  mu.samples << 0.5, -1.25;
  mu.meta = {"ou-lin", "evolution", vec1(1.0), 3.0, 20.0, 0.02, 77};

  const std::string csv = measure_to_csv(mu);
  CHECK(csv == "sample_index,component,value\n0,y0,0.5\n1,y0,-1.25\n");

  auto j = nlohmann::json::parse(measure_meta_json(mu));
  CHECK((j["model"] == "ou-lin"));
  CHECK((j["kind"] == "evolution"));
  CHECK((j["t"] == 3.0));
  CHECK((j["lookback"] == 20.0));
  CHECK((j["seed"] == 77));
  CHECK((j["n"] == 2));
  CHECK((j["x"][0] == 1.0));
}
