#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "sfal/errors.hpp"
#include "sfal/khasminskii.hpp"
#include "sfal/model.hpp"
#include "sfal/sde.hpp"

using namespace sfal;

namespace {

PathEnsemble recorded_run(const ModelSpec& model, double eps, double T, double dt,
                          int n_paths, std::uint64_t seed) {
  SimulateOptions opt;
  opt.record_increments = true;
  return simulate_slow_fast(model, eps, T, dt, n_paths, seed, opt);
}

ModelSpec x_free_fast() {
  ModelSpec spec = make_ou_lin();
  spec.id = "x-free";
  spec.f = [](double, const Vec&, const Vec& y, Vec& out) { out[0] = -y[0]; };
  spec.f_bar = [](const Vec&, const Vec& y, Vec& out) { out[0] = -y[0]; };
  return spec;
}

}  // namespace

TEST_CASE("BlockSchedule: floor map and validation") {
  const BlockSchedule sched{0.25, 1.0};
  CHECK(sched.block_index(0.0) == 0);
  CHECK(sched.block_index(0.3) == 1);
  CHECK(sched.block_index(0.5) == 2);
  CHECK(sched.block_index(0.999) == 3);
  CHECK(sched.floor_time(0.3) == doctest::Approx(0.25).epsilon(1e-15));
  for (double s = 0.0; s < 1.0; s += 0.07) {
    const double fl = sched.floor_time(s);
    CHECK(fl <= s + 1e-9);
    CHECK(s < fl + sched.delta);
  }
  const BlockSchedule degenerate{0.0, 1.0};
  const BlockSchedule oversized{2.0, 1.0};
  CHECK_THROWS_AS(degenerate.validate(), ConfigError);
  CHECK_THROWS_AS(oversized.validate(), ConfigError);
}

TEST_CASE("default_schedule: eps^(2/3) snapped to the step grid") {
  const BlockSchedule sched = default_schedule(0.01, 1.0, 2e-4);
  CHECK(sched.T == 1.0);
  CHECK(sched.delta == doctest::Approx(232 * 2e-4).epsilon(1e-15));
  CHECK(std::abs(sched.delta - std::pow(0.01, 2.0 / 3.0)) <= 1e-4 + 1e-12);
  // Clamped to the horizon when eps is large and to one step when tiny.
  CHECK(default_schedule(100.0, 1.0, 0.01).delta == doctest::Approx(1.0));
  CHECK(default_schedule(1e-12, 1.0, 0.01).delta == doctest::Approx(0.01));
}

TEST_CASE("auxiliary_path: x-independent fast drift reproduces the true path exactly") {
  const ModelSpec spec = x_free_fast();
  const PathEnsemble run = recorded_run(spec, 0.5, 0.2, 0.01, 3, 91);
  const AuxiliaryEnsemble aux = auxiliary_path(spec, 0.5, {0.05, 0.2}, run);
  for (int p = 0; p < 3; ++p)
    for (std::size_t ti = 0; ti < run.times.size(); ++ti)
      CHECK(aux.y_at(p, ti, 0) == run.fast_at(p, ti, 0));
}

TEST_CASE("auxiliary_path: one-step blocks restart every step, so the gap is zero") {
  const ModelSpec spec = make_ou_lin();
  const PathEnsemble run = recorded_run(spec, 0.5, 0.2, 0.01, 2, 12);
  const AuxiliaryEnsemble aux = auxiliary_path(spec, 0.5, {0.01, 0.2}, run);
  for (int p = 0; p < 2; ++p)
    for (std::size_t ti = 0; ti < run.times.size(); ++ti)
      CHECK(aux.y_at(p, ti, 0) == run.fast_at(p, ti, 0));
}

TEST_CASE("auxiliary_path: block-start identity with divergence inside blocks") {
  const ModelSpec spec = make_ou_lin();
  const PathEnsemble run = recorded_run(spec, 0.5, 0.3, 0.01, 2, 7);
  const AuxiliaryEnsemble aux = auxiliary_path(spec, 0.5, {0.05, 0.3}, run);
  double interior_gap = 0.0;
  for (int p = 0; p < 2; ++p) {
    for (std::size_t ti = 0; ti < run.times.size(); ++ti) {
      const double gap = std::abs(aux.y_at(p, ti, 0) - run.fast_at(p, ti, 0));
      if (ti % 5 == 0)
        CHECK(gap == 0.0);
      else
        interior_gap += gap;
    }
  }
  // The slow state moves inside a block, so the frozen drift must differ.
  CHECK(interior_gap > 0.0);
}

TEST_CASE("auxiliary_path: stored increments account for every state change") {
  const ModelSpec spec = make_ou_lin();
  const double eps = 0.5, dt = 0.01;
  const PathEnsemble run = recorded_run(spec, eps, 0.3, dt, 2, 44);
  const AuxiliaryEnsemble aux = auxiliary_path(spec, eps, {0.05, 0.3}, run);
  const double inv_sqrt_eps = 1.0 / std::sqrt(eps);
  Vec x(1), y(1), f(1);
  for (int p = 0; p < 2; ++p) {
    for (int k = 0; k + 1 < static_cast<int>(run.times.size()); ++k) {
      if ((k + 1) % 5 == 0) continue;  // next state is a block restart
      x[0] = run.slow_at(p, (k / 5) * 5, 0);
      y[0] = aux.y_at(p, k, 0);
      spec.f(k * dt / eps, x, y, f);
      const double drift = aux.y_at(p, k + 1, 0) - aux.y_at(p, k, 0) -
                           inv_sqrt_eps * run.w2_at(p, k, 0);
      CHECK(std::abs(drift - (dt / eps) * f[0]) <= 1e-12);
    }
  }
}

TEST_CASE("khasminskii sweep: sup gap and functional both shrink with delta") {
  const ModelSpec spec = make_ou_lin();
  const double eps = 0.01, dt = 2e-4, T = 1.0;
  const PathEnsemble run = recorded_run(spec, eps, T, dt, 400, 2718);
  const TestIntegrand F = integrand_by_name("b0", spec);
  const WeightVariable Z = weight_by_name("one");

  SupGap sup[3];
  GapEstimate gap[3];
  const double deltas[3] = {0.2, 0.1, 0.05};
  for (int i = 0; i < 3; ++i) {
    const BlockSchedule sched{deltas[i], T};
    sup[i] = mean_sup_gap(run, auxiliary_path(spec, eps, sched, run));
    gap[i] = gap_functional(spec, eps, sched, run, F, 0.0, T, Z);
  }
  CHECK(sup[0].mean - sup[1].mean > 2.0 * (sup[0].se + sup[1].se));
  CHECK(sup[1].mean - sup[2].mean > 2.0 * (sup[1].se + sup[2].se));

  // Halving delta twice must shrink the functional by at least 1.6; the
  // sqrt(delta) bound alone predicts a factor of 2.
  CHECK(gap[0].value > 5.0 * gap[0].se);
  CHECK(gap[2].value > 0.0);
  CHECK(gap[0].value / gap[2].value >= 1.6);
  // Z = 1 makes the comparison scale sqrt(delta) exactly.
  CHECK(gap[0].scale == doctest::Approx(std::sqrt(0.2)).epsilon(1e-12));
  CHECK(gap[0].value < gap[0].scale);
}

TEST_CASE("gap_functional: exact zeros") {
  const ModelSpec spec = make_ou_lin();
  const PathEnsemble run = recorded_run(spec, 0.5, 0.2, 0.01, 4, 5);
  const BlockSchedule sched{0.05, 0.2};

  const GapEstimate no_y =
      gap_functional(spec, 0.5, sched, run, integrand_by_name("tanh_x0", spec), 0.0, 0.2,
                     weight_by_name("one"));
  CHECK(no_y.value == 0.0);
  CHECK(no_y.se == 0.0);

  const GapEstimate no_z =
      gap_functional(spec, 0.5, sched, run, integrand_by_name("b0", spec), 0.0, 0.2,
                     weight_by_name("zero"));
  CHECK(no_z.value == 0.0);
  CHECK(no_z.se == 0.0);
  CHECK(no_z.scale == 0.0);

  const GapEstimate one_step =
      gap_functional(spec, 0.5, {0.01, 0.2}, run, integrand_by_name("b0", spec), 0.0, 0.2,
                     weight_by_name("one"));
  CHECK(one_step.value == 0.0);
}

TEST_CASE("khasminskii: registry names and rejection paths") {
  const ModelSpec spec = make_ou_lin();
  CHECK(integrand_by_name("tanh_y0", spec).fn(0.0, Vec::Zero(1), Vec::Ones(1)) ==
        doctest::Approx(std::tanh(1.0)));
  CHECK(integrand_by_name("clip_y", spec).fn(0.0, Vec::Zero(1), 20.0 * Vec::Ones(1)) == 10.0);
  CHECK(weight_by_name("clip_x").fn(3.0 * Vec::Ones(1)) == doctest::Approx(3.0));
  CHECK_THROWS_AS(integrand_by_name("nope", spec), ConfigError);
  CHECK_THROWS_AS(weight_by_name("nope"), ConfigError);

  const PathEnsemble run = recorded_run(spec, 0.5, 0.2, 0.01, 2, 9);
  // Misaligned delta, wrong horizon, missing increments, bad time anchors.
  CHECK_THROWS_AS((auxiliary_path(spec, 0.5, {0.025, 0.2}, run)), ConfigError);
  CHECK_THROWS_AS((auxiliary_path(spec, 0.5, {0.05, 0.5}, run)), ConfigError);
  const PathEnsemble bare = simulate_slow_fast(spec, 0.5, 0.2, 0.01, 2, 9);
  CHECK_THROWS_AS((auxiliary_path(spec, 0.5, {0.05, 0.2}, bare)), ConfigError);
  SimulateOptions thin;
  thin.record_increments = false;
  thin.store_every = 2;
  const PathEnsemble coarse = simulate_slow_fast(spec, 0.5, 0.2, 0.01, 2, 9, thin);
  CHECK_THROWS_AS((auxiliary_path(spec, 0.5, {0.05, 0.2}, coarse)), ConfigError);

  const TestIntegrand F = integrand_by_name("b0", spec);
  const WeightVariable Z = weight_by_name("one");
  CHECK_THROWS_AS((gap_functional(spec, 0.5, {0.05, 0.2}, run, F, 0.1, 0.1, Z)), ConfigError);
  CHECK_THROWS_AS((gap_functional(spec, 0.5, {0.05, 0.2}, run, F, 0.0, 0.3, Z)), ConfigError);
  CHECK_THROWS_AS((gap_functional(spec, 0.5, {0.05, 0.2}, run, F, 0.013, 0.2, Z)), ConfigError);
}

TEST_CASE("khasminskii_to_csv: schema and zero gap at the start") {
  const ModelSpec spec = make_ou_lin();
  const PathEnsemble run = recorded_run(spec, 0.5, 0.04, 0.01, 2, 3);
  const AuxiliaryEnsemble aux = auxiliary_path(spec, 0.5, {0.02, 0.04}, run);
  const std::string csv = khasminskii_to_csv(run, aux);
  CHECK(csv.rfind("path,time,y_true,y_aux,gap\n0,0,0.5,0.5,0\n", 0) == 0);

  AuxiliaryEnsemble truncated = aux;
  truncated.times.pop_back();
  CHECK_THROWS_AS(khasminskii_to_csv(run, truncated), ConfigError);
}
