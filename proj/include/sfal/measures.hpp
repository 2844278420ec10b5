#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfal/coupling.hpp"
#include "sfal/model.hpp"

namespace sfal {

struct MeasureMeta {
  std::string model_id;
  std::string kind;  // "evolution" or "invariant"
  Vec x;
  double t = 0.0;     // label time (0 for invariant measures)
  double span = 0.0;  // lookback (evolution) or burn-in (invariant)
  double dt = 0.0;
  std::uint64_t seed = 0;
};

// Equal-weight sample cloud in R^m; rows of `samples` are the points.
struct EmpiricalMeasure {
  Mat samples;
  MeasureMeta meta;

  int n() const { return static_cast<int>(samples.rows()); }
  int dim() const { return static_cast<int>(samples.cols()); }
  Vec mean() const { return samples.colwise().mean(); }
  // (1/N) sum_i |y_i|, the first-moment statistic.
  double mean_abs() const;
  // Column variance with the n-1 divisor (m = 1 convenience).
  double variance_1d() const;
};

struct W1Result {
  double value = 0.0;
  int n_used = 0;
  bool subsampled = false;  // true when clouds were reduced to a common size
};

// Exact W1 between two equal-weight clouds. Sizes are equalized by uniform
// subsampling without replacement (seeded); multi-dimensional clouds are
// further capped at the exact assignment solver's limit.
W1Result w1_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                     std::uint64_t seed);

// 20/beta: makes the e^{-beta*lookback} initialization bias negligible.
double default_lookback(const ModelSpec& model);
// 10/beta, the default burn-in for invariant-measure chains.
double default_burn_in(const ModelSpec& model);

// Cloud approximation of the evolution system of measures at time t: frozen
// paths started at y0 (default 0) from s = t - lookback. Negative start times
// are fine (symmetric extension).
EmpiricalMeasure evolution_measure(const ModelSpec& model, const Vec& x, double t,
                                   double lookback, double dt, int n_samples,
                                   std::uint64_t seed,
                                   const std::optional<Vec>& y0 = std::nullopt,
                                   std::size_t n_threads = 0);

// Cloud approximation of the invariant measure of dY = f_bar(x, Y) dt + dW.
// Independent chains run in parallel; each discards burn_in (rounded up to the
// step grid) and then retains samples_per_chain states spaced thin steps
// apart. The default samples_per_chain = 1 keeps retained samples independent.
EmpiricalMeasure invariant_measure(const ModelSpec& model, const Vec& x, double burn_in,
                                   int n_samples, int thin, double dt, std::uint64_t seed,
                                   int samples_per_chain = 1, std::size_t n_threads = 0);

// Named Lipschitz test function on R^m.
struct Phi {
  std::string name;
  std::function<double(const Vec&)> fn;
};

// tanh(y_j) along each axis plus min(|y|, 10); all Lipschitz-1.
std::vector<Phi> default_phi_set(int m);

struct PhiResidual {
  std::string name;
  double residual = 0.0;
  double se = 0.0;
};

struct EvolutionCheck {
  double s = 0.0;
  double t = 0.0;
  std::vector<PhiResidual> rows;
  bool passed(double n_se = 3.0) const;
};

// Two-parameter semigroup property of the evolution system: propagating the
// time-s cloud to time t must reproduce the time-t cloud in expectation, for
// each test function.
EvolutionCheck check_evolution_property(const ModelSpec& model, const Vec& x, double s,
                                        double t, double lookback, double dt,
                                        const std::vector<Phi>& phis, int n_samples,
                                        std::uint64_t seed, std::size_t n_threads = 0);

struct DecayCurve {
  std::vector<double> times;
  std::vector<double> values;
  double fitted_rate = 0.0;   // exponential rate over the above-floor window
  double noise_floor = 0.0;   // W1 of two independent same-law clouds
  std::size_t fit_points = 0;
};

// W1(delta_y P^x_{0,t}, mu^x_t) over t_grid, with a fitted decay rate and the
// MC noise floor measured from two independent target clouds.
DecayCurve ergodic_decay_curve(const ModelSpec& model, const Vec& x, const Vec& y,
                               const std::vector<double>& t_grid, double dt, int n_samples,
                               std::uint64_t seed, std::size_t n_threads = 0);

// W1 between the evolution-system cloud at t and the invariant cloud.
// burn_in <= 0 resolves to default_burn_in(model).
double mixed_system_distance(const ModelSpec& model, const Vec& x, double t,
                             double lookback, double dt, int n_samples,
                             std::uint64_t seed, double burn_in = 0.0,
                             std::size_t n_threads = 0);

// CSV export with header `sample_index,component,value` and a JSON metadata
// sidecar (model, kind, x, t, lookback, dt, seed, n).
std::string measure_to_csv(const EmpiricalMeasure& mu);
std::string measure_meta_json(const EmpiricalMeasure& mu);

}  // namespace sfal
