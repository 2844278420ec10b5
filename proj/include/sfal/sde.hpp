#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfal/model.hpp"

namespace sfal {

// Ensemble of slow-fast trajectories on a shared output grid. States are laid
// out [path][time][component]; the grid holds every store_every-th
// integration step, endpoints included.
struct PathEnsemble {
  std::vector<double> times;
  int n_paths = 0;
  int n = 0;
  int m = 0;
  double epsilon = 1.0;
  double dt = 0.0;
  int store_every = 1;
  std::uint64_t seed = 0;
  std::string model_id;

  std::vector<double> slow;  // n_paths * times.size() * n
  std::vector<double> fast;  // n_paths * times.size() * m

  // Fast-noise increments dW2 per integration step, recorded only on request
  // (needed by the block-frozen auxiliary construction). Layout
  // [path][step][component], step count = round(T/dt).
  std::vector<double> w2_increments;
  int n_steps = 0;

  std::size_t n_times() const { return times.size(); }
  bool has_increments() const { return !w2_increments.empty(); }

  double slow_at(int path, std::size_t ti, int comp) const {
    return slow[(static_cast<std::size_t>(path) * times.size() + ti) * n + comp];
  }
  double fast_at(int path, std::size_t ti, int comp) const {
    return fast[(static_cast<std::size_t>(path) * times.size() + ti) * m + comp];
  }
  double w2_at(int path, int step, int comp) const {
    return w2_increments[(static_cast<std::size_t>(path) * n_steps + step) * m + comp];
  }
};

struct SimulateOptions {
  int store_every = 1;             // keep every k-th step (endpoints always kept)
  bool record_increments = false;  // retain dW2 per step (implies store_every == 1)
  std::size_t n_threads = 0;       // 0 = resolve from SFAL_THREADS / hardware
  std::optional<Vec> x0;           // override model defaults
  std::optional<Vec> y0;
};

// Hard floor on the scale separation so t/eps stays well inside double range.
inline constexpr double kMinEpsilon = 9.5367431640625e-07;  // 2^-20
// Fast-scale resolution rule: dt <= epsilon * kDtFastCap.
inline constexpr double kDtFastCap = 1.0 / 50.0;

// One explicit Euler step of the two-scale system, coefficients at the left
// endpoint:
//   x' = x + b(t/eps, x, y) dt + sigma(t/eps, x, y) dW1
//   y' = y + (1/eps) f(t/eps, x, y) dt + (1/sqrt(eps)) dW2
void em_step(const ModelSpec& model, double t, const Vec& x, const Vec& y, double eps,
             double dt, const Vec& dW1, const Vec& dW2, Vec& x_out, Vec& y_out);

// Integrates n_paths independent copies from the model initial condition.
// Noise streams are keyed by (seed, path, channel), so the result is
// bit-identical for any worker count and execution order.
PathEnsemble simulate_slow_fast(const ModelSpec& model, double eps, double T, double dt,
                                int n_paths, std::uint64_t seed,
                                const SimulateOptions& options = {});

// Single trajectory of the unit-speed frozen dynamics dY = f(t, x, Y) dt + dW2
// on [s, t_end]; negative times use the symmetric extension f(-t).
struct FrozenPath {
  std::vector<double> times;
  std::vector<double> states;  // times.size() * m
  double state_at(std::size_t ti, int comp, int m) const { return states[ti * m + comp]; }
};

FrozenPath simulate_frozen(const ModelSpec& model, const Vec& x, double s, double t_end,
                           double dt, const Vec& y0, std::uint64_t seed,
                           std::uint64_t path_index = 0);

/// Step count for a span that dt must divide (1e-12 relative); the `what` tag
// prefixes error messages.
long long checked_step_count(double span, double dt, const char* what);

// Ensemble version: n independent frozen paths, states kept at the requested
// grid times only (each must align with the step grid). Result layout is
// [sample][grid index][component].
struct FrozenEnsemble {
  std::vector<double> grid;
  int n_samples = 0;
  int m = 0;
  std::vector<double> states;
  double state_at(int sample, std::size_t gi, int comp) const {
    return states[(static_cast<std::size_t>(sample) * grid.size() + gi) * m + comp];
  }
};

FrozenEnsemble simulate_frozen_ensemble(const ModelSpec& model, const Vec& x, double s,
                                        const std::vector<double>& grid, double dt,
                                        const Vec& y0, int n_samples, std::uint64_t seed,
                                        std::size_t n_threads = 0);

// Same, but each sample has its own start state (cloud propagation). y0s is
// [sample][component], sample count inferred from its size. Sample i draws
// from stream (seed, path_offset + i, fast-noise channel).
FrozenEnsemble propagate_frozen_cloud(const ModelSpec& model, const Vec& x, double s,
                                      const std::vector<double>& grid, double dt,
                                      const Mat& y0s, std::uint64_t seed,
                                      std::size_t n_threads = 0,
                                      std::uint64_t path_offset = 0);

// Two-regime dissipativity check on random draws. Violations are recorded
// with their margins, never thrown.
struct ValidationReport {
  int n_pairs = 0;
  int violations_contraction = 0;  // two-regime inner-product bound
  int violations_growth = 0;       // |f(t,x,0)| <= C_star (1 + |x|)
  double worst_margin_contraction = 0.0;  // max of lhs - bound (positive = violation)
  double worst_margin_growth = 0.0;
  bool passed() const { return violations_contraction == 0 && violations_growth == 0; }
};

struct SamplerBounds {
  double t_max = 10.0;
  double x_box = 5.0;  // coordinates drawn uniformly from [-x_box, x_box]
  double y_box = 5.0;
};

ValidationReport validate_partial_dissipativity(const ModelSpec& model,
                                                const SamplerBounds& bounds, int n_pairs,
                                                std::uint64_t seed);

// Per-time Monte Carlo moments E |state|^p with standard errors.
struct MomentCurve {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<double> stderrs;
  double sup_value() const;
};

enum class Which { kSlow, kFast };

MomentCurve moment_curve(const PathEnsemble& ensemble, double p, Which which);

// CSV export with header `path,time,component,value`; components are labeled
// x0..x{n-1} and y0..y{m-1}.
std::string ensemble_to_csv(const PathEnsemble& ensemble);

}  // namespace sfal
