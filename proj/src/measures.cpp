#include "sfal/measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/rng.hpp"
#include "sfal/sde.hpp"
#include "sfal/stats.hpp"
#include "sfal/wasserstein.hpp"

namespace sfal {

namespace {

// Time-homogeneous limit dY = f_bar(x, Y) dt + dW reuses the frozen
// integrator with the time argument ignored.
ModelSpec limit_fast_model(const ModelSpec& model) {
  if (!model.has_f_bar())
    throw ConfigError("invariant measure: model '" + model.id + "' has no f_bar");
  ModelSpec out = model;
  AveragedDriftFn f_bar = model.f_bar;
  out.f = [f_bar](double, const Vec& x, const Vec& y, Vec& o) { f_bar(x, y, o); };
  return out;
}

// First k entries of a uniform random permutation of {0..n-1}.
std::vector<int> subsample_indices(int n, int k, std::uint64_t key) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  rng::CounterRng rng(key);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.next_unit() * static_cast<double>(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(std::min(j, n - 1))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Mat take_rows(const Mat& src, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  return out;
}

std::vector<double> column_of(const Mat& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, 0);
  return out;
}

double contraction_rate(const ModelSpec& model) {
  return theoretical_beta(model.dissipativity).beta;
}

}  // namespace

double EmpiricalMeasure::mean_abs() const { return samples.rowwise().norm().mean(); }

double EmpiricalMeasure::variance_1d() const {
  if (dim() != 1) throw ConfigError("variance_1d: cloud is not one-dimensional");
  const double mu = samples.col(0).mean();
  const Eigen::Index nn = samples.rows();
  if (nn < 2) return 0.0;
  return (samples.col(0).array() - mu).square().sum() / static_cast<double>(nn - 1);
}

W1Result w1_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                     std::uint64_t seed) {
  if (a.n() < 1 || b.n() < 1) throw ConfigError("w1_distance: empty cloud");
  if (a.dim() != b.dim()) throw ConfigError("w1_distance: dimension mismatch");
  int n = std::min(a.n(), b.n());
  if (a.dim() > 1) n = std::min(n, kAssignmentCap);

  W1Result res;
  res.n_used = n;
  res.subsampled = n < std::max(a.n(), b.n());
  const Mat sa = a.n() == n ? a.samples
                            : take_rows(a.samples, subsample_indices(
                                                       a.n(), n, rng::stream_key(seed, 0, rng::Channel::kSampler)));
  const Mat sb = b.n() == n ? b.samples
                            : take_rows(b.samples, subsample_indices(
                                                       b.n(), n, rng::stream_key(seed, 1, rng::Channel::kSampler)));
  if (a.dim() == 1)
    res.value = w1_exact_1d(column_of(sa), column_of(sb));
  else
    res.value = w1_exact_assignment(sa, sb);
  return res;
}

double default_lookback(const ModelSpec& model) { return 20.0 / contraction_rate(model); }
double default_burn_in(const ModelSpec& model) { return 10.0 / contraction_rate(model); }

EmpiricalMeasure evolution_measure(const ModelSpec& model, const Vec& x, double t,
                                   double lookback, double dt, int n_samples,
                                   std::uint64_t seed, const std::optional<Vec>& y0,
                                   std::size_t n_threads) {
  if (!(lookback > 0.0)) throw ConfigError("evolution measure: lookback must be positive");
  if (n_samples < 1) throw ConfigError("evolution measure: need at least one sample");
  const Vec start = y0 ? *y0 : Vec(Vec::Zero(model.m));
  // Round the lookback up to the step grid; a longer lookback only shrinks
  // the e^{-beta*lookback} initialization bias.
  const double span =
      static_cast<double>(static_cast<long long>(std::ceil(lookback / dt - 1e-9))) * dt;
  FrozenEnsemble ens = simulate_frozen_ensemble(model, x, t - span, {t}, dt, start,
                                                n_samples, seed, n_threads);
  lookback = span;
  EmpiricalMeasure mu;
  mu.samples.resize(n_samples, model.m);
  for (int i = 0; i < n_samples; ++i)
    for (int c = 0; c < model.m; ++c) mu.samples(i, c) = ens.state_at(i, 0, c);
  mu.meta = {model.id, "evolution", x, t, lookback, dt, seed};
  return mu;
}

EmpiricalMeasure invariant_measure(const ModelSpec& model, const Vec& x, double burn_in,
                                   int n_samples, int thin, double dt, std::uint64_t seed,
                                   int samples_per_chain, std::size_t n_threads) {
  if (!(burn_in > 0.0)) throw ConfigError("invariant measure: burn_in must be positive");
  if (n_samples < 1 || thin < 1 || samples_per_chain < 1)
    throw ConfigError("invariant measure: n_samples, thin, samples_per_chain must be >= 1");
  ModelSpec limit = limit_fast_model(model);

  const long long burn_steps =
      static_cast<long long>(std::ceil(burn_in / dt - 1e-9));
  const double burn_time = static_cast<double>(burn_steps) * dt;
  std::vector<double> grid(static_cast<std::size_t>(samples_per_chain));
  for (int k = 0; k < samples_per_chain; ++k)
    grid[static_cast<std::size_t>(k)] =
        static_cast<double>(burn_steps + static_cast<long long>(k) * thin) * dt;

  const int chains = (n_samples + samples_per_chain - 1) / samples_per_chain;
  FrozenEnsemble ens = simulate_frozen_ensemble(limit, x, 0.0, grid, dt, Vec::Zero(model.m),
                                                chains, seed, n_threads);
  EmpiricalMeasure mu;
  mu.samples.resize(n_samples, model.m);
  int row = 0;
  for (int c = 0; c < chains && row < n_samples; ++c)
    for (int k = 0; k < samples_per_chain && row < n_samples; ++k, ++row)
      for (int j = 0; j < model.m; ++j)
        mu.samples(row, j) = ens.state_at(c, static_cast<std::size_t>(k), j);
  mu.meta = {model.id, "invariant", x, 0.0, burn_time, dt, seed};
  return mu;
}

std::vector<Phi> default_phi_set(int m) {
  std::vector<Phi> phis;
  for (int j = 0; j < m; ++j)
    phis.push_back({"tanh_y" + std::to_string(j),
                    [j](const Vec& y) { return std::tanh(y[j]); }});
  phis.push_back({"min_abs_10", [](const Vec& y) { return std::min(y.norm(), 10.0); }});
  return phis;
}

bool EvolutionCheck::passed(double n_se) const {
  for (const auto& r : rows)
    if (r.residual > n_se * r.se) return false;
  return true;
}

EvolutionCheck check_evolution_property(const ModelSpec& model, const Vec& x, double s,
                                        double t, double lookback, double dt,
                                        const std::vector<Phi>& phis, int n_samples,
                                        std::uint64_t seed, std::size_t n_threads) {
  if (s > t) throw ConfigError("evolution property: need s <= t");
  EmpiricalMeasure mu_s =
      evolution_measure(model, x, s, lookback, dt, n_samples, rng::derive_seed(seed, 1),
                        std::nullopt, n_threads);
  EmpiricalMeasure mu_t =
      evolution_measure(model, x, t, lookback, dt, n_samples, rng::derive_seed(seed, 2),
                        std::nullopt, n_threads);
  FrozenEnsemble prop = propagate_frozen_cloud(model, x, s, {t}, dt, mu_s.samples,
                                               rng::derive_seed(seed, 3), n_threads);

  EvolutionCheck check;
  check.s = s;
  check.t = t;
  Vec point(model.m);
  for (const auto& phi : phis) {
    std::vector<double> va(static_cast<std::size_t>(n_samples));
    std::vector<double> vb(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
      for (int c = 0; c < model.m; ++c) point[c] = prop.state_at(i, 0, c);
      va[static_cast<std::size_t>(i)] = phi.fn(point);
      vb[static_cast<std::size_t>(i)] = phi.fn(mu_t.samples.row(i).transpose());
    }
    auto ma = stats::mean_stderr(va);
    auto mb = stats::mean_stderr(vb);
    check.rows.push_back({phi.name, std::abs(ma.mean - mb.mean), std::hypot(ma.se, mb.se)});
  }
  return check;
}

DecayCurve ergodic_decay_curve(const ModelSpec& model, const Vec& x, const Vec& y,
                               const std::vector<double>& t_grid, double dt, int n_samples,
                               std::uint64_t seed, std::size_t n_threads) {
  if (t_grid.empty()) throw ConfigError("decay curve: empty time grid");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1]))
      throw ConfigError("decay curve: time grid must be strictly increasing");
  if (!(t_grid.front() >= 0.0)) throw ConfigError("decay curve: grid starts before 0");

  Mat y0s(n_samples, model.m);
  for (int i = 0; i < n_samples; ++i) y0s.row(i) = y.transpose();
  FrozenEnsemble prop =
      propagate_frozen_cloud(model, x, 0.0, t_grid, dt, y0s, rng::derive_seed(seed, 1), n_threads);

  const double lookback = default_lookback(model);
  DecayCurve curve;
  curve.times = t_grid;
  curve.values.resize(t_grid.size());
  for (std::size_t gi = 0; gi < t_grid.size(); ++gi) {
    EmpiricalMeasure target =
        evolution_measure(model, x, t_grid[gi], lookback, dt, n_samples,
                          rng::derive_seed(seed, 100 + gi), std::nullopt, n_threads);
    EmpiricalMeasure moving;
    moving.samples.resize(n_samples, model.m);
    for (int i = 0; i < n_samples; ++i)
      for (int c = 0; c < model.m; ++c) moving.samples(i, c) = prop.state_at(i, gi, c);
    moving.meta = {model.id, "evolution", x, t_grid[gi], t_grid[gi], dt, seed};
    curve.values[gi] = w1_distance(moving, target, rng::derive_seed(seed, 500 + gi)).value;
  }

  EmpiricalMeasure floor_a =
      evolution_measure(model, x, t_grid.back(), lookback, dt, n_samples,
                        rng::derive_seed(seed, 900), std::nullopt, n_threads);
  EmpiricalMeasure floor_b =
      evolution_measure(model, x, t_grid.back(), lookback, dt, n_samples,
                        rng::derive_seed(seed, 901), std::nullopt, n_threads);
  curve.noise_floor = w1_distance(floor_a, floor_b, rng::derive_seed(seed, 902)).value;

  std::size_t fit_end = 0;
  while (fit_end < curve.values.size() && curve.values[fit_end] > 3.0 * curve.noise_floor)
    ++fit_end;
  curve.fit_points = fit_end;
  if (fit_end >= 2)
    curve.fitted_rate = stats::fit_exp_decay_rate(curve.times, curve.values, 0, fit_end);
  return curve;
}

double mixed_system_distance(const ModelSpec& model, const Vec& x, double t,
                             double lookback, double dt, int n_samples, std::uint64_t seed,
                             double burn_in, std::size_t n_threads) {
  EmpiricalMeasure evo = evolution_measure(model, x, t, lookback, dt, n_samples,
                                           rng::derive_seed(seed, 1), std::nullopt, n_threads);
  const double burn = burn_in > 0.0 ? burn_in : default_burn_in(model);
  EmpiricalMeasure inv = invariant_measure(model, x, burn, n_samples, 1, dt,
                                           rng::derive_seed(seed, 2), 1, n_threads);
  return w1_distance(evo, inv, rng::derive_seed(seed, 3)).value;
}

std::string measure_to_csv(const EmpiricalMeasure& mu) {
  std::string out = "sample_index,component,value\n";
  for (int i = 0; i < mu.n(); ++i)
    for (int c = 0; c < mu.dim(); ++c)
      out += std::to_string(i) + ",y" + std::to_string(c) + "," +
             io::format_double(mu.samples(i, c)) + "\n";
  return out;
}

std::string measure_meta_json(const EmpiricalMeasure& mu) {
  nlohmann::json j;
  j["model"] = mu.meta.model_id;
  j["kind"] = mu.meta.kind;
  j["x"] = std::vector<double>(mu.meta.x.data(), mu.meta.x.data() + mu.meta.x.size());
  j["t"] = mu.meta.t;
  j["lookback"] = mu.meta.span;
  j["dt"] = mu.meta.dt;
  j["seed"] = mu.meta.seed;
  j["n"] = mu.n();
  return j.dump(2) + "\n";
}

}  // namespace sfal
