#include "sfal/sde.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/parallel.hpp"
#include "sfal/rng.hpp"

namespace sfal {

long long checked_step_count(double span, double dt, const char* what) {
  if (!(dt > 0.0)) throw ConfigError(std::string(what) + ": dt must be > 0");
  if (!(span > 0.0)) throw ConfigError(std::string(what) + ": time span must be > 0");
  const long long n = std::llround(span / dt);
  if (n < 1 || std::abs(static_cast<double>(n) * dt - span) > 1e-12 * std::max(1.0, span)) {
    throw ConfigError(std::string(what) + ": dt must divide the time span (1e-12 relative)");
  }
  return n;
}

namespace {

constexpr std::size_t kIncrementByteCap = std::size_t{2} * 1024 * 1024 * 1024;

struct PathAbort {
  bool aborted = false;
  double time = 0.0;
};

[[noreturn]] void throw_blowup(const std::string& model_id, int path, double time) {
  std::ostringstream msg;
  msg << "model blowup: non-finite state in model '" << model_id << "' on path " << path
      << " at t=" << time;
  throw RuntimeError(msg.str());
}

void check_model_for_sim(const ModelSpec& model) {
  if (model.n < 1 || model.m < 1 || model.d < 1)
    throw ConfigError("model dimensions must be positive");
  if (!model.b || !model.sigma || !model.f)
    throw ConfigError("model must define b, sigma and f");
}

}  // namespace

void em_step(const ModelSpec& model, double t, const Vec& x, const Vec& y, double eps,
             double dt, const Vec& dW1, const Vec& dW2, Vec& x_out, Vec& y_out) {
  if (!(dt > 0.0)) throw ConfigError("em_step: dt must be > 0");
  if (!(eps > 0.0)) throw ConfigError("em_step: eps must be > 0");
  const double tau = t / eps;
  Vec b(model.n), f(model.m);
  Mat sig(model.n, model.d);
  model.b(tau, x, y, b);
  model.sigma(tau, x, y, sig);
  model.f(tau, x, y, f);
  x_out = x + b * dt + sig * dW1;
  y_out = y + (dt / eps) * f + dW2 / std::sqrt(eps);
  if (!x_out.allFinite() || !y_out.allFinite()) throw_blowup(model.id, 0, t);
}

PathEnsemble simulate_slow_fast(const ModelSpec& model, double eps, double T, double dt,
                                int n_paths, std::uint64_t seed,
                                const SimulateOptions& options) {
  check_model_for_sim(model);
  if (!(eps >= kMinEpsilon))
    throw ConfigError("simulate_slow_fast: eps below supported floor 2^-20");
  if (dt > eps * kDtFastCap * (1.0 + 1e-12))
    throw ConfigError("simulate_slow_fast: resolution rule dt <= eps/50 violated");
  if (n_paths < 1) throw ConfigError("simulate_slow_fast: n_paths must be >= 1");
  const long long n_steps = checked_step_count(T, dt, "simulate_slow_fast");

  int store_every = options.store_every;
  if (store_every < 1) throw ConfigError("simulate_slow_fast: store_every must be >= 1");
  if (options.record_increments && store_every != 1)
    throw ConfigError("simulate_slow_fast: record_increments requires store_every == 1");
  if (n_steps % store_every != 0)
    throw ConfigError("simulate_slow_fast: store_every must divide the step count");

  const Vec x0 = options.x0.value_or(model.x0);
  const Vec y0 = options.y0.value_or(model.y0);
  if (x0.size() != model.n || y0.size() != model.m)
    throw ConfigError("simulate_slow_fast: initial condition has wrong dimension");

  PathEnsemble ens;
  ens.n_paths = n_paths;
  ens.n = model.n;
  ens.m = model.m;
  ens.epsilon = eps;
  ens.dt = dt;
  ens.store_every = store_every;
  ens.seed = seed;
  ens.model_id = model.id;
  ens.n_steps = static_cast<int>(n_steps);

  const std::size_t n_stored = static_cast<std::size_t>(n_steps / store_every) + 1;
  ens.times.resize(n_stored);
  for (std::size_t i = 0; i < n_stored; ++i)
    ens.times[i] = static_cast<double>(i) * store_every * dt;
  ens.slow.assign(n_stored * n_paths * model.n, 0.0);
  ens.fast.assign(n_stored * n_paths * model.m, 0.0);

  if (options.record_increments) {
    const std::size_t bytes = static_cast<std::size_t>(n_paths) * n_steps * model.m * 8;
    if (bytes > kIncrementByteCap)
      throw ConfigError("simulate_slow_fast: recorded increments would exceed 2 GiB; "
                        "reduce n_paths, T/dt, or disable record_increments");
    ens.w2_increments.assign(static_cast<std::size_t>(n_paths) * n_steps * model.m, 0.0);
  }

  const double sqrt_dt = std::sqrt(dt);
  const double inv_sqrt_eps = 1.0 / std::sqrt(eps);
  std::vector<PathAbort> aborts(n_paths);

  parallel_for(static_cast<std::size_t>(n_paths), [&](std::size_t p) {
    rng::GaussianStream w1(seed, p, rng::Channel::kSlowNoise);
    rng::GaussianStream w2(seed, p, rng::Channel::kFastNoise);
    Vec x = x0, y = y0;
    Vec b(model.n), f(model.m), dW1(model.d), dW2(model.m);
    Mat sig(model.n, model.d);
    Vec x_new(model.n), y_new(model.m);

    auto store = [&](std::size_t slot) {
      std::memcpy(&ens.slow[(p * n_stored + slot) * model.n], x.data(),
                  sizeof(double) * model.n);
      std::memcpy(&ens.fast[(p * n_stored + slot) * model.m], y.data(),
                  sizeof(double) * model.m);
    };
    store(0);

    for (long long step = 0; step < n_steps; ++step) {
      const double t = static_cast<double>(step) * dt;
      const double tau = t / eps;
      model.b(tau, x, y, b);
      model.sigma(tau, x, y, sig);
      model.f(tau, x, y, f);
      for (int j = 0; j < model.d; ++j) dW1[j] = sqrt_dt * w1.next();
      for (int j = 0; j < model.m; ++j) dW2[j] = sqrt_dt * w2.next();
      if (options.record_increments) {
        std::memcpy(&ens.w2_increments[(p * static_cast<std::size_t>(n_steps) + step) * model.m],
                    dW2.data(), sizeof(double) * model.m);
      }
      x_new.noalias() = x + b * dt;
      x_new.noalias() += sig * dW1;
      y_new = y + (dt / eps) * f + inv_sqrt_eps * dW2;
      x.swap(x_new);
      y.swap(y_new);
      if (!x.allFinite() || !y.allFinite()) {
        aborts[p] = {true, t + dt};
        return;
      }
      if ((step + 1) % store_every == 0) store(static_cast<std::size_t>((step + 1) / store_every));
    }
  }, options.n_threads);

  for (int p = 0; p < n_paths; ++p)
    if (aborts[p].aborted) throw_blowup(model.id, p, aborts[p].time);
  return ens;
}

namespace {

// Frozen dynamics evaluates f through the symmetric time extension.
inline double extended_time(double t) { return t >= 0.0 ? t : -t; }

}  // namespace

FrozenPath simulate_frozen(const ModelSpec& model, const Vec& x, double s, double t_end,
                           double dt, const Vec& y0, std::uint64_t seed,
                           std::uint64_t path_index) {
  if (t_end < s) throw ConfigError("simulate_frozen: t_end must be >= s");
  std::vector<double> grid;
  const long long n_steps =
      (t_end > s) ? checked_step_count(t_end - s, dt, "simulate_frozen") : 0;
  grid.reserve(n_steps + 1);
  for (long long i = 0; i <= n_steps; ++i) grid.push_back(s + static_cast<double>(i) * dt);

  Mat y0s(1, model.m);
  y0s.row(0) = y0.transpose();
  FrozenEnsemble ens =
      propagate_frozen_cloud(model, x, s, grid, dt, y0s, seed, 1, path_index);

  FrozenPath path;
  path.times = std::move(ens.grid);
  path.states = std::move(ens.states);
  return path;
}

FrozenEnsemble simulate_frozen_ensemble(const ModelSpec& model, const Vec& x, double s,
                                        const std::vector<double>& grid, double dt,
                                        const Vec& y0, int n_samples, std::uint64_t seed,
                                        std::size_t n_threads) {
  if (n_samples < 1) throw ConfigError("simulate_frozen_ensemble: n_samples must be >= 1");
  Mat y0s(n_samples, model.m);
  for (int i = 0; i < n_samples; ++i) y0s.row(i) = y0.transpose();
  return propagate_frozen_cloud(model, x, s, grid, dt, y0s, seed, n_threads);
}

FrozenEnsemble propagate_frozen_cloud(const ModelSpec& model, const Vec& x, double s,
                                      const std::vector<double>& grid, double dt,
                                      const Mat& y0s, std::uint64_t seed,
                                      std::size_t n_threads, std::uint64_t path_offset) {
  check_model_for_sim(model);
  if (x.size() != model.n) throw ConfigError("frozen dynamics: x has wrong dimension");
  if (y0s.cols() != model.m) throw ConfigError("frozen dynamics: y0 has wrong dimension");
  if (grid.empty()) throw ConfigError("frozen dynamics: empty output grid");
  if (dt > kDtFastCap * (1.0 + 1e-12))
    throw ConfigError("frozen dynamics: resolution rule dt <= 1/50 violated");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw ConfigError("frozen dynamics: output grid must be strictly increasing");
  if (grid.front() < s - 1e-12)
    throw ConfigError("frozen dynamics: output grid starts before the start time");

  const double t_end = grid.back();
  const long long n_steps =
      (t_end > s) ? checked_step_count(t_end - s, dt, "frozen dynamics") : 0;

  // Map each requested grid time to an integration step index.
  std::vector<long long> grid_step(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const long long idx = std::llround((grid[i] - s) / dt);
    if (idx < 0 || idx > n_steps ||
        std::abs(s + static_cast<double>(idx) * dt - grid[i]) >
            1e-9 * std::max(1.0, std::abs(grid[i]) + std::abs(s)))
      throw ConfigError("frozen dynamics: grid time does not align with the step grid");
    grid_step[i] = idx;
  }

  const int n_samples = static_cast<int>(y0s.rows());
  FrozenEnsemble ens;
  ens.grid = grid;
  ens.n_samples = n_samples;
  ens.m = model.m;
  ens.states.assign(static_cast<std::size_t>(n_samples) * grid.size() * model.m, 0.0);

  const double sqrt_dt = std::sqrt(dt);
  std::vector<PathAbort> aborts(n_samples);

  parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t p) {
    rng::GaussianStream w2(seed, path_offset + p, rng::Channel::kFastNoise);
    Vec y = y0s.row(p).transpose();
    Vec f(model.m), y_new(model.m);
    std::size_t next_out = 0;

    auto store_if_due = [&](long long step) {
      while (next_out < grid.size() && grid_step[next_out] == step) {
        std::memcpy(&ens.states[(p * grid.size() + next_out) * model.m], y.data(),
                    sizeof(double) * model.m);
        ++next_out;
      }
    };
    store_if_due(0);

    for (long long step = 0; step < n_steps; ++step) {
      const double t = s + static_cast<double>(step) * dt;
      model.f(extended_time(t), x, y, f);
      y_new = y + dt * f;
      for (int j = 0; j < model.m; ++j) y_new[j] += sqrt_dt * w2.next();
      y.swap(y_new);
      if (!y.allFinite()) {
        aborts[p] = {true, t + dt};
        return;
      }
      store_if_due(step + 1);
    }
  }, n_threads);

  for (int p = 0; p < n_samples; ++p)
    if (aborts[p].aborted) throw_blowup(model.id, p, aborts[p].time);
  return ens;
}

ValidationReport validate_partial_dissipativity(const ModelSpec& model,
                                                const SamplerBounds& bounds, int n_pairs,
                                                std::uint64_t seed) {
  if (n_pairs < 1) throw ConfigError("validate_partial_dissipativity: n_pairs must be >= 1");
  model.dissipativity.validate();
  const double C = model.dissipativity.C;
  const double K = model.dissipativity.K;
  const double r0 = model.dissipativity.r0;
  const double C_star = model.dissipativity.C_star;

  rng::CounterRng rng(seed, 0, rng::Channel::kSampler);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.next_unit(); };

  ValidationReport report;
  report.n_pairs = n_pairs;
  report.worst_margin_contraction = -std::numeric_limits<double>::infinity();
  report.worst_margin_growth = -std::numeric_limits<double>::infinity();

  Vec x1(model.n), x2(model.n), y1(model.m), y2(model.m), f1(model.m), f2(model.m);
  Vec zero_y = Vec::Zero(model.m);

  for (int i = 0; i < n_pairs; ++i) {
    const double t = uniform(0.0, bounds.t_max);
    for (int j = 0; j < model.n; ++j) x1[j] = uniform(-bounds.x_box, bounds.x_box);
    for (int j = 0; j < model.n; ++j) x2[j] = uniform(-bounds.x_box, bounds.x_box);
    for (int j = 0; j < model.m; ++j) y1[j] = uniform(-bounds.y_box, bounds.y_box);
    for (int j = 0; j < model.m; ++j) y2[j] = uniform(-bounds.y_box, bounds.y_box);

    model.f(t, x1, y1, f1);
    model.f(t, x2, y2, f2);
    const double dy = (y1 - y2).norm();
    const double dx = (x1 - x2).norm();
    const double lhs = (f1 - f2).dot(y1 - y2);
    const double bound =
        (dy <= r0) ? (C * dy * dy + C * dx * dy) : (-K * dy * dy + C * dx * dy);
    const double margin = lhs - bound;
    report.worst_margin_contraction = std::max(report.worst_margin_contraction, margin);
    if (margin > 1e-9 * (1.0 + std::abs(bound))) ++report.violations_contraction;

    model.f(t, x1, zero_y, f1);
    const double growth_margin = f1.norm() - C_star * (1.0 + x1.norm());
    report.worst_margin_growth = std::max(report.worst_margin_growth, growth_margin);
    if (growth_margin > 1e-9 * (1.0 + C_star * (1.0 + x1.norm()))) ++report.violations_growth;
  }
  return report;
}

MomentCurve moment_curve(const PathEnsemble& ensemble, double p, Which which) {
  if (ensemble.n_paths < 1 || ensemble.times.empty())
    throw ConfigError("moment_curve: empty ensemble");
  if (!(p >= 2.0)) throw ConfigError("moment_curve: exponent must be >= 2");

  const int dim = (which == Which::kSlow) ? ensemble.n : ensemble.m;
  const std::vector<double>& data = (which == Which::kSlow) ? ensemble.slow : ensemble.fast;
  const std::size_t n_times = ensemble.times.size();

  MomentCurve curve;
  curve.times = ensemble.times;
  curve.values.resize(n_times);
  curve.stderrs.resize(n_times);

  for (std::size_t ti = 0; ti < n_times; ++ti) {
    double sum = 0.0, sum_sq = 0.0;
    for (int path = 0; path < ensemble.n_paths; ++path) {
      double norm_sq = 0.0;
      const double* state = &data[(static_cast<std::size_t>(path) * n_times + ti) * dim];
      for (int c = 0; c < dim; ++c) norm_sq += state[c] * state[c];
      const double v = std::pow(norm_sq, 0.5 * p);
      sum += v;
      sum_sq += v * v;
    }
    const double npaths = static_cast<double>(ensemble.n_paths);
    const double mean = sum / npaths;
    const double var = std::max(0.0, sum_sq / npaths - mean * mean);
    curve.values[ti] = mean;
    curve.stderrs[ti] = std::sqrt(var / npaths);
  }
  return curve;
}

double MomentCurve::sup_value() const {
  return *std::max_element(values.begin(), values.end());
}

std::string ensemble_to_csv(const PathEnsemble& ensemble) {
  std::string out = "path,time,component,value\n";
  const std::size_t n_times = ensemble.times.size();
  for (int p = 0; p < ensemble.n_paths; ++p) {
    for (std::size_t ti = 0; ti < n_times; ++ti) {
      const std::string t_str = io::format_double(ensemble.times[ti]);
      for (int c = 0; c < ensemble.n; ++c) {
        out += io::csv_row({std::to_string(p), t_str, "x" + std::to_string(c),
                            io::format_double(ensemble.slow_at(p, ti, c))});
      }
      for (int c = 0; c < ensemble.m; ++c) {
        out += io::csv_row({std::to_string(p), t_str, "y" + std::to_string(c),
                            io::format_double(ensemble.fast_at(p, ti, c))});
      }
    }
  }
  return out;
}

}  // namespace sfal
