#include "sfal/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/parallel.hpp"
#include "sfal/rng.hpp"
#include "sfal/sde.hpp"

namespace sfal {

double h_eval(double r, const ContractionConstants& k) {
  if (r < 0.0) throw ConfigError("h_eval: r must be >= 0");
  return 1.0 - std::exp(-k.c1 * r) + k.c2 * r;
}

namespace {

// Golden-section minimization of fn on [lo, hi].
template <typename F>
double golden_min(F fn, double lo, double hi) {
  constexpr double kInvPhi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = fn(c), fd = fn(d);
  for (int it = 0; it < 200 && (b - a) > 1e-12 * std::max(1.0, std::abs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = fn(d);
    }
  }
  return fn(0.5 * (a + b));
}

}  // namespace

ContractionConstants theoretical_beta(const DissipativityParams& params) {
  params.validate();
  ContractionConstants k;
  k.c1 = 2.0 * params.C * params.r0;
  k.c2 = k.c1 * std::exp(-k.c1 * params.r0);

  const double r0 = params.r0;
  const double h_r0 = h_eval(r0, k);
  const double first = k.c1 * k.c1 * std::exp(-k.c1 * r0) / h_r0;

  // inf_{r >= r0} r / h(r): pre-scan for monotonicity, refine interior minima
  // by golden-section. The analytic limit as r -> inf is 1/c2.
  auto ratio = [&](double r) { return r / h_eval(r, k); };
  const int n_scan = 1000;
  const double r_hi = r0 * 1e3;
  double prev = ratio(r0);
  double grid_min = prev;
  int min_index = 0;
  bool nonincreasing = true, nondecreasing = true;
  for (int i = 1; i < n_scan; ++i) {
    const double r = r0 + (r_hi - r0) * static_cast<double>(i) / (n_scan - 1);
    const double v = ratio(r);
    if (v > prev + 1e-15) nonincreasing = false;
    if (v < prev - 1e-15) nondecreasing = false;
    if (v < grid_min) {
      grid_min = v;
      min_index = i;
    }
    prev = v;
  }

  double inf_ratio;
  if (nonincreasing) {
    inf_ratio = 1.0 / k.c2;  // decreasing toward the analytic limit
  } else if (nondecreasing) {
    inf_ratio = ratio(r0);
  } else {
    const double step = (r_hi - r0) / (n_scan - 1);
    const double lo = r0 + std::max(0, min_index - 1) * step;
    const double hi = r0 + std::min(n_scan - 1, min_index + 1) * step;
    inf_ratio = golden_min(ratio, lo, hi);
  }

  const double floor = 1.0 / (k.c1 + k.c2);
  if (inf_ratio < floor * (1.0 - 1e-9))
    throw RuntimeError("theoretical_beta: computed inf below the sandwich floor");

  const double second = k.c2 * params.K * inf_ratio;
  k.beta = std::min(first, second);
  return k;
}

double mollifier(double r, double delta) {
  if (r < 0.0) throw ConfigError("mollifier: r must be >= 0");
  if (!(delta > 0.0)) throw ConfigError("mollifier: delta must be > 0");
  if (r <= 0.5 * delta) return 0.0;
  if (r >= delta) return 1.0;
  const double u = 2.0 * r / delta - 1.0;
  return ((6.0 * u - 15.0) * u + 10.0) * u * u * u;
}

void CouplingTrace::mean_h(std::vector<double>& mean, std::vector<double>& se) const {
  const std::size_t n_times = times.size();
  mean.assign(n_times, 0.0);
  se.assign(n_times, 0.0);
  for (std::size_t ti = 0; ti < n_times; ++ti) {
    double sum = 0.0, sum_sq = 0.0;
    for (int p = 0; p < n_paths; ++p) {
      const double v = h_dist_at(p, ti);
      sum += v;
      sum_sq += v * v;
    }
    const double np = static_cast<double>(n_paths);
    mean[ti] = sum / np;
    se[ti] = std::sqrt(std::max(0.0, sum_sq / np - mean[ti] * mean[ti]) / np);
  }
}

void CouplingTrace::mean_dist(std::vector<double>& mean, std::vector<double>& se) const {
  const std::size_t n_times = times.size();
  mean.assign(n_times, 0.0);
  se.assign(n_times, 0.0);
  for (std::size_t ti = 0; ti < n_times; ++ti) {
    double sum = 0.0, sum_sq = 0.0;
    for (int p = 0; p < n_paths; ++p) {
      const double v = dist_at(p, ti);
      sum += v;
      sum_sq += v * v;
    }
    const double np = static_cast<double>(n_paths);
    mean[ti] = sum / np;
    se[ti] = std::sqrt(std::max(0.0, sum_sq / np - mean[ti] * mean[ti]) / np);
  }
}

CouplingTrace simulate_coupled(const ModelSpec& model, const CouplingConfig& cfg,
                               std::uint64_t seed) {
  if (!model.f) throw ConfigError("simulate_coupled: model must define f");
  model.dissipativity.validate();

  CouplingConfig c = cfg;
  if (c.delta <= 0.0) c.delta = 1e-3 * model.dissipativity.r0;
  if (c.n_paths < 1) throw ConfigError("simulate_coupled: n_paths must be >= 1");
  if (!(c.dt > 0.0)) throw ConfigError("simulate_coupled: dt must be > 0");
  const double dt_cap = std::min(kDtFastCap, c.delta / 10.0);
  if (c.dt > dt_cap * (1.0 + 1e-12))
    throw ConfigError("simulate_coupled: resolution rule dt <= min(1/50, delta/10) violated");
  if (c.x1.size() != model.n || c.x2.size() != model.n)
    throw ConfigError("simulate_coupled: x1/x2 have wrong dimension");
  if (c.y1.size() != model.m || c.y2.size() != model.m)
    throw ConfigError("simulate_coupled: y1/y2 have wrong dimension");
  if (c.store_every < 1) throw ConfigError("simulate_coupled: store_every must be >= 1");

  const long long n_steps = [&] {
    const long long n = std::llround(c.T / c.dt);
    if (n < 1 || std::abs(static_cast<double>(n) * c.dt - c.T) > 1e-12 * std::max(1.0, c.T))
      throw ConfigError("simulate_coupled: dt must divide T (1e-12 relative)");
    return n;
  }();
  if (n_steps % c.store_every != 0)
    throw ConfigError("simulate_coupled: store_every must divide the step count");

  CouplingTrace trace;
  trace.n_paths = c.n_paths;
  trace.delta = c.delta;
  trace.constants = theoretical_beta(model.dissipativity);
  trace.m = model.m;

  const std::size_t n_stored = static_cast<std::size_t>(n_steps / c.store_every) + 1;
  trace.times.resize(n_stored);
  for (std::size_t i = 0; i < n_stored; ++i)
    trace.times[i] = static_cast<double>(i) * c.store_every * c.dt;
  trace.dist.assign(n_stored * c.n_paths, 0.0);
  trace.h_dist.assign(n_stored * c.n_paths, 0.0);
  trace.coalesced_at.assign(c.n_paths, std::nullopt);
  if (c.record_states) {
    trace.y_states.assign(n_stored * c.n_paths * model.m, 0.0);
    trace.z_states.assign(n_stored * c.n_paths * model.m, 0.0);
  }

  const double sqrt_dt = std::sqrt(c.dt);
  std::vector<int> aborts(c.n_paths, 0);
  std::vector<double> abort_times(c.n_paths, 0.0);

  parallel_for(static_cast<std::size_t>(c.n_paths), [&](std::size_t p) {
    rng::GaussianStream w1(seed, p, rng::Channel::kCouplingPrimary);
    rng::GaussianStream w2(seed, p, rng::Channel::kCouplingShared);
    Vec y = c.y1, z = c.y2;
    Vec fy(model.m), fz(model.m), dW1(model.m), dW2(model.m), e(model.m);
    Vec y_new(model.m), z_new(model.m);
    bool coalesced_seen = false;

    auto store = [&](std::size_t slot) {
      const double r = (y - z).norm();
      trace.dist[p * n_stored + slot] = r;
      trace.h_dist[p * n_stored + slot] = h_eval(r, trace.constants);
      if (c.record_states) {
        std::memcpy(&trace.y_states[(p * n_stored + slot) * model.m], y.data(),
                    sizeof(double) * model.m);
        std::memcpy(&trace.z_states[(p * n_stored + slot) * model.m], z.data(),
                    sizeof(double) * model.m);
      }
    };
    store(0);
    if ((y - z).norm() < 0.5 * c.delta) {
      trace.coalesced_at[p] = 0.0;
      coalesced_seen = true;
    }

    for (long long step = 0; step < n_steps; ++step) {
      const double t = static_cast<double>(step) * c.dt;
      model.f(t, c.x1, y, fy);
      model.f(t, c.x2, z, fz);
      for (int j = 0; j < model.m; ++j) dW1[j] = sqrt_dt * w1.next();
      for (int j = 0; j < model.m; ++j) dW2[j] = sqrt_dt * w2.next();

      const double r = (y - z).norm();
      const double pi = mollifier(r, c.delta);
      const double sqrt_pi = std::sqrt(pi);
      const double sqrt_co = std::sqrt(1.0 - pi);

      y_new = y + fy * c.dt + sqrt_pi * dW1 + sqrt_co * dW2;
      if (pi > 0.0) {
        e = (y - z) / r;
        z_new = z + fz * c.dt + sqrt_pi * (dW1 - 2.0 * e.dot(dW1) * e) + sqrt_co * dW2;
      } else {
        z_new = z + fz * c.dt + sqrt_co * dW2;
      }
      y.swap(y_new);
      z.swap(z_new);
      if (!y.allFinite() || !z.allFinite()) {
        aborts[p] = 1;
        abort_times[p] = t + c.dt;
        return;
      }
      if (!coalesced_seen && (y - z).norm() < 0.5 * c.delta) {
        trace.coalesced_at[p] = t + c.dt;
        coalesced_seen = true;
      }
      if ((step + 1) % c.store_every == 0) store(static_cast<std::size_t>((step + 1) / c.store_every));
    }
  }, c.n_threads);

  for (int p = 0; p < c.n_paths; ++p) {
    if (aborts[p]) {
      std::ostringstream msg;
      msg << "model blowup: non-finite state in coupled pair of model '" << model.id
          << "' on path " << p << " at t=" << abort_times[p];
      throw RuntimeError(msg.str());
    }
  }
  return trace;
}

double w1_upper_bound(const ContractionConstants& k, double t_minus_s, double y_gap,
                      double x_gap, double C_env) {
  if (t_minus_s < 0.0 || y_gap < 0.0 || x_gap < 0.0 || C_env < 0.0)
    throw ConfigError("w1_upper_bound: inputs must be non-negative");
  return C_env * std::exp(-k.beta * t_minus_s) * y_gap + C_env * x_gap;
}

std::string coupling_trace_to_csv(const CouplingTrace& trace) {
  std::string out = "path,time,dist,h_dist\n";
  for (int p = 0; p < trace.n_paths; ++p) {
    for (std::size_t ti = 0; ti < trace.times.size(); ++ti) {
      out += io::csv_row({std::to_string(p), io::format_double(trace.times[ti]),
                          io::format_double(trace.dist_at(p, ti)),
                          io::format_double(trace.h_dist_at(p, ti))});
    }
  }
  return out;
}

}  // namespace sfal
