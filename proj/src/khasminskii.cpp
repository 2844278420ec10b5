#include "sfal/khasminskii.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/parallel.hpp"

namespace sfal {

namespace {

// Drops a grid-time onto its step index; rejects off-grid values.
long long grid_index(double s, double dt, const char* what) {
  const long long k = std::llround(s / dt);
  if (k < 0 || std::abs(static_cast<double>(k) * dt - s) > 1e-9 * std::max(1.0, std::abs(s)))
    throw ConfigError(std::string(what) + ": time does not lie on the step grid");
  return k;
}

void check_driving(const PathEnsemble& driving, const BlockSchedule& schedule) {
  schedule.validate();
  if (!driving.has_increments())
    throw ConfigError("khasminskii: driving ensemble has no recorded W2 increments; "
                      "rerun with record_increments");
  if (driving.store_every != 1)
    throw ConfigError("khasminskii: driving ensemble must store every step");
  const double horizon = driving.times.back();
  if (std::abs(schedule.T - horizon) > 1e-9 * std::max(1.0, horizon))
    throw ConfigError("khasminskii: schedule horizon does not match the driving run");
}

}  // namespace

void BlockSchedule::validate() const {
  if (!(delta > 0.0)) throw ConfigError("block schedule: delta must be > 0");
  if (!(delta <= T)) throw ConfigError("block schedule: delta must not exceed the horizon");
}

long long BlockSchedule::block_index(double s) const {
  validate();
  // Nudge so that times on a block boundary (up to grid roundoff) land in the
  // block they start.
  const long long k = static_cast<long long>(std::floor(s / delta + 1e-9));
  return std::max(0LL, k);
}

double BlockSchedule::floor_time(double s) const {
  return static_cast<double>(block_index(s)) * delta;
}

BlockSchedule default_schedule(double eps, double T, double dt) {
  if (!(eps > 0.0)) throw ConfigError("default_schedule: eps must be > 0");
  if (!(dt > 0.0) || !(T > 0.0)) throw ConfigError("default_schedule: T and dt must be > 0");
  const long long n_steps = checked_step_count(T, dt, "default_schedule");
  long long blocks = std::llround(std::pow(eps, 2.0 / 3.0) / dt);
  blocks = std::clamp(blocks, 1LL, n_steps);
  return {static_cast<double>(blocks) * dt, T};
}

AuxiliaryEnsemble auxiliary_path(const ModelSpec& model, double eps,
                                 const BlockSchedule& schedule, const PathEnsemble& driving,
                                 std::size_t n_threads) {
  check_driving(driving, schedule);
  if (driving.m != model.m || driving.n != model.n)
    throw ConfigError("khasminskii: driving ensemble dimensions do not match the model");
  const double dt = driving.dt;
  const long long block_steps = checked_step_count(schedule.delta, dt, "khasminskii block");
  const long long n_steps = driving.n_steps;

  AuxiliaryEnsemble aux;
  aux.times = driving.times;
  aux.n_paths = driving.n_paths;
  aux.m = driving.m;
  aux.delta = schedule.delta;
  aux.y_aux.assign(driving.fast.size(), 0.0);
  const std::size_t n_stored = driving.times.size();

  const double inv_sqrt_eps = 1.0 / std::sqrt(eps);
  std::vector<std::string> failures(static_cast<std::size_t>(driving.n_paths));

  parallel_for(static_cast<std::size_t>(driving.n_paths), [&](std::size_t p) {
    Vec y_hat(model.m), x_frozen(model.n), f(model.m), dW2(model.m), y_new(model.m);
    auto store = [&](std::size_t slot) {
      for (int c = 0; c < model.m; ++c)
        aux.y_aux[(p * n_stored + slot) * model.m + c] = y_hat[c];
    };
    for (long long step = 0; step <= n_steps; ++step) {
      if (step % block_steps == 0) {
        for (int c = 0; c < model.m; ++c)
          y_hat[c] = driving.fast_at(static_cast<int>(p), static_cast<std::size_t>(step), c);
        for (int c = 0; c < model.n; ++c)
          x_frozen[c] = driving.slow_at(static_cast<int>(p), static_cast<std::size_t>(step), c);
      }
      store(static_cast<std::size_t>(step));
      if (step == n_steps) break;
      const double t = static_cast<double>(step) * dt;
      const double tau = t / eps;
      model.f(tau, x_frozen, y_hat, f);
      for (int c = 0; c < model.m; ++c)
        dW2[c] = driving.w2_at(static_cast<int>(p), static_cast<int>(step), c);
      y_new = y_hat + (dt / eps) * f + inv_sqrt_eps * dW2;
      if (!y_new.allFinite()) {
        std::ostringstream msg;
        msg << "model blowup: non-finite auxiliary state in '" << model.id << "' on path " << p
            << " at t=" << t + dt;
        failures[p] = msg.str();
        return;
      }
      y_hat.swap(y_new);
    }
  }, n_threads);

  for (const std::string& msg : failures)
    if (!msg.empty()) throw RuntimeError(msg);
  return aux;
}

SupGap mean_sup_gap(const PathEnsemble& driving, const AuxiliaryEnsemble& aux) {
  if (driving.times.size() != aux.times.size() || driving.n_paths != aux.n_paths)
    throw ConfigError("mean_sup_gap: ensembles do not share a grid");
  double sum = 0.0, sum2 = 0.0;
  for (int p = 0; p < driving.n_paths; ++p) {
    double sup = 0.0;
    for (std::size_t ti = 0; ti < driving.times.size(); ++ti) {
      double g2 = 0.0;
      for (int c = 0; c < driving.m; ++c) {
        const double d = driving.fast_at(p, ti, c) - aux.y_at(p, ti, c);
        g2 += d * d;
      }
      sup = std::max(sup, std::sqrt(g2));
    }
    sum += sup;
    sum2 += sup * sup;
  }
  const double n = static_cast<double>(driving.n_paths);
  SupGap out;
  out.mean = sum / n;
  if (driving.n_paths > 1)
    out.se = std::sqrt(std::max(0.0, (sum2 - n * out.mean * out.mean) / (n - 1.0)) / n);
  return out;
}

TestIntegrand integrand_by_name(const std::string& name, const ModelSpec& model) {
  if (name == "b0") {
    DriftFn b = model.b;
    const int n = model.n;
    // Zoo drifts are 1-Lipschitz in (x, y) for every t.
    return {name, [b, n](double t, const Vec& x, const Vec& y) {
              Vec out(n);
              b(t, x, y, out);
              return out[0];
            },
            1.0};
  }
  if (name == "tanh_y0")
    return {name, [](double, const Vec&, const Vec& y) { return std::tanh(y[0]); }, 1.0};
  if (name == "clip_y")
    return {name, [](double, const Vec&, const Vec& y) { return std::min(y.norm(), 10.0); }, 1.0};
  if (name == "tanh_x0")
    return {name, [](double, const Vec& x, const Vec&) { return std::tanh(x[0]); }, 1.0};
  throw ConfigError("unknown integrand '" + name + "' (known: b0, tanh_y0, clip_y, tanh_x0)");
}

WeightVariable weight_by_name(const std::string& name) {
  if (name == "one") return {name, [](const Vec&) { return 1.0; }};
  if (name == "zero") return {name, [](const Vec&) { return 0.0; }};
  if (name == "tanh_x0") return {name, [](const Vec& x) { return std::tanh(x[0]); }};
  if (name == "clip_x") return {name, [](const Vec& x) { return std::min(x.norm(), 10.0); }};
  throw ConfigError("unknown weight '" + name + "' (known: one, zero, tanh_x0, clip_x)");
}

GapEstimate gap_functional(const ModelSpec& model, double eps, const BlockSchedule& schedule,
                           const PathEnsemble& driving, const TestIntegrand& F, double t0,
                           double t, const WeightVariable& Z, std::size_t n_threads) {
  const AuxiliaryEnsemble aux = auxiliary_path(model, eps, schedule, driving, n_threads);
  const double dt = driving.dt;
  const long long k0 = grid_index(t0, dt, "gap_functional t0");
  const long long k1 = grid_index(t, dt, "gap_functional t");
  if (k0 >= k1) throw ConfigError("gap_functional: need t0 < t");
  if (k1 > driving.n_steps) throw ConfigError("gap_functional: t exceeds the driving horizon");

  std::vector<double> integrals(static_cast<std::size_t>(driving.n_paths));
  std::vector<double> weights(static_cast<std::size_t>(driving.n_paths));
  parallel_for(static_cast<std::size_t>(driving.n_paths), [&](std::size_t p) {
    Vec x(model.n), y(model.m), y_a(model.m);
    const int pi = static_cast<int>(p);
    for (int c = 0; c < model.n; ++c) x[c] = driving.slow_at(pi, static_cast<std::size_t>(k0), c);
    const double z = Z.fn(x);
    weights[p] = z;
    double acc = 0.0;
    if (z != 0.0) {
      for (long long k = k0; k < k1; ++k) {
        const double tau = static_cast<double>(k) * dt / eps;
        for (int c = 0; c < model.n; ++c) x[c] = driving.slow_at(pi, static_cast<std::size_t>(k), c);
        for (int c = 0; c < model.m; ++c) {
          y[c] = driving.fast_at(pi, static_cast<std::size_t>(k), c);
          y_a[c] = aux.y_at(pi, static_cast<std::size_t>(k), c);
        }
        acc += (F.fn(tau, x, y) - F.fn(tau, x, y_a)) * z * dt;
      }
    }
    integrals[p] = acc;
  }, n_threads);

  const double n = static_cast<double>(driving.n_paths);
  double sum = 0.0, sum2 = 0.0, w2 = 0.0;
  for (std::size_t p = 0; p < integrals.size(); ++p) {
    sum += integrals[p];
    sum2 += integrals[p] * integrals[p];
    w2 += weights[p] * weights[p];
  }
  GapEstimate est;
  const double mean = sum / n;
  est.value = std::abs(mean);
  if (driving.n_paths > 1)
    est.se = std::sqrt(std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0)) / n);
  est.scale = std::sqrt(schedule.delta) * std::sqrt(w2 / n);
  return est;
}

std::string khasminskii_to_csv(const PathEnsemble& driving, const AuxiliaryEnsemble& aux) {
  if (driving.times.size() != aux.times.size() || driving.n_paths != aux.n_paths)
    throw ConfigError("khasminskii_to_csv: ensembles do not share a grid");
  std::string out = "path,time,y_true,y_aux,gap\n";
  for (int p = 0; p < driving.n_paths; ++p) {
    for (std::size_t ti = 0; ti < driving.times.size(); ++ti) {
      double g2 = 0.0;
      for (int c = 0; c < driving.m; ++c) {
        const double d = driving.fast_at(p, ti, c) - aux.y_at(p, ti, c);
        g2 += d * d;
      }
      out += std::to_string(p);
      out += ',';
      out += io::format_double(driving.times[ti]);
      out += ',';
      out += io::format_double(driving.fast_at(p, ti, 0));
      out += ',';
      out += io::format_double(aux.y_at(p, ti, 0));
      out += ',';
      out += io::format_double(std::sqrt(g2));
      out += '\n';
    }
  }
  return out;
}

}  // namespace sfal
