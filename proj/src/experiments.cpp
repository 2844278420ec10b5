#include "sfal/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/rng.hpp"
#include "sfal/stats.hpp"

namespace sfal {

namespace {

// 21 equally spaced comparison times, endpoints included.
constexpr int kStrongSegments = 20;

void check_grid(const std::vector<double>& grid, const char* what, double lo) {
  if (grid.empty()) throw ConfigError(std::string(what) + ": empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= lo))
      throw ConfigError(std::string(what) + ": grid value " + io::format_double(grid[i]) +
                        " below the allowed minimum " + io::format_double(lo));
    if (i > 0 && !(grid[i] < grid[i - 1]))
      throw ConfigError(std::string(what) + ": grid must be strictly decreasing");
  }
}

void check_errors_finite(const ConvergenceReport& report, const char* what) {
  for (double e : report.errors)
    if (!std::isfinite(e)) throw RuntimeError(std::string(what) + ": non-finite error estimate");
}

std::string join_doubles(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) s += ',';
    s += io::format_double(xs[i]);
  }
  return s;
}

// Largest mean over the candidate samples, with its stderr.
void push_max_mean(ConvergenceReport& report, const std::vector<std::vector<double>>& samples) {
  double best = -1.0;
  double best_se = 0.0;
  for (const auto& s : samples) {
    const auto ms = stats::mean_stderr(s);
    if (ms.mean > best) {
      best = ms.mean;
      best_se = ms.se;
    }
  }
  report.errors.push_back(best);
  report.stderrs.push_back(best_se);
}

}  // namespace

void fit_report_slope(ConvergenceReport& report) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < report.grid.size(); ++i) {
    if (report.errors[i] > 0.0 && std::isfinite(report.errors[i])) {
      lx.push_back(std::log(report.grid[i]));
      ly.push_back(std::log(report.errors[i]));
    }
  }
  if (lx.size() < 3) {
    report.slope = std::numeric_limits<double>::quiet_NaN();
    report.slope_residual = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  const auto fit = stats::fit_line(lx, ly);
  report.slope = fit.slope;
  report.slope_residual = fit.residual_rms;
}

ConvergenceReport strong_convergence(const ModelSpec& model, const AveragedModel& avg,
                                     const StrongConvergenceConfig& cfg, std::uint64_t seed) {
  if (!model.sigma_y_independent)
    throw ConfigError("strong_convergence: needs a y-independent sigma; model '" + model.id +
                      "' does not qualify");
  if (!avg.b_bar || !avg.sigma_bar)
    throw ConfigError("strong_convergence: averaged model must provide b_bar and sigma_bar");
  if (avg.n != model.n) throw ConfigError("strong_convergence: slow dimension mismatch");
  check_grid(cfg.eps_grid, "strong_convergence", kMinEpsilon);
  if (!(cfg.T > 0.0)) throw ConfigError("strong_convergence: T must be > 0");
  if (cfg.n_paths < 1) throw ConfigError("strong_convergence: n_paths must be >= 1");

  ConvergenceReport report;
  report.parameter = "eps";
  report.grid = cfg.eps_grid;
  for (double eps : cfg.eps_grid) {
    // Both systems integrate on one grid so they consume the same W1
    // increments draw by draw; the averaged cap 1e-3 keeps its own
    // discretization bias flat across the sweep.
    const double dt = std::min(eps * kDtFastCap, 1e-3);
    const long long n_steps = checked_step_count(cfg.T, dt, "strong_convergence");
    if (n_steps % kStrongSegments != 0)
      throw ConfigError("strong_convergence: 21 output times do not lie on the step grid at eps = " +
                        io::format_double(eps) + "; adjust T or the grid");
    SimulateOptions opt;
    opt.store_every = static_cast<int>(n_steps / kStrongSegments);
    opt.n_threads = cfg.n_threads;
    const PathEnsemble full =
        simulate_slow_fast(model, eps, cfg.T, dt, cfg.n_paths, seed, opt);

    AveragedRunConfig arc;
    arc.x0 = model.x0;
    arc.T = cfg.T;
    arc.dt = dt;
    arc.n_paths = cfg.n_paths;
    arc.store_every = opt.store_every;
    arc.n_threads = cfg.n_threads;
    PathEnsemble limit;
    try {
      limit = simulate_averaged(avg, AveragedKind::kStrong, arc, seed);
    } catch (const RuntimeError& e) {
      if (std::string(e.what()).find("outside the tabulated box") != std::string::npos)
        throw RuntimeError("strong_convergence: averaged path left the tabulated region at eps = " +
                           io::format_double(eps) + "; extend the table (" + e.what() + ")");
      throw;
    }

    std::vector<std::vector<double>> sq_by_time(full.times.size(),
                                                std::vector<double>(cfg.n_paths));
    for (int p = 0; p < cfg.n_paths; ++p) {
      for (std::size_t ti = 0; ti < full.times.size(); ++ti) {
        double sq = 0.0;
        for (int c = 0; c < model.n; ++c) {
          const double d = full.slow_at(p, ti, c) - limit.slow_at(p, ti, c);
          sq += d * d;
        }
        sq_by_time[ti][p] = sq;
      }
    }
    push_max_mean(report, sq_by_time);
  }

  std::ostringstream fp;
  fp << "strong|model=" << model.id << "|T=" << io::format_double(cfg.T)
     << "|n_paths=" << cfg.n_paths << "|seed=" << seed
     << "|dt=min(eps/50,1e-3)|segments=" << kStrongSegments << "|grid=" << join_doubles(cfg.eps_grid);
  report.fingerprint = io::hex64(io::fnv1a(fp.str()));
  check_errors_finite(report, "strong_convergence");
  fit_report_slope(report);
  return report;
}

ConvergenceReport weak_convergence(const ModelSpec& model, const AveragedModel& avg,
                                   const std::vector<Phi>& phis,
                                   const WeakConvergenceConfig& cfg, std::uint64_t seed) {
  if (!avg.b_bar || !avg.Theta)
    throw ConfigError("weak_convergence: averaged model must provide b_bar and Theta");
  if (avg.n != model.n) throw ConfigError("weak_convergence: slow dimension mismatch");
  if (phis.empty()) throw ConfigError("weak_convergence: need at least one test function");
  check_grid(cfg.eps_grid, "weak_convergence", kMinEpsilon);
  if (!(cfg.T > 0.0)) throw ConfigError("weak_convergence: T must be > 0");
  if (cfg.n_paths < 2) throw ConfigError("weak_convergence: n_paths must be >= 2");
  if (!(cfg.dt_limit > 0.0)) throw ConfigError("weak_convergence: dt_limit must be > 0");

  // One limit ensemble on its own seed; only the final time matters.
  const long long limit_steps = checked_step_count(cfg.T, cfg.dt_limit, "weak_convergence limit");
  AveragedRunConfig arc;
  arc.x0 = model.x0;
  arc.T = cfg.T;
  arc.dt = cfg.dt_limit;
  arc.n_paths = cfg.n_paths;
  arc.store_every = static_cast<int>(limit_steps);
  arc.n_threads = cfg.n_threads;
  const PathEnsemble limit =
      simulate_averaged(avg, AveragedKind::kWeak, arc, rng::derive_seed(seed, 9001));
  const std::size_t t_end_limit = limit.times.size() - 1;

  std::vector<stats::MeanStderr> limit_means(phis.size());
  std::vector<double> vals(cfg.n_paths);
  Vec x(model.n);
  for (std::size_t q = 0; q < phis.size(); ++q) {
    for (int p = 0; p < cfg.n_paths; ++p) {
      for (int c = 0; c < model.n; ++c) x[c] = limit.slow_at(p, t_end_limit, c);
      vals[p] = phis[q].fn(x);
    }
    limit_means[q] = stats::mean_stderr(vals);
  }

  ConvergenceReport report;
  report.parameter = "eps";
  report.grid = cfg.eps_grid;
  for (std::size_t i = 0; i < cfg.eps_grid.size(); ++i) {
    const double eps = cfg.eps_grid[i];
    const double dt = eps * kDtFastCap;
    const long long n_steps = checked_step_count(cfg.T, dt, "weak_convergence");
    SimulateOptions opt;
    opt.store_every = static_cast<int>(n_steps);
    opt.n_threads = cfg.n_threads;
    const PathEnsemble full = simulate_slow_fast(model, eps, cfg.T, dt, cfg.n_paths,
                                                 rng::derive_seed(seed, 101 + i), opt);
    const std::size_t t_end = full.times.size() - 1;

    double best = -1.0, best_se = 0.0;
    for (std::size_t q = 0; q < phis.size(); ++q) {
      for (int p = 0; p < cfg.n_paths; ++p) {
        for (int c = 0; c < model.n; ++c) x[c] = full.slow_at(p, t_end, c);
        vals[p] = phis[q].fn(x);
      }
      const auto ms = stats::mean_stderr(vals);
      const double err = std::abs(ms.mean - limit_means[q].mean);
      if (err > best) {
        best = err;
        best_se = std::hypot(ms.se, limit_means[q].se);
      }
    }
    report.errors.push_back(best);
    report.stderrs.push_back(best_se);
  }

  std::ostringstream fp;
  fp << "weak|model=" << model.id << "|T=" << io::format_double(cfg.T)
     << "|n_paths=" << cfg.n_paths << "|seed=" << seed
     << "|dt_limit=" << io::format_double(cfg.dt_limit) << "|grid=" << join_doubles(cfg.eps_grid)
     << "|phis=";
  for (std::size_t q = 0; q < phis.size(); ++q) fp << (q ? "," : "") << phis[q].name;
  report.fingerprint = io::hex64(io::fnv1a(fp.str()));
  check_errors_finite(report, "weak_convergence");
  fit_report_slope(report);
  return report;
}

GeneratorTestFunction generator_test_function_by_name(const std::string& name) {
  if (name == "clip_quad") {
    // |x|^2 frozen outside radius 10; derivatives vanish there.
    constexpr double kR2 = 100.0;
    GeneratorTestFunction f;
    f.name = name;
    f.u = [](const Vec& x) {
      const double r2 = x.squaredNorm();
      return r2 <= kR2 ? r2 : kR2;
    };
    f.grad = [](const Vec& x, Vec& g) {
      if (x.squaredNorm() <= kR2)
        g = 2.0 * x;
      else
        g.setZero(x.size());
    };
    f.hess = [](const Vec& x, Mat& h) {
      h.setZero(x.size(), x.size());
      if (x.squaredNorm() <= kR2)
        for (Eigen::Index i = 0; i < x.size(); ++i) h(i, i) = 2.0;
    };
    return f;
  }
  if (name == "tanh_sum") {
    GeneratorTestFunction f;
    f.name = name;
    f.u = [](const Vec& x) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) s += std::tanh(x[i]);
      return s;
    };
    f.grad = [](const Vec& x, Vec& g) {
      g.resize(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double t = std::tanh(x[i]);
        g[i] = 1.0 - t * t;
      }
    };
    f.hess = [](const Vec& x, Mat& h) {
      h.setZero(x.size(), x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double t = std::tanh(x[i]);
        h(i, i) = -2.0 * t * (1.0 - t * t);
      }
    };
    return f;
  }
  throw ConfigError("generator test function: unknown name '" + name +
                    "' (known: clip_quad, tanh_sum)");
}

ResidualEstimate generator_residual(const AveragedModel& avg, const std::string& u_name,
                                    const PathEnsemble& paths, double t0, double t) {
  if (!avg.b_bar || !avg.Theta)
    throw ConfigError("generator_residual: averaged model must provide b_bar and Theta");
  if (paths.n != avg.n) throw ConfigError("generator_residual: slow dimension mismatch");
  if (paths.store_every != 1)
    throw ConfigError("generator_residual: ensemble must store every step");
  const double dt = paths.dt;
  const auto on_grid = [&](double s, const char* what) -> std::size_t {
    const double raw = s / dt;
    const long long idx = std::llround(raw);
    if (idx < 0 || std::abs(static_cast<double>(idx) * dt - s) > 1e-9 * std::max(1.0, std::abs(s)))
      throw ConfigError(std::string("generator_residual: ") + what +
                        " does not lie on the stored grid");
    return static_cast<std::size_t>(idx);
  };
  const std::size_t k0 = on_grid(t0, "t0");
  const std::size_t k1 = on_grid(t, "t");
  if (k1 < k0) throw ConfigError("generator_residual: t must be >= t0");
  if (k1 >= paths.times.size())
    throw ConfigError("generator_residual: t beyond the stored horizon");

  const GeneratorTestFunction U = generator_test_function_by_name(u_name);
  std::vector<double> defects(paths.n_paths);
  Vec x(paths.n), g(paths.n), drift(paths.n);
  Mat h(paths.n, paths.n), theta(paths.n, paths.n);
  for (int p = 0; p < paths.n_paths; ++p) {
    double acc = 0.0;
    double u_start = 0.0, u_end = 0.0;
    for (std::size_t k = k0; k <= k1; ++k) {
      for (int c = 0; c < paths.n; ++c) x[c] = paths.slow_at(p, k, c);
      if (k == k0) u_start = U.u(x);
      if (k == k1) {
        u_end = U.u(x);
        break;
      }
      U.grad(x, g);
      U.hess(x, h);
      avg.b_bar(x, drift);
      avg.Theta(x, theta);
      const Mat sig = theta * theta.transpose();
      acc += (g.dot(drift) + 0.5 * (sig.array() * h.array()).sum()) * dt;
    }
    defects[p] = u_end - u_start - acc;
  }
  const auto ms = stats::mean_stderr(defects);
  return {ms.mean, ms.se};
}

ConvergenceReport increment_suite(const ModelSpec& model, double eps,
                                  const IncrementSuiteConfig& cfg, std::uint64_t seed) {
  if (!(eps >= kMinEpsilon)) throw ConfigError("increment_suite: eps below the allowed minimum");
  if (!(cfg.T > 0.0)) throw ConfigError("increment_suite: T must be > 0");
  if (cfg.n_paths < 2) throw ConfigError("increment_suite: n_paths must be >= 2");
  check_grid(cfg.h_grid, "increment_suite", 0.0);
  const double dt = eps * kDtFastCap;
  const long long n_steps = checked_step_count(cfg.T, dt, "increment_suite");
  for (double h : cfg.h_grid) {
    if (!(h > 0.0 && h <= cfg.T / 4.0))
      throw ConfigError("increment_suite: window lengths must lie in (0, T/4]");
    const long long L = std::llround(h / dt);
    if (L < 1 || std::abs(static_cast<double>(L) * dt - h) > 1e-9 * h)
      throw ConfigError("increment_suite: window " + io::format_double(h) +
                        " is not a positive multiple of the step " + io::format_double(dt));
  }

  SimulateOptions opt;
  opt.n_threads = cfg.n_threads;
  const PathEnsemble run = simulate_slow_fast(model, eps, cfg.T, dt, cfg.n_paths, seed, opt);

  // Window anchors at 0, T/4, T/2, 3T/4; every window fits before T.
  std::vector<std::size_t> anchors;
  for (int k = 0; k < 4; ++k)
    anchors.push_back(static_cast<std::size_t>((n_steps * k) / 4));

  ConvergenceReport report;
  report.parameter = "h";
  report.grid = cfg.h_grid;
  for (double h : cfg.h_grid) {
    const std::size_t L = static_cast<std::size_t>(std::llround(h / dt));
    std::vector<std::vector<double>> sup4(anchors.size(), std::vector<double>(cfg.n_paths));
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const std::size_t k0 = anchors[a];
      for (int p = 0; p < cfg.n_paths; ++p) {
        double sup_sq = 0.0;
        for (std::size_t s = k0 + 1; s <= k0 + L; ++s) {
          double sq = 0.0;
          for (int c = 0; c < model.n; ++c) {
            const double d = run.slow_at(p, s, c) - run.slow_at(p, k0, c);
            sq += d * d;
          }
          sup_sq = std::max(sup_sq, sq);
        }
        sup4[a][p] = sup_sq * sup_sq;
      }
    }
    push_max_mean(report, sup4);
  }

  std::ostringstream fp;
  fp << "incr|model=" << model.id << "|eps=" << io::format_double(eps)
     << "|T=" << io::format_double(cfg.T) << "|n_paths=" << cfg.n_paths << "|seed=" << seed
     << "|anchors=4|grid=" << join_doubles(cfg.h_grid);
  report.fingerprint = io::hex64(io::fnv1a(fp.str()));
  check_errors_finite(report, "increment_suite");
  fit_report_slope(report);
  return report;
}

double ratio_spread(const ConvergenceReport& report) {
  if (report.parameter != "h")
    throw ConfigError("ratio_spread: expects a window-length report, got parameter '" +
                      report.parameter + "'");
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t i = 0; i < report.grid.size(); ++i) {
    if (!(report.errors[i] > 0.0))
      throw ConfigError("ratio_spread: errors must be positive");
    const double r = report.errors[i] / (report.grid[i] * report.grid[i]);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return hi / lo;
}

void write_report(const ConvergenceReport& report, const std::string& out_dir) {
  if (report.grid.size() != report.errors.size() || report.grid.size() != report.stderrs.size())
    throw ConfigError("write_report: ragged report");
  std::string csv = "grid,error,stderr\n";
  for (std::size_t i = 0; i < report.grid.size(); ++i)
    csv += io::csv_row({io::format_double(report.grid[i]), io::format_double(report.errors[i]),
                        io::format_double(report.stderrs[i])});
  nlohmann::json meta;
  meta["parameter"] = report.parameter;
  meta["fingerprint"] = report.fingerprint;
  if (report.has_slope()) {
    meta["slope"] = report.slope;
    meta["slope_residual"] = report.slope_residual;
  } else {
    meta["slope"] = nullptr;
    meta["slope_residual"] = nullptr;
  }
  meta["points"] = report.grid.size();
  const std::filesystem::path dir(out_dir);
  try {
    io::atomic_write(dir / "report.csv", csv);
    io::atomic_write(dir / "report.meta", meta.dump(2) + "\n");
  } catch (const std::filesystem::filesystem_error& e) {
    throw RuntimeError(std::string("write_report: ") + e.what());
  }
}

ConvergenceReport read_report_csv(const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  const std::string csv = io::read_file(dir / "report.csv");
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "grid,error,stderr")
    throw ConfigError("read_report_csv: unexpected header");
  ConvergenceReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    double cols[3];
    for (int c = 0; c < 3; ++c) {
      if (!std::getline(row, field, ',')) throw ConfigError("read_report_csv: short row");
      cols[c] = std::stod(field);
    }
    report.grid.push_back(cols[0]);
    report.errors.push_back(cols[1]);
    report.stderrs.push_back(cols[2]);
  }
  const std::string meta_text = io::read_file(dir / "report.meta");
  const auto meta = nlohmann::json::parse(meta_text);
  report.parameter = meta.at("parameter").get<std::string>();
  report.fingerprint = meta.at("fingerprint").get<std::string>();
  if (!meta.at("slope").is_null()) {
    report.slope = meta.at("slope").get<double>();
    report.slope_residual = meta.at("slope_residual").get<double>();
  }
  return report;
}

}  // namespace sfal
