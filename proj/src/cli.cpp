#include "sfal/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfal/averaging.hpp"
#include "sfal/coupling.hpp"
#include "sfal/errors.hpp"
#include "sfal/experiments.hpp"
#include "sfal/io.hpp"
#include "sfal/khasminskii.hpp"
#include "sfal/measures.hpp"
#include "sfal/model.hpp"
#include "sfal/rng.hpp"
#include "sfal/sde.hpp"

namespace sfal {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok.empty())
      throw ConfigError(what + ": cannot parse '" + tok + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (double v : parse_double_list(s, what)) {
    const int i = static_cast<int>(std::llround(v));
    if (static_cast<double>(i) != v) throw ConfigError(what + ": expected integers");
    out.push_back(i);
  }
  return out;
}

Vec parse_vec(const std::string& s, int dim, const std::string& what) {
  const auto xs = parse_double_list(s, what);
  if (dim >= 0 && static_cast<int>(xs.size()) != dim)
    throw ConfigError(what + ": expected " + std::to_string(dim) + " components, got " +
                      std::to_string(xs.size()));
  Vec v(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) v[static_cast<Eigen::Index>(i)] = xs[i];
  return v;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json list_to_json(const std::vector<double>& xs) {
  json a = json::array();
  for (double v : xs) a.push_back(v);
  return a;
}

json int_list_to_json(const std::vector<int>& xs) {
  json a = json::array();
  for (int v : xs) a.push_back(v);
  return a;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& what) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(what + ": unknown key '" + it.key() + "'");
}

// Zoo id, or a JSON parameter file overriding a zoo base model.
ModelSpec load_model(const std::string& arg) {
  if (arg.empty()) throw ConfigError("model: empty id");
  if (!fs::exists(arg) || !fs::is_regular_file(arg)) return model_by_name(arg);
  json doc;
  try {
    doc = json::parse(io::read_file(arg));
  } catch (const json::parse_error& e) {
    throw ConfigError("model file '" + arg + "' is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw ConfigError("model file '" + arg + "' must hold a JSON object");
  check_keys(doc, {"base", "x0", "y0", "dissipativity"}, "model file '" + arg + "'");
  if (!doc.contains("base")) throw ConfigError("model file '" + arg + "': missing 'base'");
  ModelSpec mdl = model_by_name(doc["base"].get<std::string>());
  if (doc.contains("x0")) {
    const auto xs = doc["x0"].get<std::vector<double>>();
    if (static_cast<int>(xs.size()) != mdl.n)
      throw ConfigError("model file '" + arg + "': x0 must have " + std::to_string(mdl.n) +
                        " components");
    for (int i = 0; i < mdl.n; ++i) mdl.x0[i] = xs[static_cast<std::size_t>(i)];
  }
  if (doc.contains("y0")) {
    const auto ys = doc["y0"].get<std::vector<double>>();
    if (static_cast<int>(ys.size()) != mdl.m)
      throw ConfigError("model file '" + arg + "': y0 must have " + std::to_string(mdl.m) +
                        " components");
    for (int i = 0; i < mdl.m; ++i) mdl.y0[i] = ys[static_cast<std::size_t>(i)];
  }
  if (doc.contains("dissipativity")) {
    const json& d = doc["dissipativity"];
    check_keys(d, {"C", "K", "r0", "C_star", "K1", "K2"}, "model file '" + arg + "' dissipativity");
    auto& p = mdl.dissipativity;
    if (d.contains("C")) p.C = d["C"].get<double>();
    if (d.contains("K")) p.K = d["K"].get<double>();
    if (d.contains("r0")) p.r0 = d["r0"].get<double>();
    if (d.contains("C_star")) p.C_star = d["C_star"].get<double>();
    if (d.contains("K1")) p.K1 = d["K1"].get<double>();
    if (d.contains("K2")) p.K2 = d["K2"].get<double>();
    p.validate();
  }
  return mdl;
}

// Renders one config entry as a command-line token; flags parsed later win
// because every option takes the last occurrence.
std::string config_value_to_token(const std::string& key, const json& v) {
  std::string flag = key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  std::string rendered;
  auto scalar = [&key](const json& s) -> std::string {
    if (s.is_string()) return s.get<std::string>();
    if (s.is_boolean()) return s.get<bool>() ? "true" : "false";
    if (s.is_number_unsigned()) return std::to_string(s.get<std::uint64_t>());
    if (s.is_number_integer()) return std::to_string(s.get<std::int64_t>());
    if (s.is_number_float()) return io::format_double(s.get<double>());
    throw ConfigError("config: key '" + key + "' has an unsupported value type");
  };
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) rendered += ',';
      rendered += scalar(v[i]);
    }
    if (v.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
  } else {
    rendered = scalar(v);
  }
  return "--" + flag + "=" + rendered;
}

// Reads --config (file or manifest) for the chosen subcommand and splices the
// entries in as tokens ahead of the user's flags.
void inject_config_tokens(const CLI::App& app, std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens[0].empty() || tokens[0][0] == '-') return;
  const std::string sub_name = tokens[0];
  std::string path;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (tokens[i] == "--config" && i + 1 < tokens.size())
      path = tokens[i + 1];
    else if (tokens[i].rfind("--config=", 0) == 0)
      path = tokens[i].substr(9);
  }
  if (path.empty()) return;
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(sub_name);
  } catch (const CLI::Error&) {
    return;  // unknown subcommand; the parser reports it
  }
  std::set<std::string> allowed;
  for (const CLI::Option* o : sub->get_options()) {
    for (const std::string& ln : o->get_lnames()) {
      std::string k = ln;
      std::replace(k.begin(), k.end(), '-', '_');
      allowed.insert(k);
    }
  }
  allowed.erase("config");
  allowed.erase("help");

  std::string text;
  try {
    text = io::read_file(path);
  } catch (const RuntimeError&) {
    throw ConfigError("config: cannot read '" + path + "'");
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw ConfigError("config: '" + path + "' must hold a JSON object");
  if (doc.contains("tool")) {
    if (doc.value("tool", std::string()) != "sfal" || !doc.contains("subcommand") ||
        !doc.contains("config"))
      throw ConfigError("config: '" + path + "' looks like a manifest but lacks tool/subcommand/config");
    const std::string owner = doc["subcommand"].get<std::string>();
    if (owner != sub_name)
      throw ConfigError("config: manifest '" + path + "' belongs to subcommand '" + owner +
                        "', not '" + sub_name + "'");
    doc = doc["config"];
    if (!doc.is_object()) throw ConfigError("config: manifest 'config' must hold a JSON object");
  }
  std::vector<std::string> cfg_tokens;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' for subcommand '" + sub_name +
                        "'");
    cfg_tokens.push_back(config_value_to_token(it.key(), it.value()));
  }
  tokens.insert(tokens.begin() + 1, cfg_tokens.begin(), cfg_tokens.end());
}

struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;
  std::vector<std::string> extra_names;  // written by library helpers
  std::vector<std::string> stdout_lines;
};

// Data files first, manifest last: a manifest on disk certifies a complete run.
void finalize_run(const RunConfig& rc, const json& cfg, const Outputs& outs) {
  const fs::path dir(rc.out);
  std::vector<std::string> names = outs.extra_names;
  try {
    for (const auto& [name, content] : outs.files) {
      io::atomic_write(dir / name, content);
      names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    json manifest;
    manifest["config"] = cfg;
    manifest["outputs"] = names;
    manifest["subcommand"] = rc.subcommand;
    manifest["tool"] = "sfal";
    manifest["version"] = kSfalVersion;
    io::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const fs::filesystem_error& e) {
    throw RuntimeError(std::string("cannot write outputs: ") + e.what());
  }
  std::fprintf(stderr, "[sfal] wrote %zu files to %s\n", names.size() + 1, rc.out.c_str());
  for (const std::string& line : outs.stdout_lines) std::fprintf(stdout, "%s\n", line.c_str());
}

std::string kv(const std::string& key, double v) { return key + "=" + io::format_double(v); }
std::string kv(const std::string& key, const std::string& v) { return key + "=" + v; }

json base_cfg(const RunConfig& rc) {
  json j;
  j["model"] = rc.model;
  j["seed"] = rc.seed;
  j["out"] = rc.out;
  return j;
}

int cmd_simulate(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 1.0;
  if (rc.dt <= 0.0) rc.dt = rc.eps * kDtFastCap;
  if (rc.n_paths <= 0) rc.n_paths = 4;
  SimulateOptions opt;
  opt.store_every = rc.store_every;
  opt.record_increments = rc.record_increments;
  opt.n_threads = rc.threads;
  if (!rc.x.empty()) opt.x0 = parse_vec(rc.x, mdl.n, "x");
  if (!rc.y.empty()) opt.y0 = parse_vec(rc.y, mdl.m, "y");
  const PathEnsemble run = simulate_slow_fast(mdl, rc.eps, rc.T, rc.dt, rc.n_paths, rc.seed, opt);

  json cfg = base_cfg(rc);
  cfg["eps"] = rc.eps;
  cfg["T"] = rc.T;
  cfg["dt"] = rc.dt;
  cfg["n_paths"] = rc.n_paths;
  cfg["store_every"] = rc.store_every;
  cfg["record_increments"] = rc.record_increments;
  if (!rc.x.empty()) cfg["x"] = vec_to_json(*opt.x0);
  if (!rc.y.empty()) cfg["y"] = vec_to_json(*opt.y0);

  Outputs outs;
  outs.files.emplace_back("paths.csv", ensemble_to_csv(run));
  outs.stdout_lines = {kv("n_steps", static_cast<double>(run.n_steps)),
                       kv("n_times", static_cast<double>(run.times.size()))};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_couple(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 8.0;
  if (rc.delta <= 0.0) rc.delta = 1e-3 * mdl.dissipativity.r0;
  if (rc.dt <= 0.0) rc.dt = std::min(0.01, rc.delta / 10.0);
  if (rc.n_paths <= 0) rc.n_paths = 256;
  CouplingConfig cc;
  cc.delta = rc.delta;
  cc.dt = rc.dt;
  cc.T = rc.T;
  cc.n_paths = rc.n_paths;
  cc.store_every = rc.store_every;
  cc.n_threads = rc.threads;
  cc.x1 = rc.x1.empty() ? mdl.x0 : parse_vec(rc.x1, mdl.n, "x1");
  cc.x2 = rc.x2.empty() ? mdl.x0 : parse_vec(rc.x2, mdl.n, "x2");
  cc.y1 = rc.y1.empty() ? mdl.y0 : parse_vec(rc.y1, mdl.m, "y1");
  cc.y2 = rc.y2.empty() ? Vec(mdl.y0.array() + 1.0) : parse_vec(rc.y2, mdl.m, "y2");
  const CouplingTrace trace = simulate_coupled(mdl, cc, rc.seed);
  std::vector<double> mean, se;
  trace.mean_h(mean, se);

  json cfg = base_cfg(rc);
  cfg["T"] = rc.T;
  cfg["dt"] = rc.dt;
  cfg["delta"] = trace.delta;
  cfg["n_paths"] = rc.n_paths;
  cfg["store_every"] = rc.store_every;
  cfg["x1"] = vec_to_json(cc.x1);
  cfg["x2"] = vec_to_json(cc.x2);
  cfg["y1"] = vec_to_json(cc.y1);
  cfg["y2"] = vec_to_json(cc.y2);

  Outputs outs;
  outs.files.emplace_back("coupling.csv", coupling_trace_to_csv(trace));
  outs.stdout_lines = {kv("beta", trace.constants.beta), kv("h_final", mean.back()),
                       kv("h_final_se", se.back())};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_ergodic(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.dt <= 0.0) rc.dt = 0.01;
  if (rc.n_samples <= 0) rc.n_samples = 400;
  if (rc.t_grid.empty()) rc.t_grid = "0.5,1,2,4,8";
  const Vec x = rc.x.empty() ? mdl.x0 : parse_vec(rc.x, mdl.n, "x");
  const Vec y = rc.y.empty() ? mdl.y0 : parse_vec(rc.y, mdl.m, "y");
  const std::vector<double> grid = parse_double_list(rc.t_grid, "t_grid");
  const DecayCurve curve =
      ergodic_decay_curve(mdl, x, y, grid, rc.dt, rc.n_samples, rc.seed, rc.threads);

  std::string csv = "time,w1\n";
  for (std::size_t i = 0; i < curve.times.size(); ++i)
    csv += io::csv_row({io::format_double(curve.times[i]), io::format_double(curve.values[i])});
  json meta;
  meta["fitted_rate"] = curve.fitted_rate;
  meta["noise_floor"] = curve.noise_floor;
  meta["fit_points"] = curve.fit_points;

  json cfg = base_cfg(rc);
  cfg["x"] = vec_to_json(x);
  cfg["y"] = vec_to_json(y);
  cfg["t_grid"] = list_to_json(grid);
  cfg["dt"] = rc.dt;
  cfg["n_samples"] = rc.n_samples;

  Outputs outs;
  outs.files.emplace_back("decay.csv", csv);
  outs.files.emplace_back("decay.meta", meta.dump(2) + "\n");
  outs.stdout_lines = {kv("fitted_rate", curve.fitted_rate),
                       kv("noise_floor", curve.noise_floor)};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_invariant(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.dt <= 0.0) rc.dt = 0.02;
  if (rc.n_samples <= 0) rc.n_samples = 2000;
  if (rc.burn_in <= 0.0) rc.burn_in = default_burn_in(mdl);
  const Vec x = rc.x.empty() ? mdl.x0 : parse_vec(rc.x, mdl.n, "x");
  const EmpiricalMeasure mu = invariant_measure(mdl, x, rc.burn_in, rc.n_samples, rc.thin,
                                                rc.dt, rc.seed, 1, rc.threads);

  json cfg = base_cfg(rc);
  cfg["x"] = vec_to_json(x);
  cfg["burn_in"] = rc.burn_in;
  cfg["n_samples"] = rc.n_samples;
  cfg["thin"] = rc.thin;
  cfg["dt"] = rc.dt;

  Outputs outs;
  outs.files.emplace_back("measure.csv", measure_to_csv(mu));
  outs.files.emplace_back("measure.meta.json", measure_meta_json(mu));
  outs.stdout_lines = {kv("n", static_cast<double>(mu.n())), kv("mean_abs", mu.mean_abs())};
  finalize_run(rc, cfg, outs);
  return 0;
}

TabulationConfig tab_config_from(const RunConfig& rc, const ModelSpec& mdl, int cloud_size,
                                 double tab_dt, bool want_sigma) {
  TabulationConfig tc;
  tc.x_lo = parse_double_list(rc.x_lo, "x_lo");
  tc.x_hi = parse_double_list(rc.x_hi, "x_hi");
  tc.nodes = parse_int_list(rc.nodes, "nodes");
  tc.n_samples = cloud_size;
  tc.burn_in = rc.burn_in > 0.0 ? rc.burn_in : default_burn_in(mdl);
  tc.dt = tab_dt;
  tc.seed = rng::derive_seed(rc.seed, 777);
  tc.want_sigma = want_sigma;
  tc.cache_dir = rc.cache_dir.empty() ? (fs::path(rc.out) / "cache").string() : rc.cache_dir;
  tc.n_threads = rc.threads;
  return tc;
}

void tab_cfg_to_json(const TabulationConfig& tc, json& cfg) {
  cfg["x_lo"] = list_to_json(tc.x_lo);
  cfg["x_hi"] = list_to_json(tc.x_hi);
  cfg["nodes"] = int_list_to_json(tc.nodes);
  cfg["burn_in"] = tc.burn_in;
  cfg["cache_dir"] = tc.cache_dir;
}

int cmd_average(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.dt <= 0.0) rc.dt = 0.02;
  if (rc.n_samples <= 0) rc.n_samples = 2000;
  const TabulationConfig tc = tab_config_from(rc, mdl, rc.n_samples, rc.dt, rc.want_sigma);
  const AveragedTable table = tabulate_averaged_coefficients(mdl, tc);
  std::fprintf(stderr, "[sfal] averaged table: %lld nodes, cache_hit=%d\n", table.total_nodes(),
               table.cache_hit ? 1 : 0);

  json cfg = base_cfg(rc);
  tab_cfg_to_json(tc, cfg);
  cfg["n_samples"] = rc.n_samples;
  cfg["dt"] = rc.dt;
  cfg["want_sigma"] = rc.want_sigma;

  Outputs outs;
  outs.files.emplace_back("table.csv", averaged_table_to_csv(table));
  outs.stdout_lines = {kv("nodes", static_cast<double>(table.total_nodes()))};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_khasminskii(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 1.0;
  if (rc.dt <= 0.0) rc.dt = rc.eps * kDtFastCap;
  if (rc.n_paths <= 0) rc.n_paths = 200;
  SimulateOptions opt;
  opt.store_every = 1;
  opt.record_increments = true;
  opt.n_threads = rc.threads;
  const PathEnsemble driving =
      simulate_slow_fast(mdl, rc.eps, rc.T, rc.dt, rc.n_paths, rc.seed, opt);
  BlockSchedule schedule;
  if (rc.delta > 0.0) {
    schedule.delta = rc.delta;
    schedule.T = rc.T;
  } else {
    schedule = default_schedule(rc.eps, rc.T, rc.dt);
  }
  const AuxiliaryEnsemble aux = auxiliary_path(mdl, rc.eps, schedule, driving, rc.threads);
  const SupGap gap = mean_sup_gap(driving, aux);

  json cfg = base_cfg(rc);
  cfg["eps"] = rc.eps;
  cfg["T"] = rc.T;
  cfg["dt"] = rc.dt;
  cfg["delta"] = schedule.delta;
  cfg["n_paths"] = rc.n_paths;

  Outputs outs;
  outs.files.emplace_back("khasminskii.csv", khasminskii_to_csv(driving, aux));
  outs.stdout_lines = {kv("delta", schedule.delta), kv("sup_gap", gap.mean),
                       kv("sup_gap_se", gap.se)};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_strong_converge(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 1.0;
  if (rc.n_paths <= 0) rc.n_paths = 2000;
  if (rc.eps_grid.empty())
    rc.eps_grid = "0.25,0.125,0.0625,0.03125,0.015625,0.0078125,0.00390625";
  if (rc.x_lo.empty()) rc.x_lo = "-8";
  if (rc.x_hi.empty()) rc.x_hi = "8";
  if (rc.nodes.empty()) rc.nodes = "17";
  const TabulationConfig tc = tab_config_from(rc, mdl, rc.tab_samples, rc.tab_dt, false);
  std::fprintf(stderr, "[sfal] tabulating averaged drift for %s\n", mdl.id.c_str());
  const AveragedModel avg = tabulate_averaged_model(mdl, tc);

  StrongConvergenceConfig sc;
  sc.eps_grid = parse_double_list(rc.eps_grid, "eps_grid");
  sc.T = rc.T;
  sc.n_paths = rc.n_paths;
  sc.n_threads = rc.threads;
  const ConvergenceReport report = strong_convergence(mdl, avg, sc, rc.seed);
  write_report(report, rc.out);

  json cfg = base_cfg(rc);
  tab_cfg_to_json(tc, cfg);
  cfg["eps_grid"] = list_to_json(sc.eps_grid);
  cfg["T"] = rc.T;
  cfg["n_paths"] = rc.n_paths;
  cfg["tab_samples"] = rc.tab_samples;
  cfg["tab_dt"] = rc.tab_dt;

  Outputs outs;
  outs.extra_names = {"report.csv", "report.meta"};
  outs.stdout_lines = {kv("slope", report.slope), kv("fingerprint", report.fingerprint)};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_weak_converge(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 1.0;
  if (rc.n_paths <= 0) rc.n_paths = 4000;
  if (rc.eps_grid.empty()) rc.eps_grid = "0.25,0.0625,0.015625,0.00390625";
  if (rc.x_lo.empty()) rc.x_lo = "-8";
  if (rc.x_hi.empty()) rc.x_hi = "8";
  if (rc.nodes.empty()) rc.nodes = "17";
  const TabulationConfig tc = tab_config_from(rc, mdl, rc.tab_samples, rc.tab_dt, true);
  std::fprintf(stderr, "[sfal] tabulating averaged coefficients for %s\n", mdl.id.c_str());
  const AveragedModel avg = tabulate_averaged_model(mdl, tc);

  WeakConvergenceConfig wc;
  wc.eps_grid = parse_double_list(rc.eps_grid, "eps_grid");
  wc.T = rc.T;
  wc.n_paths = rc.n_paths;
  wc.dt_limit = rc.dt_limit;
  wc.n_threads = rc.threads;
  const ConvergenceReport report =
      weak_convergence(mdl, avg, default_phi_set(mdl.n), wc, rc.seed);
  write_report(report, rc.out);

  json cfg = base_cfg(rc);
  tab_cfg_to_json(tc, cfg);
  cfg["eps_grid"] = list_to_json(wc.eps_grid);
  cfg["T"] = rc.T;
  cfg["n_paths"] = rc.n_paths;
  cfg["dt_limit"] = rc.dt_limit;
  cfg["tab_samples"] = rc.tab_samples;
  cfg["tab_dt"] = rc.tab_dt;

  Outputs outs;
  outs.extra_names = {"report.csv", "report.meta"};
  outs.stdout_lines = {kv("error_head", report.errors.front()),
                       kv("error_tail", report.errors.back())};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_residual(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 1.0;
  if (rc.dt <= 0.0) rc.dt = 0.01;
  if (rc.n_paths <= 0) rc.n_paths = 4000;
  if (rc.t1 <= 0.0) rc.t1 = rc.T;
  if (rc.x_lo.empty()) rc.x_lo = "-8";
  if (rc.x_hi.empty()) rc.x_hi = "8";
  if (rc.nodes.empty()) rc.nodes = "17";
  const TabulationConfig tc = tab_config_from(rc, mdl, rc.tab_samples, rc.tab_dt, true);
  std::fprintf(stderr, "[sfal] tabulating averaged coefficients for %s\n", mdl.id.c_str());
  const AveragedModel avg = tabulate_averaged_model(mdl, tc);

  AveragedRunConfig arc;
  arc.x0 = mdl.x0;
  arc.T = rc.T;
  arc.dt = rc.dt;
  arc.n_paths = rc.n_paths;
  arc.store_every = 1;
  arc.n_threads = rc.threads;
  const PathEnsemble paths =
      simulate_averaged(avg, AveragedKind::kWeak, arc, rng::derive_seed(rc.seed, 1));
  const ResidualEstimate est = generator_residual(avg, rc.u, paths, rc.t0, rc.t1);

  json cfg = base_cfg(rc);
  tab_cfg_to_json(tc, cfg);
  cfg["T"] = rc.T;
  cfg["dt"] = rc.dt;
  cfg["n_paths"] = rc.n_paths;
  cfg["u"] = rc.u;
  cfg["t0"] = rc.t0;
  cfg["t1"] = rc.t1;
  cfg["tab_samples"] = rc.tab_samples;
  cfg["tab_dt"] = rc.tab_dt;

  Outputs outs;
  outs.files.emplace_back(
      "residual.csv",
      "value,se\n" + io::csv_row({io::format_double(est.value), io::format_double(est.se)}));
  outs.stdout_lines = {kv("value", est.value), kv("se", est.se)};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_increments(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  if (rc.T <= 0.0) rc.T = 0.5;
  if (rc.n_paths <= 0) rc.n_paths = 2000;
  if (rc.h_grid.empty()) rc.h_grid = "0.04,0.02,0.01";
  IncrementSuiteConfig ic;
  ic.h_grid = parse_double_list(rc.h_grid, "h_grid");
  ic.T = rc.T;
  ic.n_paths = rc.n_paths;
  ic.n_threads = rc.threads;
  const ConvergenceReport report = increment_suite(mdl, rc.eps, ic, rc.seed);
  write_report(report, rc.out);

  bool positive = true;
  for (double e : report.errors) positive = positive && e > 0.0;
  const double spread = positive ? ratio_spread(report) : std::numeric_limits<double>::quiet_NaN();

  json cfg = base_cfg(rc);
  cfg["eps"] = rc.eps;
  cfg["T"] = rc.T;
  cfg["h_grid"] = list_to_json(ic.h_grid);
  cfg["n_paths"] = rc.n_paths;

  Outputs outs;
  outs.extra_names = {"report.csv", "report.meta"};
  outs.stdout_lines = {kv("ratio_spread", spread), kv("slope", report.slope)};
  finalize_run(rc, cfg, outs);
  return 0;
}

int cmd_validate_model(RunConfig& rc) {
  const ModelSpec mdl = load_model(rc.model);
  SamplerBounds bounds;
  bounds.t_max = rc.t_max;
  bounds.x_box = rc.x_box;
  bounds.y_box = rc.y_box;
  const ValidationReport rep = validate_partial_dissipativity(mdl, bounds, rc.n_pairs, rc.seed);

  json result;
  result["n_pairs"] = rep.n_pairs;
  result["violations_contraction"] = rep.violations_contraction;
  result["violations_growth"] = rep.violations_growth;
  result["worst_margin_contraction"] = rep.worst_margin_contraction;
  result["worst_margin_growth"] = rep.worst_margin_growth;
  result["passed"] = rep.passed();

  json cfg = base_cfg(rc);
  cfg["n_pairs"] = rc.n_pairs;
  cfg["t_max"] = rc.t_max;
  cfg["x_box"] = rc.x_box;
  cfg["y_box"] = rc.y_box;

  Outputs outs;
  outs.files.emplace_back("validation.json", result.dump(2) + "\n");
  outs.stdout_lines = {kv("worst_margin_contraction", rep.worst_margin_contraction),
                       kv("worst_margin_growth", rep.worst_margin_growth),
                       kv("passed", rep.passed() ? "true" : "false")};
  finalize_run(rc, cfg, outs);
  return rep.passed() ? 0 : 1;
}

template <typename T>
CLI::Option* add_opt(CLI::App* cmd, const std::string& flag, T& var, const std::string& desc) {
  return cmd->add_option(flag, var, desc)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

CLI::Option* add_switch(CLI::App* cmd, const std::string& flag, bool& var,
                        const std::string& desc) {
  return cmd->add_flag(flag, var, desc)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

void add_common(CLI::App* cmd, RunConfig& rc) {
  add_opt(cmd, "--model", rc.model, "zoo model id or JSON parameter file")->required();
  add_opt(cmd, "--config", rc.config_path, "JSON config file or a previous manifest.json");
  add_opt(cmd, "--seed", rc.seed, "RNG seed");
  add_opt(cmd, "--out", rc.out, "output directory (default sfal-out/<subcommand>)");
  add_opt(cmd, "--threads", rc.threads, "worker threads (0 = SFAL_THREADS, then hardware)");
}

void add_tabulation(CLI::App* cmd, RunConfig& rc) {
  add_opt(cmd, "--x-lo", rc.x_lo, "averaged-table box lower corner");
  add_opt(cmd, "--x-hi", rc.x_hi, "averaged-table box upper corner");
  add_opt(cmd, "--nodes", rc.nodes, "averaged-table nodes per dimension");
  add_opt(cmd, "--tab-samples", rc.tab_samples, "invariant cloud size per table node");
  add_opt(cmd, "--tab-dt", rc.tab_dt, "step for the table's frozen chains");
  add_opt(cmd, "--burn-in", rc.burn_in, "burn-in for the table's frozen chains (0 = auto)");
  add_opt(cmd, "--cache-dir", rc.cache_dir, "table cache directory (default <out>/cache)");
}

void build_subcommands(CLI::App& app, RunConfig& rc) {
  CLI::App* sim = app.add_subcommand("simulate", "integrate the full slow-fast system");
  add_common(sim, rc);
  add_opt(sim, "--eps", rc.eps, "timescale separation");
  add_opt(sim, "--T", rc.T, "horizon (default 1)");
  add_opt(sim, "--dt", rc.dt, "step (default eps/50)");
  add_opt(sim, "--n-paths", rc.n_paths, "paths (default 4)");
  add_opt(sim, "--store-every", rc.store_every, "store every k-th step");
  add_switch(sim, "--record-increments", rc.record_increments, "keep fast-noise increments");
  add_opt(sim, "--x", rc.x, "slow initial state override");
  add_opt(sim, "--y", rc.y, "fast initial state override");

  CLI::App* cpl = app.add_subcommand("couple", "reflection-couple two frozen fast copies");
  add_common(cpl, rc);
  add_opt(cpl, "--T", rc.T, "horizon (default 8)");
  add_opt(cpl, "--dt", rc.dt, "step (default 0.01)");
  add_opt(cpl, "--delta", rc.delta, "mollifier width (default 1e-3 r0)");
  add_opt(cpl, "--n-paths", rc.n_paths, "coupled pairs (default 256)");
  add_opt(cpl, "--store-every", rc.store_every, "store every k-th step");
  add_opt(cpl, "--x1", rc.x1, "frozen slow value of the first copy");
  add_opt(cpl, "--x2", rc.x2, "frozen slow value of the second copy");
  add_opt(cpl, "--y1", rc.y1, "initial fast state of the first copy");
  add_opt(cpl, "--y2", rc.y2, "initial fast state of the second copy");

  CLI::App* erg = app.add_subcommand("ergodic", "W1 decay of the frozen law toward its target");
  add_common(erg, rc);
  add_opt(erg, "--x", rc.x, "frozen slow value");
  add_opt(erg, "--y", rc.y, "initial fast state");
  add_opt(erg, "--t-grid", rc.t_grid, "evaluation times (default 0.5,1,2,4,8)");
  add_opt(erg, "--dt", rc.dt, "step (default 0.01)");
  add_opt(erg, "--n-samples", rc.n_samples, "cloud size (default 400)");

  CLI::App* inv = app.add_subcommand("invariant", "sample the frozen invariant measure");
  add_common(inv, rc);
  add_opt(inv, "--x", rc.x, "frozen slow value");
  add_opt(inv, "--burn-in", rc.burn_in, "chain burn-in (0 = auto)");
  add_opt(inv, "--n-samples", rc.n_samples, "cloud size (default 2000)");
  add_opt(inv, "--thin", rc.thin, "steps between retained samples");
  add_opt(inv, "--dt", rc.dt, "step (default 0.02)");

  CLI::App* avg = app.add_subcommand("average", "tabulate averaged coefficients on a grid");
  add_common(avg, rc);
  add_opt(avg, "--x-lo", rc.x_lo, "box lower corner")->required();
  add_opt(avg, "--x-hi", rc.x_hi, "box upper corner")->required();
  add_opt(avg, "--nodes", rc.nodes, "nodes per dimension")->required();
  add_opt(avg, "--n-samples", rc.n_samples, "invariant cloud size per node (default 2000)");
  add_opt(avg, "--burn-in", rc.burn_in, "chain burn-in (0 = auto)");
  add_opt(avg, "--dt", rc.dt, "step for the frozen chains (default 0.02)");
  add_switch(avg, "--want-sigma", rc.want_sigma, "also tabulate the averaged diffusion");
  add_opt(avg, "--cache-dir", rc.cache_dir, "table cache directory (default <out>/cache)");

  CLI::App* kha = app.add_subcommand("khasminskii", "block-frozen auxiliary fast process");
  add_common(kha, rc);
  add_opt(kha, "--eps", rc.eps, "timescale separation");
  add_opt(kha, "--T", rc.T, "horizon (default 1)");
  add_opt(kha, "--dt", rc.dt, "step (default eps/50)");
  add_opt(kha, "--delta", rc.delta, "block length (default eps^(2/3) snapped to the grid)");
  add_opt(kha, "--n-paths", rc.n_paths, "paths (default 200)");

  CLI::App* str = app.add_subcommand("strong-converge", "pathwise error sweep along an eps grid");
  add_common(str, rc);
  add_opt(str, "--eps-grid", rc.eps_grid, "strictly decreasing eps values");
  add_opt(str, "--T", rc.T, "horizon (default 1)");
  add_opt(str, "--n-paths", rc.n_paths, "paths per grid point (default 2000)");
  add_tabulation(str, rc);

  CLI::App* wek = app.add_subcommand("weak-converge", "law error at time T along an eps grid");
  add_common(wek, rc);
  add_opt(wek, "--eps-grid", rc.eps_grid, "strictly decreasing eps values");
  add_opt(wek, "--T", rc.T, "horizon (default 1)");
  add_opt(wek, "--n-paths", rc.n_paths, "paths per ensemble (default 4000)");
  add_opt(wek, "--dt-limit", rc.dt_limit, "step for the limit ensemble");
  add_tabulation(wek, rc);

  CLI::App* res = app.add_subcommand("residual", "martingale-problem defect of the averaged law");
  add_common(res, rc);
  add_opt(res, "--T", rc.T, "horizon (default 1)");
  add_opt(res, "--dt", rc.dt, "step for the averaged ensemble (default 0.01)");
  add_opt(res, "--n-paths", rc.n_paths, "paths (default 4000)");
  add_opt(res, "--u", rc.u, "test function: clip_quad or tanh_sum");
  add_opt(res, "--t0", rc.t0, "window start (default 0)");
  add_opt(res, "--t1", rc.t1, "window end (default T)");
  add_tabulation(res, rc);

  CLI::App* inc = app.add_subcommand("increments", "fourth-moment modulus of the slow component");
  add_common(inc, rc);
  add_opt(inc, "--eps", rc.eps, "timescale separation");
  add_opt(inc, "--T", rc.T, "horizon (default 0.5)");
  add_opt(inc, "--h-grid", rc.h_grid, "window lengths (default 0.04,0.02,0.01)");
  add_opt(inc, "--n-paths", rc.n_paths, "paths (default 2000)");

  CLI::App* val = app.add_subcommand("validate-model", "check the two-regime drift bounds");
  add_common(val, rc);
  add_opt(val, "--n-pairs", rc.n_pairs, "random probes (default 20000)");
  add_opt(val, "--t-max", rc.t_max, "time box for probes");
  add_opt(val, "--x-box", rc.x_box, "slow-state box half-width");
  add_opt(val, "--y-box", rc.y_box, "fast-state box half-width");
}

int dispatch(RunConfig& rc) {
  if (rc.out.empty()) rc.out = "sfal-out/" + rc.subcommand;
  std::fprintf(stderr, "[sfal] %s: model=%s seed=%llu\n", rc.subcommand.c_str(),
               rc.model.c_str(), static_cast<unsigned long long>(rc.seed));
  if (rc.subcommand == "simulate") return cmd_simulate(rc);
  if (rc.subcommand == "couple") return cmd_couple(rc);
  if (rc.subcommand == "ergodic") return cmd_ergodic(rc);
  if (rc.subcommand == "invariant") return cmd_invariant(rc);
  if (rc.subcommand == "average") return cmd_average(rc);
  if (rc.subcommand == "khasminskii") return cmd_khasminskii(rc);
  if (rc.subcommand == "strong-converge") return cmd_strong_converge(rc);
  if (rc.subcommand == "weak-converge") return cmd_weak_converge(rc);
  if (rc.subcommand == "residual") return cmd_residual(rc);
  if (rc.subcommand == "increments") return cmd_increments(rc);
  if (rc.subcommand == "validate-model") return cmd_validate_model(rc);
  throw ConfigError("unknown subcommand '" + rc.subcommand + "'");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  RunConfig rc;
  CLI::App app("simulation and verification toolkit for slow-fast SDE averaging", "sfal");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kSfalVersion));
  app.failure_message(CLI::FailureMessage::help);
  build_subcommands(app, rc);

  std::vector<std::string> tokens;
  for (int i = 1; i < argc; ++i) tokens.emplace_back(argv[i]);
  try {
    inject_config_tokens(app, tokens);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  std::vector<const char*> cargv;
  cargv.push_back(argc > 0 && argv[0] != nullptr ? argv[0] : "sfal");
  for (const std::string& t : tokens) cargv.push_back(t.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  rc.subcommand = app.get_subcommands().front()->get_name();

  try {
    return dispatch(rc);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const RuntimeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace sfal
