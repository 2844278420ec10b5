#include "sfal/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "sfal/errors.hpp"
#include "sfal/io.hpp"
#include "sfal/parallel.hpp"
#include "sfal/rng.hpp"
#include "sfal/stats.hpp"

namespace sfal {

namespace {

// Fixed probe times for the sup-over-t in the residual operations.
const std::vector<double> kResidualProbeTimes{0.0, 2.5, 5.0, 7.5, 10.0, 15.0, 20.0};

double simpson(const std::function<double(double)>& g, double a, double b, long long panels) {
  const double h = (b - a) / static_cast<double>(panels);
  double sum = 0.0;
  for (long long i = 0; i <= panels; ++i) {
    const double s = a + static_cast<double>(i) * h;
    const double v = g(s);
    if (!std::isfinite(v)) throw RuntimeError("cesaro_average: integrand is not finite");
    const double w = (i == 0 || i == panels) ? 1.0 : ((i % 2) ? 4.0 : 2.0);
    sum += w * v;
  }
  return sum * h / 3.0;
}

void check_measure_label(const char* what, const EmpiricalMeasure& mu,
                         const std::string& kind, const ModelSpec& model, const Vec& x) {
  if (mu.meta.kind != kind)
    throw ConfigError(std::string(what) + ": expects a cloud of kind '" + kind + "', got '" +
                      mu.meta.kind + "'");
  if (mu.meta.model_id != model.id)
    throw ConfigError(std::string(what) + ": cloud belongs to model '" + mu.meta.model_id +
                      "', not '" + model.id + "'");
  if (mu.meta.x.size() != x.size() || (mu.meta.x - x).norm() > 1e-9 * (1.0 + x.norm()))
    throw ConfigError(std::string(what) + ": cloud was built for a different x");
  if (mu.dim() != model.m)
    throw ConfigError(std::string(what) + ": cloud dimension does not match the model");
}

DriftEstimate cloud_mean(const std::function<void(const Vec&, Vec&)>& eval,
                         const EmpiricalMeasure& mu, int n) {
  DriftEstimate est;
  est.value = Vec::Zero(n);
  est.se = Vec::Zero(n);
  Vec out(n);
  Mat acc(mu.n(), n);
  for (int i = 0; i < mu.n(); ++i) {
    eval(mu.samples.row(i).transpose(), out);
    acc.row(i) = out.transpose();
  }
  for (int c = 0; c < n; ++c) {
    const double mean = acc.col(c).mean();
    est.value[c] = mean;
    if (mu.n() > 1) {
      const double ss = (acc.col(c).array() - mean).square().sum();
      est.se[c] = std::sqrt(ss / (mu.n() - 1) / mu.n());
    }
  }
  return est;
}

long long flat_index(const std::vector<int>& nodes, const std::vector<int>& idx) {
  long long flat = 0;
  for (std::size_t j = 0; j < nodes.size(); ++j)
    flat = flat * nodes[j] + idx[j];
  return flat;
}

std::string table_cache_key(const ModelSpec& model, const TabulationConfig& cfg,
                            double burn) {
  std::ostringstream key;
  key << model.id;
  auto put = [&key](double v) { key << "|" << io::format_double(v); };
  for (double v : cfg.x_lo) put(v);
  for (double v : cfg.x_hi) put(v);
  for (int v : cfg.nodes) key << "|" << v;
  key << "|" << cfg.n_samples;
  put(burn);
  put(cfg.dt);
  key << "|" << cfg.seed << "|" << (cfg.want_sigma ? 1 : 0);
  return key.str();
}

void validate_tab_config(const ModelSpec& model, const TabulationConfig& cfg) {
  const std::size_t dims = static_cast<std::size_t>(model.n);
  if (cfg.x_lo.size() != dims || cfg.x_hi.size() != dims || cfg.nodes.size() != dims)
    throw ConfigError("tabulation: x_lo, x_hi, nodes must each have one entry per slow dimension");
  long long total = 1;
  for (std::size_t j = 0; j < dims; ++j) {
    if (cfg.nodes[j] < 2) throw ConfigError("tabulation: need at least 2 nodes per dimension");
    if (!(cfg.x_lo[j] < cfg.x_hi[j])) throw ConfigError("tabulation: x_lo must be below x_hi");
    total *= cfg.nodes[j];
    if (total > 100000) throw ConfigError("tabulation: grid exceeds 100000 nodes");
  }
  if (cfg.n_samples < 2) throw ConfigError("tabulation: need at least 2 samples per node");
}

// Multilinear interpolation weights: cell index and fraction per dimension.
struct CellLocator {
  std::vector<int> base;
  std::vector<double> frac;
};

CellLocator locate(const AveragedTable& t, const Vec& x) {
  const std::size_t dims = t.nodes.size();
  if (static_cast<std::size_t>(x.size()) != dims)
    throw ConfigError("averaged model: query dimension mismatch");
  CellLocator loc;
  loc.base.resize(dims);
  loc.frac.resize(dims);
  for (std::size_t j = 0; j < dims; ++j) {
    const double lo = t.x_lo[j], hi = t.x_hi[j];
    const double tol = 1e-12 * (1.0 + std::abs(lo) + std::abs(hi));
    if (x[static_cast<Eigen::Index>(j)] < lo - tol || x[static_cast<Eigen::Index>(j)] > hi + tol)
      throw RuntimeError("averaged model: x outside the tabulated box; extend the grid");
    double u = (x[static_cast<Eigen::Index>(j)] - lo) / (hi - lo) *
               static_cast<double>(t.nodes[j] - 1);
    u = std::clamp(u, 0.0, static_cast<double>(t.nodes[j] - 1));
    int i0 = std::min(static_cast<int>(u), t.nodes[j] - 2);
    loc.base[j] = i0;
    loc.frac[j] = u - static_cast<double>(i0);
  }
  return loc;
}

Eigen::RowVectorXd interp_rows(const AveragedTable& t, const Mat& values, const Vec& x) {
  const CellLocator loc = locate(t, x);
  const std::size_t dims = t.nodes.size();
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(values.cols());
  const unsigned corners = 1u << dims;
  std::vector<int> idx(dims);
  for (unsigned c = 0; c < corners; ++c) {
    double w = 1.0;
    for (std::size_t j = 0; j < dims; ++j) {
      const bool hi = (c >> j) & 1u;
      idx[j] = loc.base[j] + (hi ? 1 : 0);
      w *= hi ? loc.frac[j] : 1.0 - loc.frac[j];
    }
    if (w != 0.0) out += w * values.row(flat_index(t.nodes, idx));
  }
  return out;
}

}  // namespace

double cesaro_average(const std::function<double(double)>& g, double t, double T) {
  if (!(T > 0.0)) throw ConfigError("cesaro_average: T must be positive");
  long long panels = 8;
  double prev = simpson(g, t, t + T, panels);
  for (int iter = 0; iter < 20; ++iter) {
    panels *= 2;
    const double cur = simpson(g, t, t + T, panels);
    if (std::abs(cur - prev) <= 1e-8 * std::max(1.0, std::abs(cur))) return cur / T;
    prev = cur;
  }
  throw RuntimeError("cesaro_average: quadrature did not converge to 1e-8");
}

ResidualCurve b_hat_residual(const ModelSpec& model, const Vec& x, const Vec& y,
                             const std::vector<double>& T_grid) {
  if (!model.has_b_hat()) throw ConfigError("b_hat_residual: model has no b_hat");
  Vec hat(model.n);
  model.b_hat(x, y, hat);
  ResidualCurve curve;
  curve.T_grid = T_grid;
  const double scale = 1.0 + x.norm() + y.norm();
  for (double T : T_grid) {
    double worst = 0.0;
    for (double t0 : kResidualProbeTimes) {
      Vec avg(model.n);
      for (int c = 0; c < model.n; ++c) {
        avg[c] = cesaro_average(
            [&](double s) {
              Vec out(model.n);
              model.b(s, x, y, out);
              return out[c] - hat[c];
            },
            t0, T);
      }
      worst = std::max(worst, avg.norm());
    }
    curve.values.push_back(worst / scale);
  }
  return curve;
}

ResidualCurve sigma_bar_residual(const ModelSpec& model, const Vec& x,
                                 const std::vector<double>& T_grid) {
  if (!model.sigma_y_independent)
    throw ConfigError("sigma_bar_residual: sigma depends on the fast variable");
  if (!model.has_sigma_bar()) throw ConfigError("sigma_bar_residual: model has no sigma_bar");
  Mat bar(model.n, model.d);
  model.sigma_bar(x, bar);
  const Vec y0 = Vec::Zero(model.m);
  ResidualCurve curve;
  curve.T_grid = T_grid;
  const double scale = 1.0 + x.squaredNorm();
  for (double T : T_grid) {
    double worst = 0.0;
    for (double t0 : kResidualProbeTimes) {
      const double avg = cesaro_average(
          [&](double s) {
            Mat sig(model.n, model.d);
            model.sigma(s, x, y0, sig);
            return (sig - bar).squaredNorm();
          },
          t0, T);
      worst = std::max(worst, avg);
    }
    curve.values.push_back(worst / scale);
  }
  return curve;
}

ResidualCurve Sigma_residual(const ModelSpec& model, const Vec& x, const Vec& y,
                             const std::vector<double>& T_grid) {
  if (!model.has_Sigma()) throw ConfigError("Sigma_residual: model has no Sigma");
  Mat limit(model.n, model.n);
  model.Sigma(x, y, limit);
  ResidualCurve curve;
  curve.T_grid = T_grid;
  const double scale = 1.0 + x.squaredNorm();
  for (double T : T_grid) {
    double worst = 0.0;
    for (double t0 : kResidualProbeTimes) {
      Mat avg(model.n, model.n);
      for (int r = 0; r < model.n; ++r)
        for (int c = 0; c < model.n; ++c)
          avg(r, c) = cesaro_average(
              [&](double s) {
                Mat sig(model.n, model.d);
                model.sigma(s, x, y, sig);
                return (sig * sig.transpose())(r, c) - limit(r, c);
              },
              t0, T);
      worst = std::max(worst, avg.norm());
    }
    curve.values.push_back(worst / scale);
  }
  return curve;
}

DriftEstimate averaged_drift_evolution(const ModelSpec& model, double t, const Vec& x,
                                       const EmpiricalMeasure& mu) {
  check_measure_label("averaged_drift_evolution", mu, "evolution", model, x);
  if (std::abs(mu.meta.t - t) > 1e-9 * std::max(1.0, std::abs(t)))
    throw ConfigError("averaged_drift_evolution: cloud is labeled with a different t");
  return cloud_mean([&](const Vec& y, Vec& out) { model.b(t, x, y, out); }, mu, model.n);
}

DriftEstimate averaged_drift(const ModelSpec& model, const Vec& x,
                             const EmpiricalMeasure& mu) {
  if (!model.has_b_hat()) throw ConfigError("averaged_drift: model has no b_hat");
  check_measure_label("averaged_drift", mu, "invariant", model, x);
  return cloud_mean([&](const Vec& y, Vec& out) { model.b_hat(x, y, out); }, mu, model.n);
}

SigmaEstimate averaged_Sigma(const ModelSpec& model, const Vec& x,
                             const EmpiricalMeasure& mu) {
  if (!model.has_Sigma()) throw ConfigError("averaged_Sigma: model has no Sigma");
  check_measure_label("averaged_Sigma", mu, "invariant", model, x);

  SigmaEstimate est;
  est.value = Mat::Zero(model.n, model.n);
  Mat m2 = Mat::Zero(model.n, model.n);
  Mat probe(model.n, model.n);
  for (int i = 0; i < mu.n(); ++i) {
    model.Sigma(x, mu.samples.row(i).transpose(), probe);
    est.value += probe;
    m2 += probe.cwiseProduct(probe);
  }
  const double nn = static_cast<double>(mu.n());
  est.value /= nn;
  est.se = ((m2 / nn - est.value.cwiseProduct(est.value)).cwiseMax(0.0) / nn).cwiseSqrt();

  est.value = 0.5 * (est.value + est.value.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> eig(est.value);
  const double floor = eig.eigenvalues().minCoeff();
  if (floor < -1e-10)
    throw RuntimeError("averaged_Sigma: estimate is indefinite beyond tolerance");
  if (floor < 0.0) {
    Vec lam = eig.eigenvalues().cwiseMax(0.0);
    est.value = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  }
  return est;
}

Mat psd_sqrt(const Mat& a) {
  if (a.rows() != a.cols()) throw ConfigError("psd_sqrt: matrix must be square");
  const double scale = 1.0 + a.norm();
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ConfigError("psd_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (a + a.transpose()));
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
    throw RuntimeError("psd_sqrt: matrix has a negative eigenvalue beyond tolerance");
  const Vec lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Mat root = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  root = 0.5 * (root + root.transpose()).eval();
  if ((root * root - a).norm() > 1e-10 * scale)
    throw RuntimeError("psd_sqrt: residual check failed");
  return root;
}

long long AveragedTable::total_nodes() const {
  long long total = 1;
  for (int k : nodes) total *= k;
  return total;
}

Vec AveragedTable::node_coord(long long flat) const {
  Vec x(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t j = nodes.size(); j-- > 0;) {
    const long long i = flat % nodes[j];
    flat /= nodes[j];
    x[static_cast<Eigen::Index>(j)] =
        x_lo[j] + static_cast<double>(i) * (x_hi[j] - x_lo[j]) / (nodes[j] - 1);
  }
  return x;
}

std::string averaged_table_to_csv(const AveragedTable& table) {
  std::string out;
  const std::size_t dims = table.nodes.size();
  for (std::size_t j = 0; j < dims; ++j) out += (j ? ",x" : "x") + std::to_string(j);
  for (int c = 0; c < table.n; ++c) out += ",b_bar" + std::to_string(c);
  const bool with_sigma = table.sigma_values.size() > 0;
  if (with_sigma)
    for (int r = 0; r < table.n; ++r)
      for (int c = 0; c < table.n; ++c)
        out += ",Sigma_" + std::to_string(r) + "_" + std::to_string(c);
  out += "\n";
  for (long long row = 0; row < table.total_nodes(); ++row) {
    const Vec x = table.node_coord(row);
    for (Eigen::Index j = 0; j < x.size(); ++j)
      out += (j ? "," : "") + io::format_double(x[j]);
    for (int c = 0; c < table.n; ++c) out += "," + io::format_double(table.b_values(row, c));
    if (with_sigma)
      for (int c = 0; c < table.n * table.n; ++c)
        out += "," + io::format_double(table.sigma_values(row, c));
    out += "\n";
  }
  return out;
}

AveragedTable averaged_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("averaged table: empty file");
  int dims = 0, nb = 0, nsig = 0;
  {
    std::istringstream header(line);
    std::string tok;
    while (std::getline(header, tok, ',')) {
      if (tok.rfind("x", 0) == 0 && tok.find("_") == std::string::npos)
        ++dims;
      else if (tok.rfind("b_bar", 0) == 0)
        ++nb;
      else if (tok.rfind("Sigma_", 0) == 0)
        ++nsig;
      else
        throw ConfigError("averaged table: unrecognized column '" + tok + "'");
    }
  }
  if (dims < 1 || nb < 1) throw ConfigError("averaged table: missing coordinate or drift columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> row;
    while (std::getline(ls, tok, ',')) row.push_back(std::strtod(tok.c_str(), nullptr));
    if (static_cast<int>(row.size()) != dims + nb + nsig)
      throw ConfigError("averaged table: row width does not match the header");
    rows.push_back(std::move(row));
  }
  AveragedTable table;
  table.n = nb;
  table.b_values.resize(static_cast<Eigen::Index>(rows.size()), nb);
  if (nsig > 0) table.sigma_values.resize(static_cast<Eigen::Index>(rows.size()), nsig);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < nb; ++c) table.b_values(static_cast<Eigen::Index>(r), c) = rows[r][dims + c];
    for (int c = 0; c < nsig; ++c)
      table.sigma_values(static_cast<Eigen::Index>(r), c) = rows[r][dims + nb + c];
  }
  return table;
}

AveragedTable tabulate_averaged_coefficients(const ModelSpec& model,
                                             const TabulationConfig& cfg) {
  validate_tab_config(model, cfg);
  if (!model.has_b_hat()) throw ConfigError("tabulation: model has no b_hat");
  if (!model.has_f_bar()) throw ConfigError("tabulation: model has no f_bar");
  if (cfg.want_sigma && !model.has_Sigma())
    throw ConfigError("tabulation: want_sigma set but model has no Sigma");
  const double burn = cfg.burn_in > 0.0 ? cfg.burn_in : default_burn_in(model);

  AveragedTable table;
  table.x_lo = cfg.x_lo;
  table.x_hi = cfg.x_hi;
  table.nodes = cfg.nodes;
  table.n = model.n;
  const long long total = table.total_nodes();

  std::filesystem::path cache_file;
  if (!cfg.cache_dir.empty()) {
    cache_file = std::filesystem::path(cfg.cache_dir) /
                 ("avgtable-" + model.id + "-" +
                  io::hex64(io::fnv1a(table_cache_key(model, cfg, burn))) + ".csv");
    if (std::filesystem::exists(cache_file)) {
      AveragedTable cached = averaged_table_from_csv(io::read_file(cache_file));
      const bool shape_ok = cached.b_values.rows() == total && cached.n == model.n &&
                            (!cfg.want_sigma || cached.sigma_values.cols() == model.n * model.n);
      if (shape_ok) {
        table.b_values = std::move(cached.b_values);
        table.sigma_values = std::move(cached.sigma_values);
        table.cache_hit = true;
        return table;
      }
    }
  }

  table.b_values.resize(total, model.n);
  if (cfg.want_sigma) table.sigma_values.resize(total, model.n * model.n);
  for (long long node = 0; node < total; ++node) {
    const Vec x = table.node_coord(node);
    EmpiricalMeasure mu =
        invariant_measure(model, x, burn, cfg.n_samples, 1, cfg.dt,
                          rng::derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(node)),
                          1, cfg.n_threads);
    table.b_values.row(node) = averaged_drift(model, x, mu).value.transpose();
    if (cfg.want_sigma) {
      const Mat sig = averaged_Sigma(model, x, mu).value;
      for (int r = 0; r < model.n; ++r)
        for (int c = 0; c < model.n; ++c)
          table.sigma_values(node, r * model.n + c) = sig(r, c);
    }
  }

  if (!cache_file.empty()) {
    std::filesystem::create_directories(cache_file.parent_path());
    io::atomic_write(cache_file.string(), averaged_table_to_csv(table));
    nlohmann::json meta;
    meta["model"] = model.id;
    meta["x_lo"] = cfg.x_lo;
    meta["x_hi"] = cfg.x_hi;
    meta["nodes"] = cfg.nodes;
    meta["n_samples"] = cfg.n_samples;
    meta["burn_in"] = burn;
    meta["dt"] = cfg.dt;
    meta["seed"] = cfg.seed;
    meta["want_sigma"] = cfg.want_sigma;
    io::atomic_write(cache_file.string() + ".meta.json", meta.dump(2) + "\n");
  }
  return table;
}

AveragedModel averaged_model_from_table(const ModelSpec& model, const AveragedTable& table,
                                        const TabulationConfig& cfg) {
  auto tab = std::make_shared<const AveragedTable>(table);
  AveragedModel avg;
  avg.model_id = model.id;
  avg.n = model.n;
  avg.d = model.d;
  avg.b_bar = [tab](const Vec& x, Vec& out) { out = interp_rows(*tab, tab->b_values, x).transpose(); };
  if (model.has_sigma_bar()) {
    AveragedSigmaFn sb = model.sigma_bar;
    avg.sigma_bar = [sb](const Vec& x, Mat& out) { sb(x, out); };
  }
  if (model.sigma_y_independent) {
    SigmaFn sig = model.sigma;
    const int m = model.m;
    avg.sigma_t = [sig, m](double t, const Vec& x, Mat& out) { sig(t, x, Vec::Zero(m), out); };
  }
  if (tab->sigma_values.size() > 0) {
    const int n = model.n;
    avg.Theta = [tab, n](const Vec& x, Mat& out) {
      const Eigen::RowVectorXd flat = interp_rows(*tab, tab->sigma_values, x);
      Mat sigma(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) sigma(r, c) = flat[r * n + c];
      out = psd_sqrt(sigma);
    };
  }
  nlohmann::json prov;
  prov["kind"] = "tabulated";
  prov["model"] = model.id;
  prov["seed"] = cfg.seed;
  prov["n_samples"] = cfg.n_samples;
  prov["dt"] = cfg.dt;
  prov["nodes"] = cfg.nodes;
  prov["x_lo"] = cfg.x_lo;
  prov["x_hi"] = cfg.x_hi;
  prov["cache_hit"] = table.cache_hit;
  avg.provenance = prov.dump();
  return avg;
}

AveragedModel tabulate_averaged_model(const ModelSpec& model, const TabulationConfig& cfg) {
  return averaged_model_from_table(model, tabulate_averaged_coefficients(model, cfg), cfg);
}

std::function<void(double, const Vec&, Vec&)> tabulate_evolution_drift(
    const ModelSpec& model, const std::vector<double>& t_grid, const TabulationConfig& cfg,
    double lookback) {
  validate_tab_config(model, cfg);
  if (t_grid.empty()) throw ConfigError("evolution drift tabulation: empty t grid");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1]))
      throw ConfigError("evolution drift tabulation: t grid must be strictly increasing");
  const double look = lookback > 0.0 ? lookback : default_lookback(model);

  AveragedTable shape;
  shape.x_lo = cfg.x_lo;
  shape.x_hi = cfg.x_hi;
  shape.nodes = cfg.nodes;
  shape.n = model.n;
  const long long total = shape.total_nodes();

  auto values = std::make_shared<std::vector<Mat>>();
  values->reserve(t_grid.size());
  for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
    Mat slab(total, model.n);
    for (long long node = 0; node < total; ++node) {
      const Vec x = shape.node_coord(node);
      EmpiricalMeasure mu = evolution_measure(
          model, x, t_grid[ti], look, cfg.dt, cfg.n_samples,
          rng::derive_seed(cfg.seed, 5000 + ti * 100000 + static_cast<std::uint64_t>(node)),
          std::nullopt, cfg.n_threads);
      slab.row(node) = averaged_drift_evolution(model, t_grid[ti], x, mu).value.transpose();
    }
    values->push_back(std::move(slab));
  }

  auto grid = std::make_shared<std::vector<double>>(t_grid);
  auto tab = std::make_shared<AveragedTable>(std::move(shape));
  return [values, grid, tab](double t, const Vec& x, Vec& out) {
    const auto& ts = *grid;
    const double tol = 1e-9 * std::max(1.0, std::abs(ts.back()));
    if (t < ts.front() - tol || t > ts.back() + tol)
      throw RuntimeError("averaged model: t outside the tabulated time grid");
    std::size_t hi = 1;
    while (hi + 1 < ts.size() && ts[hi] < t) ++hi;
    const double w = std::clamp((t - ts[hi - 1]) / (ts[hi] - ts[hi - 1]), 0.0, 1.0);
    const Eigen::RowVectorXd lo_row = interp_rows(*tab, (*values)[hi - 1], x);
    const Eigen::RowVectorXd hi_row = interp_rows(*tab, (*values)[hi], x);
    out = ((1.0 - w) * lo_row + w * hi_row).transpose();
  };
}

PathEnsemble simulate_averaged(const AveragedModel& avg, AveragedKind kind,
                               const AveragedRunConfig& cfg, std::uint64_t seed) {
  if (cfg.n_paths < 1) throw ConfigError("simulate_averaged: n_paths must be >= 1");
  if (cfg.x0.size() != avg.n) throw ConfigError("simulate_averaged: x0 dimension mismatch");
  const long long n_steps = checked_step_count(cfg.T, cfg.dt, "simulate_averaged");
  if (cfg.store_every < 1 || n_steps % cfg.store_every != 0)
    throw ConfigError("simulate_averaged: store_every must divide the step count");
  if (!avg.b_bar && kind != AveragedKind::kIntermediate)
    throw ConfigError("simulate_averaged: averaged model lacks b_bar");
  int noise_dim = avg.d;
  switch (kind) {
    case AveragedKind::kIntermediate:
      if (!avg.b_bar_t || !avg.sigma_t)
        throw ConfigError("simulate_averaged: intermediate kind needs b_bar_t and sigma_t");
      if (!(cfg.epsilon >= kMinEpsilon))
        throw ConfigError("simulate_averaged: intermediate kind needs epsilon >= 2^-20");
      break;
    case AveragedKind::kStrong:
      if (!avg.sigma_bar) throw ConfigError("simulate_averaged: strong kind needs sigma_bar");
      break;
    case AveragedKind::kWeak:
      if (!avg.Theta) throw ConfigError("simulate_averaged: weak kind needs Theta");
      noise_dim = avg.n;
      break;
  }

  PathEnsemble ens;
  ens.n_paths = cfg.n_paths;
  ens.n = avg.n;
  ens.m = 0;
  ens.epsilon = cfg.epsilon;
  ens.dt = cfg.dt;
  ens.store_every = cfg.store_every;
  ens.seed = seed;
  ens.model_id = avg.model_id;
  ens.n_steps = n_steps;
  const std::size_t n_stored = static_cast<std::size_t>(n_steps / cfg.store_every) + 1;
  ens.times.resize(n_stored);
  for (std::size_t i = 0; i < n_stored; ++i)
    ens.times[i] = static_cast<double>(i * static_cast<std::size_t>(cfg.store_every)) * cfg.dt;
  ens.slow.assign(static_cast<std::size_t>(cfg.n_paths) * n_stored * static_cast<std::size_t>(avg.n), 0.0);

  parallel_for(
      static_cast<std::size_t>(cfg.n_paths),
      [&](std::size_t p) {
        rng::GaussianStream w1(seed, p, rng::Channel::kSlowNoise);
        Vec x = cfg.x0, drift(avg.n), dW(noise_dim), x_new(avg.n);
        Mat diff(avg.n, noise_dim);
        auto store = [&](std::size_t slot) {
          for (int c = 0; c < avg.n; ++c)
            ens.slow[(p * n_stored + slot) * static_cast<std::size_t>(avg.n) +
                     static_cast<std::size_t>(c)] = x[c];
        };
        store(0);
        for (long long k = 0; k < n_steps; ++k) {
          const double t = static_cast<double>(k) * cfg.dt;
          switch (kind) {
            case AveragedKind::kIntermediate:
              avg.b_bar_t(t / cfg.epsilon, x, drift);
              avg.sigma_t(t / cfg.epsilon, x, diff);
              break;
            case AveragedKind::kStrong:
              avg.b_bar(x, drift);
              avg.sigma_bar(x, diff);
              break;
            case AveragedKind::kWeak:
              avg.b_bar(x, drift);
              avg.Theta(x, diff);
              break;
          }
          for (int c = 0; c < noise_dim; ++c) dW[c] = w1.next() * std::sqrt(cfg.dt);
          x_new = x + drift * cfg.dt + diff * dW;
          if (!x_new.allFinite()) {
            std::ostringstream msg;
            msg << "model blowup: non-finite state in averaged model '" << avg.model_id
                << "' on path " << p << " at t=" << t + cfg.dt;
            throw RuntimeError(msg.str());
          }
          x = x_new;
          if ((k + 1) % cfg.store_every == 0)
            store(static_cast<std::size_t>((k + 1) / cfg.store_every));
        }
      },
      cfg.n_threads);
  return ens;
}

}  // namespace sfal
