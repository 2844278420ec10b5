#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfal/measures.hpp"
#include "sfal/model.hpp"
#include "sfal/sde.hpp"

namespace sfal {

// (1/T) * integral of g over [t, t+T], composite Simpson with panel doubling
// until the relative change is below 1e-8. Non-finite g values throw.
double cesaro_average(const std::function<double(double)>& g, double t, double T);

struct ResidualCurve {
  std::vector<double> T_grid;
  std::vector<double> values;
};

// sup over a fixed t-grid of |(1/T) int_t^{t+T} (b(s,x,y) - b_hat(x,y)) ds|,
// normalized by 1 + |x| + |y|. Vanishes as T grows for admissible models.
ResidualCurve b_hat_residual(const ModelSpec& model, const Vec& x, const Vec& y,
                             const std::vector<double>& T_grid);

// Mean-square Cesaro residual of sigma(t,x) against sigma_bar(x), normalized
// by 1 + |x|^2. Requires a y-independent sigma.
ResidualCurve sigma_bar_residual(const ModelSpec& model, const Vec& x,
                                 const std::vector<double>& T_grid);

// Frobenius norm of (1/T) int_t^{t+T} [(sigma sigma*)(s,x,y) - Sigma(x,y)] ds,
// sup over the t-grid, normalized by 1 + |x|^2. Oscillations cancel inside the
// integral, so periodic diffusions pass this (unlike the mean-square form).
ResidualCurve Sigma_residual(const ModelSpec& model, const Vec& x, const Vec& y,
                             const std::vector<double>& T_grid);

struct DriftEstimate {
  Vec value;
  Vec se;
};

// Monte Carlo mean of b(t, x, .) over an evolution cloud labeled (x, t).
DriftEstimate averaged_drift_evolution(const ModelSpec& model, double t, const Vec& x,
                                       const EmpiricalMeasure& mu);

// Monte Carlo mean of b_hat(x, .) over an invariant cloud labeled x.
DriftEstimate averaged_drift(const ModelSpec& model, const Vec& x,
                             const EmpiricalMeasure& mu);

struct SigmaEstimate {
  Mat value;
  Mat se;  // entrywise standard errors
};

// Monte Carlo mean of Sigma(x, .) over an invariant cloud; symmetrized, with
// eigenvalues in (-1e-10, 0) clamped to zero. More negative ones throw.
SigmaEstimate averaged_Sigma(const ModelSpec& model, const Vec& x,
                             const EmpiricalMeasure& mu);

// Symmetric PSD square root via eigendecomposition. Slightly negative
// eigenvalues (within 1e-12 relative to 1 + |a|_F) are clamped; asymmetry or
// anything more negative throws.
Mat psd_sqrt(const Mat& a);

// Coefficient bundle for the averaged equations. Functions may be analytic
// (set directly) or interpolated from a tabulation.
struct AveragedModel {
  std::string model_id;
  int n = 0;
  int d = 0;
  std::function<void(const Vec&, Vec&)> b_bar;             // required by all kinds
  std::function<void(double, const Vec&, Vec&)> b_bar_t;   // time-dependent drift
  std::function<void(double, const Vec&, Mat&)> sigma_t;   // time-dependent diffusion
  std::function<void(const Vec&, Mat&)> sigma_bar;         // n x d
  std::function<void(const Vec&, Mat&)> Theta;             // n x n PSD sqrt
  std::string provenance;  // JSON: seeds, counts, grid, cache status
};

struct TabulationConfig {
  std::vector<double> x_lo;  // box per slow dimension
  std::vector<double> x_hi;
  std::vector<int> nodes;    // >= 2 per dimension
  int n_samples = 2000;      // invariant cloud size per node
  double burn_in = 0.0;      // <= 0 resolves to default_burn_in(model)
  double dt = 0.02;
  std::uint64_t seed = 1;
  bool want_sigma = false;   // also tabulate Sigma_bar and expose Theta
  std::string cache_dir;     // empty disables the disk cache
  std::size_t n_threads = 0;
};

// Raw tabulation: one invariant cloud per grid node, b_bar (and optionally
// Sigma_bar) estimated on each. Rows follow row-major node order.
struct AveragedTable {
  std::vector<double> x_lo, x_hi;
  std::vector<int> nodes;
  int n = 0;
  Mat b_values;      // total_nodes x n
  Mat sigma_values;  // total_nodes x n*n when tabulated, else 0 x 0
  bool cache_hit = false;

  long long total_nodes() const;
  Vec node_coord(long long flat_index) const;
};

AveragedTable tabulate_averaged_coefficients(const ModelSpec& model,
                                             const TabulationConfig& cfg);

// Wraps a tabulation in multilinear interpolators. Evaluation outside the
// declared box throws (linear growth makes extrapolation unreliable); Theta
// is the PSD square root of the interpolated Sigma_bar, so Theta^2 matches it
// everywhere, not just at the nodes.
AveragedModel averaged_model_from_table(const ModelSpec& model, const AveragedTable& table,
                                        const TabulationConfig& cfg);
AveragedModel tabulate_averaged_model(const ModelSpec& model, const TabulationConfig& cfg);

// Tabulates the evolution-measure drift (t, x) -> mean of b(t, x, .) over
// mu^x_t on a (t-grid) x (x-grid) lattice with bilinear interpolation, for the
// time-dependent averaged equation.
std::function<void(double, const Vec&, Vec&)> tabulate_evolution_drift(
    const ModelSpec& model, const std::vector<double>& t_grid, const TabulationConfig& cfg,
    double lookback = 0.0);

// CSV table export/import: header x components, then b_bar components, then
// row-major Sigma_bar entries when present.
std::string averaged_table_to_csv(const AveragedTable& table);
AveragedTable averaged_table_from_csv(const std::string& text);

enum class AveragedKind {
  kIntermediate,  // dX = b_bar(t/eps, X) dt + sigma(t/eps, X) dW1
  kStrong,        // dX = b_bar(X) dt + sigma_bar(X) dW1
  kWeak,          // dX = b_bar(X) dt + Theta(X) dW
};

struct AveragedRunConfig {
  Vec x0;
  double T = 1.0;
  double dt = 1e-3;
  int n_paths = 1;
  int store_every = 1;
  double epsilon = 0.0;  // consumed by kIntermediate only
  std::size_t n_threads = 0;
};

// EM integration of the chosen averaged equation; slow-only ensemble. The
// driving stream is (seed, path, slow-noise channel), so a strong-kind run
// with the same seed consumes exactly the W1 increments of the corresponding
// full slow-fast run at equal dt.
PathEnsemble simulate_averaged(const AveragedModel& avg, AveragedKind kind,
                               const AveragedRunConfig& cfg, std::uint64_t seed);

}  // namespace sfal
