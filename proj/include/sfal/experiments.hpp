#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfal/averaging.hpp"
#include "sfal/measures.hpp"
#include "sfal/model.hpp"
#include "sfal/sde.hpp"

namespace sfal {

// One convergence sweep: a parameter grid, the measured error and Monte Carlo
// stderr per point, and a log-log least-squares slope. The slope is NaN until
// at least three grid points carry strictly positive errors.
struct ConvergenceReport {
  std::string parameter;  // "eps" | "delta" | "h" | "T"
  std::vector<double> grid;
  std::vector<double> errors;
  std::vector<double> stderrs;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_residual = std::numeric_limits<double>::quiet_NaN();
  std::string fingerprint;

  bool has_slope() const { return !std::isnan(slope); }
};

// Log-log least squares of errors against grid values; NaN slope when fewer
// than three positive errors exist. Exact-power data recovers the exponent to
// machine precision.
void fit_report_slope(ConvergenceReport& report);

struct StrongConvergenceConfig {
  std::vector<double> eps_grid;  // strictly decreasing, each >= 2^-20
  double T = 1.0;
  int n_paths = 2000;
  std::size_t n_threads = 0;
};

// Pathwise comparison of the full slow component against the averaged
// equation driven by the same W1 stream. Both systems integrate on the common
// grid dt = min(eps/50, 1e-3), so they consume identical increments; the
// error at eps is the max over 21 equally spaced output times of
// mean |X_eps - X_bar|^2. Requires a y-independent sigma.
ConvergenceReport strong_convergence(const ModelSpec& model, const AveragedModel& avg,
                                     const StrongConvergenceConfig& cfg, std::uint64_t seed);

struct WeakConvergenceConfig {
  std::vector<double> eps_grid;
  double T = 1.0;
  int n_paths = 2000;
  double dt_limit = 1e-3;  // step for the limit ensemble
  std::size_t n_threads = 0;
};

// Distributional comparison at the final time: error(eps) is the max over the
// phi set of |E phi(X_eps_T) - E phi(X_T)|, with the limit ensemble simulated
// once from the weak averaged equation on an independent seed. No rate is
// asserted, only decay.
ConvergenceReport weak_convergence(const ModelSpec& model, const AveragedModel& avg,
                                   const std::vector<Phi>& phis,
                                   const WeakConvergenceConfig& cfg, std::uint64_t seed);

// Smooth test function with analytic derivatives for the martingale-problem
// residual. Registry: "clip_quad" (|x|^2 frozen outside |x| <= 10) and
// "tanh_sum" (sum of tanh of components).
struct GeneratorTestFunction {
  std::string name;
  std::function<double(const Vec&)> u;
  std::function<void(const Vec&, Vec&)> grad;
  std::function<void(const Vec&, Mat&)> hess;
};
GeneratorTestFunction generator_test_function_by_name(const std::string& name);

struct ResidualEstimate {
  double value = 0.0;  // signed mean defect
  double se = 0.0;
};

// E[U(X_t) - U(X_t0) - int_t0^t (<grad U, b_bar> + 1/2 Tr(Theta Theta^T
// hess U))(X_s) ds] over a stored weak-equation ensemble (store_every == 1).
// Vanishes within noise when the ensemble solves the equation the generator
// describes; a mismatched generator leaves a visible offset.
ResidualEstimate generator_residual(const AveragedModel& avg, const std::string& u_name,
                                    const PathEnsemble& paths, double t0, double t);

struct IncrementSuiteConfig {
  std::vector<double> h_grid;  // strictly decreasing window lengths
  double T = 0.5;
  int n_paths = 2000;
  std::size_t n_threads = 0;
};

// Fourth-moment modulus of continuity of the slow component:
// error(h) = max over four window anchors of E sup_{t <= s <= t+h}
// |X_s - X_t|^4. The h^2 bound shows up as error/h^2 staying flat.
ConvergenceReport increment_suite(const ModelSpec& model, double eps,
                                  const IncrementSuiteConfig& cfg, std::uint64_t seed);

// max_i (error_i / h_i^2) / min_i (error_i / h_i^2) for an "h" report.
double ratio_spread(const ConvergenceReport& report);

// Writes report.csv (grid,error,stderr) and report.meta (JSON: parameter,
// fingerprint, slope, slope_residual, points) into out_dir; creates the
// directory, overwrites idempotently.
void write_report(const ConvergenceReport& report, const std::string& out_dir);
ConvergenceReport read_report_csv(const std::string& out_dir);

}  // namespace sfal
