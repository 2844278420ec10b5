#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace sfal {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Two-regime dissipativity data for the fast drift f:
//   <f(t,x1,y1)-f(t,x2,y2), y1-y2> <=  C|dy|^2 + C|dx||dy|   when |dy| <= r0
//   <f(t,x1,y1)-f(t,x2,y2), y1-y2> <= -K|dy|^2 + C|dx||dy|   when |dy| >  r0
// together with the growth bound |f(t,x,0)| <= C_star (1 + |x|).
struct DissipativityParams {
  double C = 0.0;
  double K = 0.0;
  double r0 = 0.0;
  double C_star = 0.0;
  // Radial coercivity constants implied by the bounds above:
  //   <f(t,x,y), y> <= -K1 |y|^2 + K2 (1 + |x|^2),  0 < K1 < K.
  double K1 = 0.0;
  double K2 = 0.0;

  // Throws ConfigError unless C, K, r0, C_star > 0, 0 < K1 < K, K2 > 0.
  void validate() const;
};

// Coefficient callbacks write into pre-sized outputs; hot loops reuse buffers.
using DriftFn = std::function<void(double t, const Vec& x, const Vec& y, Vec& out)>;
using SigmaFn = std::function<void(double t, const Vec& x, const Vec& y, Mat& out)>;
using AveragedDriftFn = std::function<void(const Vec& x, const Vec& y, Vec& out)>;
using AveragedSigmaFn = std::function<void(const Vec& x, Mat& out)>;
using DiffusionMatrixFn = std::function<void(const Vec& x, const Vec& y, Mat& out)>;

// Full slow-fast model:
//   dX = b(t/eps, X, Y) dt + sigma(t/eps, X, Y) dW1,  X in R^n, W1 in R^d
//   dY = (1/eps) f(t/eps, X, Y) dt + (1/sqrt(eps)) dW2,  Y, W2 in R^m
// plus optional long-time coefficient data used by the averaging layer.
struct ModelSpec {
  std::string id;
  int n = 1;
  int m = 1;
  int d = 1;

  DriftFn b;
  SigmaFn sigma;
  bool sigma_y_independent = false;
  DriftFn f;

  // Long-time limits: b_hat(x,y) is the Cesaro limit of b(t,x,.) in t,
  // f_bar(x,y) the pointwise limit of f(t,x,.), sigma_bar(x) the mean-square
  // Cesaro limit of sigma(t,x) (slow-variable-only diffusions), Sigma(x,y)
  // the Cesaro limit of (sigma sigma*)(t,x,y). All optional.
  AveragedDriftFn b_hat;
  AveragedDriftFn f_bar;
  AveragedSigmaFn sigma_bar;
  DiffusionMatrixFn Sigma;
  // Growth exponent k in |f(t,x,y)-f_bar(x,y)| <= phi2(t)(1+|x|+|y|^k).
  double k_growth = 0.0;

  DissipativityParams dissipativity;

  // Default initial condition (run configs may override).
  Vec x0;
  Vec y0;

  // Declared lower bound on the spectrum of the averaged diffusion matrix,
  // > 0 only for models used on the weak route.
  double ellipticity_floor = 0.0;

  bool has_b_hat() const { return static_cast<bool>(b_hat); }
  bool has_f_bar() const { return static_cast<bool>(f_bar); }
  bool has_sigma_bar() const { return static_cast<bool>(sigma_bar); }
  bool has_Sigma() const { return static_cast<bool>(Sigma); }
};

// Built-in model zoo.
ModelSpec make_ou_lin();         // linear fast OU block with decaying time factor
ModelSpec make_double_well();    // bistable fast drift, dissipative only at range
ModelSpec make_periodic_weak();  // y-dependent periodic diffusion (weak route)

// Looks up a zoo model by id ("ou-lin", "double-well", "periodic-weak").
// Throws ConfigError for unknown ids.
ModelSpec model_by_name(const std::string& id);
std::vector<std::string> zoo_model_names();

}  // namespace sfal
