#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfal/model.hpp"

namespace sfal {

// Constants of the concave comparison function h(r) = 1 - e^{-c1 r} + c2 r
// and the contraction rate it certifies for the frozen dynamics.
struct ContractionConstants {
  double c1 = 0.0;  // 2 * C * r0
  double c2 = 0.0;  // c1 * e^{-c1 * r0}
  double beta = 0.0;
};

// h(r); strictly increasing and concave, with c2 r <= h(r) <= (c1 + c2) r.
double h_eval(double r, const ContractionConstants& k);

// Computes (c1, c2) from the dissipativity parameters and the certified rate
//   beta = min( c1^2 e^{-c1 r0} / h(r0),  c2 * K * inf_{r >= r0} r / h(r) ).
// The inf is located numerically (monotonicity pre-scan, then golden-section),
// and always lies in [1/(c1+c2), +inf).
ContractionConstants theoretical_beta(const DissipativityParams& params);

// C^2 bridge between 0 on [0, delta/2] and 1 on [delta, inf): quintic
// smoothstep in r on [delta/2, delta].
double mollifier(double r, double delta);

struct CouplingConfig {
  double delta = 0.0;  // <= 0 resolves to the default 1e-3 * r0
  double dt = 0.0;
  double T = 0.0;
  int n_paths = 0;
  Vec x1, x2;  // frozen slow values
  Vec y1, y2;  // initial fast values
  int store_every = 1;
  bool record_states = false;  // keep Y and Z samples (marginal-law tests)
  std::size_t n_threads = 0;
};

struct CouplingTrace {
  std::vector<double> times;
  int n_paths = 0;
  double delta = 0.0;
  ContractionConstants constants;
  std::vector<double> dist;    // [path][time], |Y - Z|
  std::vector<double> h_dist;  // h(dist) pointwise
  std::vector<std::optional<double>> coalesced_at;  // first step time with dist < delta/2
  // Present only when record_states: [path][time][component].
  std::vector<double> y_states;
  std::vector<double> z_states;
  int m = 0;

  double dist_at(int path, std::size_t ti) const {
    return dist[static_cast<std::size_t>(path) * times.size() + ti];
  }
  double h_dist_at(int path, std::size_t ti) const {
    return h_dist[static_cast<std::size_t>(path) * times.size() + ti];
  }
  // Mean of h(dist) over paths at each stored time, with standard errors.
  void mean_h(std::vector<double>& mean, std::vector<double>& se) const;
  void mean_dist(std::vector<double>& mean, std::vector<double>& se) const;
};

// Reflection coupling for the frozen fast dynamics started at (y1, y2) with
// slow values frozen at (x1, x2):
//   dY = f(t,x1,Y)dt + sqrt(pi) dW1           + sqrt(1-pi) dW2
//   dZ = f(t,x2,Z)dt + sqrt(pi) R_e dW1       + sqrt(1-pi) dW2
// with pi = mollifier(|Y-Z|, delta), R_e v = v - 2 e <e,v>, e = (Y-Z)/|Y-Z|
// from the pre-step states. R_e is never evaluated when pi = 0.
CouplingTrace simulate_coupled(const ModelSpec& model, const CouplingConfig& cfg,
                               std::uint64_t seed);

// Contraction envelope C_env e^{-beta (t-s)} y_gap + C_env x_gap.
double w1_upper_bound(const ContractionConstants& k, double t_minus_s, double y_gap,
                      double x_gap, double C_env);

// CSV export with header `path,time,dist,h_dist`.
std::string coupling_trace_to_csv(const CouplingTrace& trace);

}  // namespace sfal
