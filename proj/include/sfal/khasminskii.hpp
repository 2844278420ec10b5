#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfal/model.hpp"
#include "sfal/sde.hpp"

namespace sfal {

// Partition of [0, T] into half-open blocks [k delta, (k+1) delta /\ T); block
// starts are k delta for k = 0..floor(T/delta).
struct BlockSchedule {
  double delta = 0.0;
  double T = 0.0;

  void validate() const;            // 0 < delta <= T
  long long block_index(double s) const;  // floor(s/delta), snapped for grid times
  double floor_time(double s) const;      // s(delta) = block_index(s) * delta
};

// delta = eps^(2/3) rounded to the nearest positive multiple of dt and clipped
// to [dt, T], so the schedule always aligns with the integration grid.
BlockSchedule default_schedule(double eps, double T, double dt);

// Auxiliary fast trajectories on the driving ensemble's step grid, laid out
// like PathEnsemble::fast.
struct AuxiliaryEnsemble {
  std::vector<double> times;
  int n_paths = 0;
  int m = 0;
  double delta = 0.0;
  std::vector<double> y_aux;  // [path][time][component]

  double y_at(int path, std::size_t ti, int comp) const {
    return y_aux[(static_cast<std::size_t>(path) * times.size() + ti) * m + comp];
  }
};

// Rebuilds the auxiliary fast process from a recorded run: on each block the
// state restarts from the true fast state, drifts with the slow value frozen
// at the block start, and consumes the same stored W2 increments. Requires
// store_every == 1 and recorded increments; delta must be a multiple of dt and
// the schedule horizon must match the driving run.
AuxiliaryEnsemble auxiliary_path(const ModelSpec& model, double eps,
                                 const BlockSchedule& schedule, const PathEnsemble& driving,
                                 std::size_t n_threads = 0);

// Mean over paths of sup over the grid of |Y - Y_aux|, with standard error.
struct SupGap {
  double mean = 0.0;
  double se = 0.0;
};
SupGap mean_sup_gap(const PathEnsemble& driving, const AuxiliaryEnsemble& aux);

// Named test integrand F(t, x, y), Lipschitz in (x, y) uniformly in t with the
// declared constant. Registry: "b0" (first drift component), "tanh_y0",
// "clip_y" (|y| clipped at 10), "tanh_x0" (y-independent control).
struct TestIntegrand {
  std::string name;
  std::function<double(double, const Vec&, const Vec&)> fn;
  double lip = 1.0;
};
TestIntegrand integrand_by_name(const std::string& name, const ModelSpec& model);

// Named weight realized from the slow state at the anchor time t0. Registry:
// "one", "zero", "tanh_x0", "clip_x" (|x| clipped at 10).
struct WeightVariable {
  std::string name;
  std::function<double(const Vec&)> fn;
};
WeightVariable weight_by_name(const std::string& name);

// |E int_t0^t (F(s/eps, X_s, Y_s) - F(s/eps, X_s, Y_aux_s)) Z ds| by
// left-endpoint Riemann sums over the step grid. `scale` is
// sqrt(delta) * sqrt(mean Z^2), the unit for the expected block bound.
struct GapEstimate {
  double value = 0.0;
  double se = 0.0;
  double scale = 0.0;
};
GapEstimate gap_functional(const ModelSpec& model, double eps, const BlockSchedule& schedule,
                           const PathEnsemble& driving, const TestIntegrand& F, double t0,
                           double t, const WeightVariable& Z, std::size_t n_threads = 0);

// CSV rows `path,time,y_true,y_aux,gap`: first fast component of each state
// and the euclidean gap between the full states.
std::string khasminskii_to_csv(const PathEnsemble& driving, const AuxiliaryEnsemble& aux);

}  // namespace sfal
