#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sfal/errors.hpp"

namespace sfal::stats {

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) throw ConfigError("mean_stderr: empty sample");
  double sum = 0.0;
  for (double v : xs) sum += v;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double v : xs) ss += (v - mean) * (v - mean);
  const double var = xs.size() > 1 ? ss / static_cast<double>(xs.size() - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(xs.size())), xs.size()};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;
};

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ConfigError("fit_line: need at least two points with matching sizes");
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw ConfigError("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / n);
  return fit;
}

// Least-squares exponential decay rate: fits log(values) ~ a - rate * t over
// the given index window. Values must be positive on the window.
inline double fit_exp_decay_rate(const std::vector<double>& times,
                                 const std::vector<double>& values, std::size_t begin,
                                 std::size_t end) {
  if (end > values.size() || begin + 2 > end)
    throw ConfigError("fit_exp_decay_rate: bad window");
  std::vector<double> xs, ys;
  xs.reserve(end - begin);
  ys.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    if (!(values[i] > 0.0)) throw ConfigError("fit_exp_decay_rate: values must be positive");
    xs.push_back(times[i]);
    ys.push_back(std::log(values[i]));
  }
  return -fit_line(xs, ys).slope;
}

}  // namespace sfal::stats
