#include "sfal/model.hpp"

#include <cmath>

#include "sfal/errors.hpp"

namespace sfal {

void DissipativityParams::validate() const {
  if (!(C > 0.0)) throw ConfigError("dissipativity: C must be > 0");
  if (!(K > 0.0)) throw ConfigError("dissipativity: K must be > 0");
  if (!(r0 > 0.0)) throw ConfigError("dissipativity: r0 must be > 0");
  if (!(C_star > 0.0)) throw ConfigError("dissipativity: C_star must be > 0");
  if (!(K1 > 0.0 && K1 < K)) throw ConfigError("dissipativity: need 0 < K1 < K");
  if (!(K2 > 0.0)) throw ConfigError("dissipativity: K2 must be > 0");
}

namespace {

Vec scalar_vec(double v) {
  Vec out(1);
  out[0] = v;
  return out;
}

}  // namespace

// Fast drift f(t,x,y) = (1+e^-t)(x/2 - y): contraction rate in [1,2] for
// t >= 0, uniformly in (x, y). Slow drift b(t,x,y) = y + sin t averages to
// b_hat(x,y) = y; the fast limit drift f_bar(x,y) = x/2 - y has stationary
// law N(x/2, 1/2), so the averaged slow drift is x/2.
ModelSpec make_ou_lin() {
  ModelSpec spec;
  spec.id = "ou-lin";
  spec.n = spec.m = spec.d = 1;

  spec.b = [](double t, const Vec& /*x*/, const Vec& y, Vec& out) {
    out[0] = y[0] + std::sin(t);
  };
  spec.sigma = [](double /*t*/, const Vec& /*x*/, const Vec& /*y*/, Mat& out) {
    out(0, 0) = 1.0;
  };
  spec.sigma_y_independent = true;
  spec.f = [](double t, const Vec& x, const Vec& y, Vec& out) {
    out[0] = (1.0 + std::exp(-t)) * (0.5 * x[0] - y[0]);
  };

  spec.b_hat = [](const Vec& /*x*/, const Vec& y, Vec& out) { out[0] = y[0]; };
  spec.f_bar = [](const Vec& x, const Vec& y, Vec& out) { out[0] = 0.5 * x[0] - y[0]; };
  spec.sigma_bar = [](const Vec& /*x*/, Mat& out) { out(0, 0) = 1.0; };
  spec.Sigma = [](const Vec& /*x*/, const Vec& /*y*/, Mat& out) { out(0, 0) = 1.0; };
  spec.k_growth = 1.0;

  // |f(t,x1,y1)-f(t,x2,y2) . (y1-y2)| decomposes with factor (1+e^-t) in
  // [1,2]: cross term <= 1*|dx||dy|, quadratic term <= -1*|dy|^2 always.
  spec.dissipativity = {.C = 2.0, .K = 0.5, .r0 = 1.0, .C_star = 1.0, .K1 = 0.25, .K2 = 1.0};

  spec.x0 = scalar_vec(1.0);
  spec.y0 = scalar_vec(0.5);
  return spec;
}

// Fast drift f(t,x,y) = y - y^3 + x + e^-t: expanding near the origin,
// dissipative beyond |dy| = r0 because y1^2 + y1 y2 + y2^2 >= (y1-y2)^2 / 4.
// Invariant density of the limit dynamics is prop. to exp(y^2 - y^4/2 + 2xy).
ModelSpec make_double_well() {
  ModelSpec spec;
  spec.id = "double-well";
  spec.n = spec.m = spec.d = 1;

  spec.b = [](double t, const Vec& /*x*/, const Vec& y, Vec& out) {
    out[0] = y[0] + std::exp(-t);
  };
  spec.sigma = [](double /*t*/, const Vec& /*x*/, const Vec& /*y*/, Mat& out) {
    out(0, 0) = 1.0;
  };
  spec.sigma_y_independent = true;
  spec.f = [](double t, const Vec& x, const Vec& y, Vec& out) {
    out[0] = y[0] - y[0] * y[0] * y[0] + x[0] + std::exp(-t);
  };

  spec.b_hat = [](const Vec& /*x*/, const Vec& y, Vec& out) { out[0] = y[0]; };
  spec.f_bar = [](const Vec& x, const Vec& y, Vec& out) {
    out[0] = y[0] - y[0] * y[0] * y[0] + x[0];
  };
  spec.sigma_bar = [](const Vec& /*x*/, Mat& out) { out(0, 0) = 1.0; };
  spec.Sigma = [](const Vec& /*x*/, const Vec& /*y*/, Mat& out) { out(0, 0) = 1.0; };
  spec.k_growth = 0.0;

  spec.dissipativity = {.C = 1.0, .K = 1.25, .r0 = 3.0, .C_star = 2.0, .K1 = 0.25, .K2 = 2.0};

  spec.x0 = scalar_vec(0.0);
  spec.y0 = scalar_vec(0.0);
  return spec;
}

// Weak-route model: the diffusion depends on the fast variable and on time,
//   sigma(t,x,y) = (1 + 0.1 tanh y)(1 + sin(t)/sqrt(2)),
// whose squared time average is Sigma(x,y) = 1.25 (1 + 0.1 tanh y)^2 since
// sin^2 averages to 1/2. Fast drift and slow drift match "ou-lin", so the
// averaged drift is x/2 and the invariant law is N(x/2, 1/2).
ModelSpec make_periodic_weak() {
  ModelSpec spec;
  spec.id = "periodic-weak";
  spec.n = spec.m = spec.d = 1;

  spec.b = [](double t, const Vec& /*x*/, const Vec& y, Vec& out) {
    out[0] = y[0] + std::sin(t);
  };
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  spec.sigma = [inv_sqrt2](double t, const Vec& /*x*/, const Vec& y, Mat& out) {
    out(0, 0) = (1.0 + 0.1 * std::tanh(y[0])) * (1.0 + inv_sqrt2 * std::sin(t));
  };
  spec.sigma_y_independent = false;
  spec.f = [](double t, const Vec& x, const Vec& y, Vec& out) {
    out[0] = (1.0 + std::exp(-t)) * (0.5 * x[0] - y[0]);
  };

  spec.b_hat = [](const Vec& /*x*/, const Vec& y, Vec& out) { out[0] = y[0]; };
  spec.f_bar = [](const Vec& x, const Vec& y, Vec& out) { out[0] = 0.5 * x[0] - y[0]; };
  spec.Sigma = [](const Vec& /*x*/, const Vec& y, Mat& out) {
    const double g = 1.0 + 0.1 * std::tanh(y[0]);
    out(0, 0) = 1.25 * g * g;
  };
  spec.k_growth = 1.0;

  spec.dissipativity = {.C = 2.0, .K = 0.5, .r0 = 1.0, .C_star = 1.0, .K1 = 0.25, .K2 = 1.0};

  // Smallest possible Sigma value: 1.25 * 0.9^2.
  spec.ellipticity_floor = 1.25 * 0.81;

  spec.x0 = scalar_vec(0.0);
  spec.y0 = scalar_vec(0.0);
  return spec;
}

ModelSpec model_by_name(const std::string& id) {
  if (id == "ou-lin") return make_ou_lin();
  if (id == "double-well") return make_double_well();
  if (id == "periodic-weak") return make_periodic_weak();
  throw ConfigError("unknown model id: '" + id + "' (known: ou-lin, double-well, periodic-weak)");
}

std::vector<std::string> zoo_model_names() {
  return {"ou-lin", "double-well", "periodic-weak"};
}

}  // namespace sfal
