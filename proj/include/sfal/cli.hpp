#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace sfal {

inline constexpr const char* kSfalVersion = "0.1.0";

// Union of the parameters the subcommands accept. Values resolve with
// precedence flags > config file > defaults; list-valued parameters travel as
// comma-separated strings until dispatch parses them.
struct RunConfig {
  std::string subcommand;
  std::string model;
  std::string out;          // empty resolves to sfal-out/<subcommand>
  std::string config_path;  // config or manifest file, empty when unused
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0 defers to SFAL_THREADS, then hardware

  double eps = 0.25;
  double T = 0.0;  // <= 0 resolves per subcommand
  double dt = 0.0;
  double delta = 0.0;
  double dt_limit = 1e-3;
  double burn_in = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;
  double t_max = 10.0;
  double x_box = 5.0;
  double y_box = 5.0;
  double tab_dt = 0.02;
  int n_paths = 0;      // 0 resolves per subcommand
  int n_samples = 0;    // 0 resolves per subcommand
  int tab_samples = 4000;
  int thin = 50;
  int store_every = 1;
  int n_pairs = 20000;
  bool record_increments = false;
  bool want_sigma = false;

  std::string x, y, x1, x2, y1, y2;  // comma-separated coordinates
  std::string x_lo, x_hi, nodes;     // averaged-table box
  std::string eps_grid, h_grid, t_grid;
  std::string u = "clip_quad";  // generator test function
  std::string cache_dir;        // empty resolves to <out>/cache
};

// Parses argv, applies config-file defaults, dispatches the subcommand, and
// writes outputs plus a manifest.json beside them. Returns 0 on success, 1 on
// validation problems (bad flags, bad config, failed model validation), 2 on
// runtime failures (blowup, I/O).
int run_cli(int argc, const char* const* argv);

}  // namespace sfal
