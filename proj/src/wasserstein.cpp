#include "sfal/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sfal/errors.hpp"

namespace sfal {

double w1_exact_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || a.size() != b.size())
    throw ConfigError("w1_exact_1d: clouds must be non-empty and of equal size");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

// Shortest augmenting path assignment with dual potentials (dense Dijkstra):
// rows are matched one at a time along a minimal reduced-cost path, after
// which duals are updated so all reduced costs stay non-negative. Exact for
// real-valued costs; O(N^3) overall.
double assignment_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n == 0 || cost.cols() != n) throw ConfigError("assignment_cost: cost matrix must be square");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);  // dual potentials
  std::vector<int> match_col(n + 1, n);               // column -> row, n = unmatched
  std::vector<int> way(n + 1, 0);

  for (int row = 0; row < n; ++row) {
    int j0 = n;  // virtual start column
    match_col[n] = row;
    std::vector<double> min_slack(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match_col[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double reduced = cost(i0, j) - u[i0] - v[j];
        if (reduced < min_slack[j]) {
          min_slack[j] = reduced;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != n);
    // Augment along the alternating path back to the virtual column.
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != n);
  }

  double total = 0.0;
  for (int j = 0; j < n; ++j)
    if (match_col[j] != n) total += cost(match_col[j], j);
  return total;
}

double w1_exact_assignment(const Mat& a, const Mat& b) {
  const int n = static_cast<int>(a.rows());
  if (n == 0 || b.rows() != n)
    throw ConfigError("w1_exact_assignment: clouds must be non-empty and of equal size");
  if (a.cols() != b.cols())
    throw ConfigError("w1_exact_assignment: clouds must share the sample dimension");
  if (n > kAssignmentCap)
    throw ConfigError("w1_exact_assignment: more than 512 samples per side; "
                      "subsample the clouds before calling");

  Mat cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).norm();
  return assignment_cost(cost) / static_cast<double>(n);
}

}  // namespace sfal
