#pragma once

#include <cstdint>
#include <vector>

#include "sfal/model.hpp"

namespace sfal {

// Exact 1-Wasserstein distance between two equal-size empirical clouds on the
// line: sort both and average |a_(i) - b_(i)|.
double w1_exact_1d(std::vector<double> a, std::vector<double> b);

// Exact 1-Wasserstein distance between equal-size clouds in R^m via an optimal
// assignment under Euclidean cost, solved by shortest augmenting paths with
// dual potentials. Rows are samples. Capped at 512 samples per side.
inline constexpr int kAssignmentCap = 512;
double w1_exact_assignment(const Mat& a, const Mat& b);

// Internal building block, exposed for testing: minimal-cost perfect matching
// value for an explicit cost matrix.
double assignment_cost(const Mat& cost);

}  // namespace sfal
