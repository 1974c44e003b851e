#pragma once
#include <cstddef>
#include <vector>

namespace dflow {

// W1 between two empirical measures with equal point counts (uniform
// weights), cost = Euclidean distance.  exact: Jonker-Volgenant assignment,
// O(n^3); entropic: log-domain Sinkhorn with epsilon scaling.
double w1_exact(const std::vector<double>& a, const std::vector<double>& b, int n, int dim);
double w1_entropic(const std::vector<double>& a, const std::vector<double>& b, int n, int dim,
                   double eps_final = 5e-3, int iters_per_level = 120);
// dispatch on threshold (exact for n <= threshold)
double w1_auto(const std::vector<double>& a, const std::vector<double>& b, int n, int dim,
               int exact_threshold = 512);

// shortest-augmenting-path solution of the square assignment problem;
// returns the minimal total cost, cost(i,j) = c[i*n+j]
double assignment_cost(const std::vector<double>& c, int n, std::vector<int>* row_to_col = nullptr);

struct HistogramPair {
  double tv = 0.0;           // (1/2) sum |p - q|
  double rel_entropy = 0.0;  // sum p log(p/q), +inf when q vanishes where p > 0
  bool ckp_flag = false;     // tv > sqrt(2 * rel_entropy) + slack
};

// common-binning histogram comparison of two point clouds (uniform weights);
// the grid covers the union bounding box with the given cell size.
HistogramPair tv_histogram(const std::vector<double>& a, int na, const std::vector<double>& b,
                           int nb, int dim, double cell, double ckp_slack = 1e-9);

}  // namespace dflow
