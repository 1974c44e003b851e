#pragma once
#include <cmath>
#include <vector>

namespace testutil {

inline double rel_err(double got, double want) {
  return std::fabs(got - want) / std::fabs(want);
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;   // unbiased
  double se = 0.0;    // of the mean
};

inline MeanVar mean_var(const std::vector<double>& v) {
  MeanVar r;
  const double n = double(v.size());
  for (double x : v) r.mean += x;
  r.mean /= n;
  for (double x : v) r.var += (x - r.mean) * (x - r.mean);
  r.var /= (n - 1.0);
  r.se = std::sqrt(r.var / n);
  return r;
}

}  // namespace testutil
