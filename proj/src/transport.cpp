#include "dflow/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>

namespace dflow {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double point_dist(const double* p, const double* q, int dim) {
  double s = 0.0;
  for (int c = 0; c < dim; ++c) {
    const double d = p[c] - q[c];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> cost_matrix(const std::vector<double>& a, const std::vector<double>& b, int n,
                                int dim) {
  std::vector<double> c((std::size_t)n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      c[(std::size_t)i * n + j] = point_dist(&a[(std::size_t)i * dim], &b[(std::size_t)j * dim], dim);
  return c;
}

double logsumexp(const std::vector<double>& x) {
  double m = -kInf;
  for (double v : x) m = std::max(m, v);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}
}  // namespace

// Shortest augmenting path with dual potentials (Jonker-Volgenant flavour).
// Column n acts as the virtual start of each augmentation.
double assignment_cost(const std::vector<double>& c, int n, std::vector<int>* row_to_col) {
  if (n <= 0) return 0.0;
  if (c.size() != (std::size_t)n * n) throw std::invalid_argument("assignment_cost: bad matrix size");
  std::vector<double> u(n, 0.0), v(n + 1, 0.0), minv(n + 1, kInf);
  std::vector<int> p(n + 1, -1), way(n + 1, -1);
  std::vector<char> used(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    p[n] = i;
    int j0 = n;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      const double* row = &c[(std::size_t)i0 * n];
      int j1 = -1;
      double delta = kInf;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double cur = row[j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0) throw std::runtime_error("assignment_cost: no augmenting path (non-finite costs?)");
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          if (p[j] >= 0) u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != -1);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != n);
  }
  double total = 0.0;
  if (row_to_col) row_to_col->assign(n, -1);
  for (int j = 0; j < n; ++j) {
    total += c[(std::size_t)p[j] * n + j];
    if (row_to_col) (*row_to_col)[p[j]] = j;
  }
  return total;
}

double w1_exact(const std::vector<double>& a, const std::vector<double>& b, int n, int dim) {
  if (n > 4096) throw std::invalid_argument("w1_exact: n too large, use w1_entropic");
  if ((int)a.size() < n * dim || (int)b.size() < n * dim)
    throw std::invalid_argument("w1_exact: input shorter than n*dim");
  if (n == 0) return 0.0;
  const std::vector<double> c = cost_matrix(a, b, n, dim);
  return assignment_cost(c, n) / n;
}

double w1_entropic(const std::vector<double>& a, const std::vector<double>& b, int n, int dim,
                   double eps_final, int iters_per_level) {
  if (n == 0) return 0.0;
  const std::vector<double> c = cost_matrix(a, b, n, dim);
  double cmax = 0.0;
  for (double v : c) cmax = std::max(cmax, v);
  if (cmax == 0.0) return 0.0;
  const double log_a = -std::log((double)n);  // uniform weights
  std::vector<double> f(n, 0.0), g(n, 0.0), buf(n);
  double eps = 0.5 * cmax;
  const double eps_target = eps_final * cmax;
  while (true) {
    for (int it = 0; it < iters_per_level; ++it) {
      for (int i = 0; i < n; ++i) {
        const double* row = &c[(std::size_t)i * n];
        for (int j = 0; j < n; ++j) buf[j] = (g[j] - row[j]) / eps;
        f[i] = eps * (log_a - logsumexp(buf));
      }
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) buf[i] = (f[i] - c[(std::size_t)i * n + j]) / eps;
        g[j] = eps * (log_a - logsumexp(buf));
      }
    }
    if (eps <= eps_target) break;
    eps = std::max(0.5 * eps, eps_target);
  }
  // transport cost of the (approximately feasible) entropic plan
  double cost = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = &c[(std::size_t)i * n];
    for (int j = 0; j < n; ++j) {
      const double lp = (f[i] + g[j] - row[j]) / eps;
      if (lp > -40.0) cost += std::exp(lp) * row[j];
    }
  }
  return cost;
}

double w1_auto(const std::vector<double>& a, const std::vector<double>& b, int n, int dim,
               int exact_threshold) {
  if (n <= exact_threshold) return w1_exact(a, b, n, dim);
  return w1_entropic(a, b, n, dim);
}

HistogramPair tv_histogram(const std::vector<double>& a, int na, const std::vector<double>& b,
                           int nb, int dim, double cell, double ckp_slack) {
  if (dim > 3) throw std::invalid_argument("tv_histogram: dim > 3 not supported");
  if (cell <= 0.0) throw std::invalid_argument("tv_histogram: cell must be positive");
  double lo[3] = {kInf, kInf, kInf};
  auto scan = [&](const std::vector<double>& pts, int n) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < dim; ++c)
        lo[c] = std::min(lo[c], pts[(std::size_t)i * dim + c]);
  };
  scan(a, na);
  scan(b, nb);

  using Key = std::array<long, 3>;
  std::map<Key, std::pair<double, double>> hist;
  auto add = [&](const std::vector<double>& pts, int n, bool into_p) {
    const double w = 1.0 / n;
    for (int i = 0; i < n; ++i) {
      Key k = {0, 0, 0};
      for (int c = 0; c < dim; ++c)
        k[c] = (long)std::floor((pts[(std::size_t)i * dim + c] - lo[c]) / cell);
      auto& slot = hist[k];
      (into_p ? slot.first : slot.second) += w;
    }
  };
  add(a, na, true);
  add(b, nb, false);

  HistogramPair out;
  double l1 = 0.0, ent = 0.0;
  bool ent_inf = false;
  for (const auto& [k, pq] : hist) {
    (void)k;
    l1 += std::fabs(pq.first - pq.second);
    if (pq.first > 0.0) {
      if (pq.second <= 0.0)
        ent_inf = true;
      else
        ent += pq.first * std::log(pq.first / pq.second);
    }
  }
  out.tv = 0.5 * l1;
  out.rel_entropy = ent_inf ? kInf : std::max(ent, 0.0);
  out.ckp_flag = !ent_inf && out.tv > std::sqrt(2.0 * out.rel_entropy) + ckp_slack;
  return out;
}

}  // namespace dflow
