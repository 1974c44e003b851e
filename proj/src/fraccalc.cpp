#include "dflow/fraccalc.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "dflow/rng.hpp"
#include "dflow/special.hpp"
#include "dflow/threading.hpp"

namespace dflow {

namespace {

// raw inverse kernel before calibration: t^{H-1/2} (t-s)^{-1/2-H} s^{1/2-H}
inline double ktilde_raw(double H, double t, double s) {
  return std::pow(t, H - 0.5) * std::pow(t - s, -0.5 - H) * std::pow(s, 0.5 - H);
}

}  // namespace

double inversion_calibration_at(const HurstParams& h, double s, double t) {
  if (h.H >= 0.5) throw std::domain_error("inversion_calibration: needs H < 1/2");
  const double H = h.H;
  // \int_s^t K_H(t,r) ktilde_raw(r,s) dr; integrable singularities at both
  // ends: (r-s)^{-1/2-H} on the left, (t-r)^{H-1/2} inside K_H on the right.
  // Two Jacobi panels split at the midpoint handle each endpoint; one
  // refinement halves the panels again next to the endpoints.
  const QuadRule left = gauss_jacobi(64, 0.0, -0.5 - H);   // weight (r-s)^{-1/2-H}
  const QuadRule right = gauss_jacobi(64, H - 0.5, 0.0);   // weight (t-r)^{H-1/2}
  const QuadRule mid = gauss_legendre(64);

  auto left_panel = [&](double a, double b) {  // a == s
    const double half = 0.5 * (b - a), c = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < left.x.size(); ++i) {
      const double r = c + half * left.x[i];
      acc += left.w[i] * detail::volterra_kernel_incbeta(h, t, r) * std::pow(r, H - 0.5);
    }
    return acc * std::pow(half, 0.5 - H) * std::pow(s, 0.5 - H);
  };
  auto right_panel = [&](double a, double b) {  // b == t
    const double half = 0.5 * (b - a), c = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < right.x.size(); ++i) {
      const double r = c + half * right.x[i];
      // K_H with the (t-r)^{H-1/2} factor peeled off analytically
      const double smooth = detail::volterra_kernel_incbeta(h, t, r) * std::pow(t - r, 0.5 - H);
      acc += right.w[i] * smooth * std::pow(r, H - 0.5) * std::pow(r - s, -0.5 - H);
    }
    return acc * std::pow(half, H + 0.5) * std::pow(s, 0.5 - H);
  };
  auto mid_panel = [&](double a, double b) {
    const double half = 0.5 * (b - a), c = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < mid.x.size(); ++i) {
      const double r = c + half * mid.x[i];
      acc += mid.w[i] * detail::volterra_kernel_incbeta(h, t, r) * ktilde_raw(H, r, s);
    }
    return acc * half;
  };
  const double m1 = s + 0.25 * (t - s), m2 = s + 0.75 * (t - s);
  return left_panel(s, m1) + mid_panel(m1, m2) + right_panel(m2, t);
}

double inversion_calibration(const HurstParams& h) {
  static std::map<double, double> cache;
  static std::mutex mx;
  {
    std::lock_guard<std::mutex> g(mx);
    auto it = cache.find(h.H);
    if (it != cache.end()) return it->second;
  }
  const double c = inversion_calibration_at(h, 0.5, 1.0);
  std::lock_guard<std::mutex> g(mx);
  cache[h.H] = c;
  return c;
}

std::vector<double> tilde_transform(const AbsContPath& h, const HurstParams& hp) {
  if (hp.H >= 0.5)
    throw std::domain_error(
        "tilde_transform: kernel is non-integrable at H = 1/2; the weight "
        "degenerates to the classical Girsanov form handled in girsanov_weight");
  const double H = hp.H;
  const int N = h.grid.N, d = h.dim;
  const double dt = h.grid.dt();
  const double C = inversion_calibration(hp);
  const double p = 0.5 - H;
  std::vector<double> out(std::size_t(N + 1) * d, 0.0);
  for (int n = 1; n <= N; ++n) {
    const double tn = h.grid.node(n);
    const double tfac = std::pow(tn, H - 0.5) / C;
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double smid = (double(k) + 0.5) * dt;
        const double cell =
            (std::pow(tn - h.grid.node(k), p) - std::pow(tn - h.grid.node(k + 1), p)) / p;
        acc += std::pow(smid, p) * h.hdot_at(k, c) * cell;
      }
      out[std::size_t(n) * d + c] = tfac * acc;
    }
  }
  return out;
}

double inversion_residual(const HurstParams& hp, const TimeGrid& grid, const AbsContPath& h) {
  if (hp.H >= 0.5) throw std::domain_error("inversion_residual: needs H < 1/2");
  if (h.grid.N != grid.N || h.grid.T != grid.T)
    throw std::invalid_argument("inversion_residual: path grid mismatch");
  const double H = hp.H;
  const int N = grid.N, d = h.dim;
  const double dt = grid.dt();
  const std::vector<double> g = tilde_transform(h, hp);

  // forward kernel integral \int_0^{t_n} K_H(t_n,s) g(s) ds with g frozen at
  // left endpoints; the (t_n - s)^{H-1/2} factor of the first kernel term is
  // integrated exactly per cell, the remaining smooth factors are frozen at
  // cell midpoints.
  const double a = 1.0 - 2.0 * H, b = H + 0.5;
  const double Bab = beta_fn(a, b);
  double worst = 0.0;
  for (int n = 1; n <= N; ++n) {
    const double tn = grid.node(n);
    std::vector<double> rec(d, 0.0);
    for (int k = 0; k < n; ++k) {
      const double smid = (double(k) + 0.5) * dt;
      const double j1 =
          (std::pow(tn - grid.node(k), b) - std::pow(tn - grid.node(k + 1), b)) / b;
      const double inner =
          std::pow(smid, 2.0 * H - 1.0) * (Bab - inc_beta_lower(a, b, smid / tn));
      const double w = hp.cH * (std::pow(tn / smid, H - 0.5) * j1 +
                                (0.5 - H) * std::pow(smid, 0.5 - H) * inner * dt);
      for (int c = 0; c < d; ++c) rec[c] += w * g[std::size_t(k) * d + c];
    }
    for (int c = 0; c < d; ++c) worst = std::max(worst, std::fabs(h.value(n, c) - rec[c]));
  }
  return worst;
}

std::vector<GirsanovWeight> girsanov_weight(const std::vector<double>& b_along_path,
                                            const FbmEnsemble& ensemble, const HurstParams& hp,
                                            int threads) {
  if (!ensemble.has_driver())
    throw std::invalid_argument("girsanov_weight: ensemble has no driver increments "
                                "(sample with method=volterra)");
  const int N = ensemble.grid.N, d = ensemble.dim, R = ensemble.replicas;
  if (b_along_path.size() != std::size_t(R) * N * d)
    throw std::invalid_argument("girsanov_weight: b array size mismatch");
  const double dt = ensemble.grid.dt();
  std::vector<GirsanovWeight> out(R);

  if (hp.H == 0.5) {
    parallel_for(R, threads, [&](std::size_t m) {
      double stoch = 0.0, l2 = 0.0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < d; ++c) {
          const double bb = b_along_path[(m * N + n) * d + c];
          stoch += bb * ensemble.driver_inc(int(m), n, c);
          l2 += bb * bb * dt;
        }
      GirsanovWeight w;
      w.stoch_integral = stoch;
      w.l2_norm_sq = l2;
      w.log_z = -stoch - 0.5 * l2;
      w.z_T = std::exp(w.log_z);
      out[m] = w;
    });
    return out;
  }

  parallel_for(R, threads, [&](std::size_t m) {
    AbsContPath ib;
    ib.grid = ensemble.grid;
    ib.dim = d;
    ib.hdot.assign(std::size_t(N) * d, 0.0);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < d; ++c) ib.hdot[std::size_t(n) * d + c] = b_along_path[(m * N + n) * d + c];
    const std::vector<double> g = tilde_transform(ib, hp);
    double stoch = 0.0, l2 = 0.0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < d; ++c) {
        const double gn = g[std::size_t(n) * d + c];
        stoch += gn * ensemble.driver_inc(int(m), n, c);
        l2 += gn * gn * dt;
      }
    GirsanovWeight w;
    w.stoch_integral = stoch;
    w.l2_norm_sq = l2;
    w.log_z = -stoch - 0.5 * l2;
    w.z_T = std::exp(w.log_z);
    out[m] = w;
  });
  return out;
}

KhasminskiiReport khasminskii_diagnostic(const DriftField& b, const HurstParams& hp,
                                         const TimeGrid& grid, int dim, double lambda,
                                         int replicas, std::uint64_t seed, int threads) {
  const FbmEnsemble ens = sample_fbm(hp, grid, dim, replicas, FbmMethod::Volterra, seed, threads);
  const int N = grid.N;
  const double dt = grid.dt();
  std::vector<double> vals(replicas, 0.0);
  parallel_for(replicas, threads, [&](std::size_t m) {
    double l2 = 0.0;
    if (hp.H == 0.5) {
      // K-tilde is the identity-on-derivatives convention at H = 1/2
      std::vector<double> x(dim), bb(dim);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < dim; ++c) x[c] = ens.path(int(m), n, c);
        b(grid.node(n), x.data(), bb.data());
        for (int c = 0; c < dim; ++c) l2 += bb[c] * bb[c] * dt;
      }
    } else {
      AbsContPath ib;
      ib.grid = grid;
      ib.dim = dim;
      ib.hdot.assign(std::size_t(N) * dim, 0.0);
      std::vector<double> x(dim);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < dim; ++c) x[c] = ens.path(int(m), n, c);
        b(grid.node(n), x.data(), &ib.hdot[std::size_t(n) * dim]);
      }
      const std::vector<double> g = tilde_transform(ib, hp);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < dim; ++c) {
          const double gn = g[std::size_t(n) * dim + c];
          l2 += gn * gn * dt;
        }
    }
    vals[m] = std::exp(lambda * l2);
  });
  KhasminskiiReport rep;
  double acc = 0.0;
  for (int m = 0; m < replicas; ++m) {
    acc += vals[m];
    if (m + 1 == replicas / 4 || m + 1 == replicas / 2 || m + 1 == replicas)
      rep.running_means.push_back(acc / (m + 1));
  }
  rep.mean = acc / replicas;
  if (rep.running_means.size() >= 2) {
    const double last = rep.running_means.back();
    const double prev = rep.running_means[rep.running_means.size() - 2];
    rep.divergence_flag = std::fabs(last - prev) > 0.25 * std::fabs(last);
  }
  return rep;
}

std::vector<OccupationEstimate> occupation_moment_diagnostic(
    const ScalarField& f, const HurstParams& hp, const TimeGrid& grid, int dim,
    const std::vector<int>& ms, int replicas, std::uint64_t seed, int threads) {
  const FbmEnsemble ens = sample_fbm(hp, grid, dim, replicas, FbmMethod::Volterra, seed, threads);
  const int N = grid.N;
  const double dt = grid.dt();
  std::vector<double> integrals(replicas, 0.0);
  parallel_for(replicas, threads, [&](std::size_t m) {
    double acc = 0.0;
    std::vector<double> x(dim);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < dim; ++c) x[c] = ens.path(int(m), n, c);
      acc += f(grid.node(n), x.data()) * dt;
    }
    integrals[m] = acc;
  });
  std::vector<OccupationEstimate> out;
  for (int mm : ms) {
    OccupationEstimate est;
    est.m = mm;
    double s1 = 0.0, s2 = 0.0;
    for (int r = 0; r < replicas; ++r) {
      const double v = std::pow(std::fabs(integrals[r]), double(mm));
      s1 += v;
      s2 += v * v;
    }
    est.moment = s1 / replicas;
    const double var = std::max(0.0, s2 / replicas - est.moment * est.moment);
    est.std_error = std::sqrt(var / replicas);
    out.push_back(est);
  }
  return out;
}

}  // namespace dflow
