#include "dflow/fbm.hpp"

#include <fftw3.h>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dflow/fftw_util.hpp"
#include "dflow/rng.hpp"
#include "dflow/special.hpp"
#include "dflow/threading.hpp"

namespace dflow {

HurstParams HurstParams::make(double H) {
  if (!(H > 0.0) || H > 0.5) throw std::domain_error("HurstParams: need 0 < H <= 1/2");
  HurstParams p;
  p.H = H;
  p.qH = 1.0 / (1.0 - H);
  if (H == 0.5) {
    p.cH = 1.0;
  } else {
    p.cH = std::sqrt(2.0 * H / ((1.0 - 2.0 * H) * beta_fn(1.0 - 2.0 * H, H + 0.5)));
  }
  return p;
}

const char* fbm_method_name(FbmMethod m) {
  switch (m) {
    case FbmMethod::ExactCholesky: return "exact-cholesky";
    case FbmMethod::Circulant: return "circulant";
    case FbmMethod::Volterra: return "volterra";
  }
  return "?";
}

FbmMethod fbm_method_from_name(const std::string& s) {
  if (s == "exact-cholesky") return FbmMethod::ExactCholesky;
  if (s == "circulant") return FbmMethod::Circulant;
  if (s == "volterra") return FbmMethod::Volterra;
  throw std::invalid_argument("unknown fbm method: " + s);
}

double fbm_covariance(const HurstParams& h, double t, double s) {
  if (t < 0.0 || s < 0.0) throw std::domain_error("fbm_covariance: negative time");
  const double H2 = 2.0 * h.H;
  return 0.5 * (std::pow(t, H2) + std::pow(s, H2) - std::pow(std::fabs(t - s), H2));
}

namespace {

// \int_a^b r^{H-3/2} (r-s)^{H-1/2} dr with a >= s, by Gauss-Jacobi when the
// left endpoint is the singular point a == s, Gauss-Legendre otherwise.
double inner_integral_panel(double H, double s, double a, double b, const QuadRule& gj,
                            const QuadRule& gl) {
  const double half = 0.5 * (b - a), mid = 0.5 * (b + a);
  double acc = 0.0;
  if (a == s) {
    // substitute r = mid + half*x; (r-s) = half*(1+x) carries the Jacobi
    // weight (1+x)^{H-1/2}
    const double wfac = std::pow(half, H + 0.5);
    for (std::size_t i = 0; i < gj.x.size(); ++i) {
      const double r = mid + half * gj.x[i];
      acc += gj.w[i] * std::pow(r, H - 1.5);
    }
    return acc * wfac;
  }
  for (std::size_t i = 0; i < gl.x.size(); ++i) {
    const double r = mid + half * gl.x[i];
    acc += gl.w[i] * std::pow(r, H - 1.5) * std::pow(r - s, H - 0.5);
  }
  return acc * half;
}

struct KernelRules {
  QuadRule gj, gl;
  double H = -1.0;
};

const KernelRules& kernel_rules(double H) {
  thread_local KernelRules rules;
  if (rules.H != H) {
    rules.gj = gauss_jacobi(64, 0.0, H - 0.5);
    rules.gl = gauss_legendre(64);
    rules.H = H;
  }
  return rules;
}

}  // namespace

double volterra_kernel(const HurstParams& h, double t, double s) {
  if (!(s > 0.0) || !(s < t)) throw std::domain_error("volterra_kernel: need 0 < s < t");
  const double H = h.H;
  const double first = std::pow(t / s, H - 0.5) * std::pow(t - s, H - 0.5);
  if (H == 0.5) return h.cH * first;  // second term carries the factor (1/2-H) = 0
  const auto& rules = kernel_rules(H);
  // one refinement: split at the geometric mean, which separates the
  // (r-s)^{H-1/2} endpoint from the r^{H-3/2} short-s steepness
  const double m = std::sqrt(s * t);
  double integral;
  if (m > s && m < t) {
    integral = inner_integral_panel(H, s, s, m, rules.gj, rules.gl) +
               inner_integral_panel(H, s, m, t, rules.gj, rules.gl);
  } else {
    integral = inner_integral_panel(H, s, s, t, rules.gj, rules.gl);
  }
  return h.cH * (first + (0.5 - H) * std::pow(s, 0.5 - H) * integral);
}

namespace detail {

double volterra_kernel_incbeta(const HurstParams& h, double t, double s) {
  if (!(s > 0.0) || !(s < t)) throw std::domain_error("volterra_kernel: need 0 < s < t");
  const double H = h.H;
  const double first = std::pow(t / s, H - 0.5) * std::pow(t - s, H - 0.5);
  if (H > 0.49) {
    if (H == 0.5) return h.cH * first;
    return volterra_kernel(h, t, s);  // closed form cancels badly as 1-2H -> 0
  }
  const double a = 1.0 - 2.0 * H, b = H + 0.5;
  const double integral = std::pow(s, 2.0 * H - 1.0) * (beta_fn(a, b) - inc_beta_lower(a, b, s / t));
  return h.cH * (first + (0.5 - H) * std::pow(s, 0.5 - H) * integral);
}

}  // namespace detail

namespace {

void sample_cholesky(FbmEnsemble& e, int threads) {
  const int N = e.grid.N, d = e.dim;
  Eigen::MatrixXd C(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = fbm_covariance(e.hurst, e.grid.node(i + 1), e.grid.node(j + 1));
      C(i, j) = v;
      C(j, i) = v;
    }
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("exact-cholesky: covariance factorization failed");
  const Eigen::MatrixXd L = llt.matrixL();
  parallel_for(e.replicas, threads, [&](std::size_t m) {
    Eigen::VectorXd z(N), w(N);
    for (int c = 0; c < d; ++c) {
      auto rng = RngStream::substream(e.seed, {std::uint64_t(m), std::uint64_t(c)});
      for (int i = 0; i < N; ++i) z(i) = rng.gaussian();
      w.noalias() = L * z;
      for (int n = 1; n <= N; ++n)
        e.paths[(m * (N + 1) + n) * d + c] = w(n - 1);
    }
  });
}

// Davies-Harte style circulant embedding of fractional Gaussian noise.
// The embedding is nonnegative definite for H <= 1/2; we still check and
// fail loudly if an eigenvalue is significantly negative.
void sample_circulant(FbmEnsemble& e, int threads) {
  const int N = e.grid.N, d = e.dim;
  const int M = 2 * N;
  const double dt = e.grid.dt();
  const double var = std::pow(dt, 2.0 * e.hurst.H);
  std::vector<double> c(M);
  for (int k = 0; k <= N; ++k) {
    const double kk = double(k);
    c[k] = 0.5 * var *
           (std::pow(std::fabs(kk + 1.0), 2.0 * e.hurst.H) +
            std::pow(std::fabs(kk - 1.0), 2.0 * e.hurst.H) - 2.0 * std::pow(kk, 2.0 * e.hurst.H));
  }
  for (int k = N + 1; k < M; ++k) c[k] = c[M - k];

  std::vector<std::complex<double>> lam(M);
  {
    std::vector<std::complex<double>> in(M), out(M);
    for (int k = 0; k < M; ++k) in[k] = c[k];
    fftw_plan plan = fftw_plan_dft_1d(M, reinterpret_cast<fftw_complex*>(in.data()),
                                      reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                      FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    lam = out;
  }
  double lmax = 0.0, lmin = 0.0;
  for (int k = 0; k < M; ++k) {
    lmax = std::max(lmax, lam[k].real());
    lmin = std::min(lmin, lam[k].real());
  }
  if (lmin < -1e-9 * lmax)
    throw std::runtime_error(
        "circulant embedding is not nonnegative definite for this configuration; "
        "use method=exact-cholesky");
  std::vector<double> sqrt_lam(M);
  for (int k = 0; k < M; ++k) sqrt_lam[k] = std::sqrt(std::max(0.0, lam[k].real()));

  // X = FFT(sqrt(lam) .* Z)/sqrt(M), Z complex standard: Re X has covariance c
  parallel_for(e.replicas, threads, [&](std::size_t m) {
    std::vector<std::complex<double>> in(M), out(M);
    fftw_plan plan;
    {
      // fftw planning is not thread-safe (execution is)
      std::lock_guard<std::mutex> g(fftw_plan_mutex());
      plan = fftw_plan_dft_1d(M, reinterpret_cast<fftw_complex*>(in.data()),
                              reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                              FFTW_ESTIMATE);
    }
    const double scale = 1.0 / std::sqrt(double(M));
    for (int c2 = 0; c2 < d; ++c2) {
      auto rng = RngStream::substream(e.seed, {std::uint64_t(m), std::uint64_t(c2)});
      for (int k = 0; k < M; ++k) {
        const double a = rng.gaussian(), b = rng.gaussian();
        in[k] = sqrt_lam[k] * std::complex<double>(a, b);
      }
      fftw_execute(plan);
      double acc = 0.0;
      for (int n = 1; n <= N; ++n) {
        acc += out[n - 1].real() * scale;  // fGn increment n-1
        e.paths[(m * (N + 1) + n) * d + c2] = acc;
      }
    }
    {
      std::lock_guard<std::mutex> g(fftw_plan_mutex());
      fftw_destroy_plan(plan);
    }
  });
}

void sample_volterra(FbmEnsemble& e, int threads) {
  const int N = e.grid.N, d = e.dim;
  const double dt = e.grid.dt();
  // K[n][k] = K_H(t_n, t_{k+1/2}), n = 1..N, k = 0..n-1 (lower triangle)
  std::vector<double> K(std::size_t(N) * N, 0.0);
  parallel_for(N, threads, [&](std::size_t row) {
    const int n = int(row) + 1;
    const double tn = e.grid.node(n);
    for (int k = 0; k < n; ++k) {
      const double mid = (double(k) + 0.5) * dt;
      K[row * N + k] = detail::volterra_kernel_incbeta(e.hurst, tn, mid);
    }
  });
  const double sdt = std::sqrt(dt);
  parallel_for(e.replicas, threads, [&](std::size_t m) {
    for (int c = 0; c < d; ++c) {
      auto rng = RngStream::substream(e.seed, {std::uint64_t(m), std::uint64_t(c)});
      std::vector<double> dw(N);
      for (int k = 0; k < N; ++k) {
        dw[k] = sdt * rng.gaussian();
        e.driver[(m * N + k) * d + c] = dw[k];
      }
      for (int n = 1; n <= N; ++n) {
        const double* row = &K[std::size_t(n - 1) * N];
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += row[k] * dw[k];
        e.paths[(m * (N + 1) + n) * d + c] = acc;
      }
    }
  });
}

}  // namespace

FbmEnsemble sample_fbm(const HurstParams& h, const TimeGrid& grid, int dim, int replicas,
                       FbmMethod method, std::uint64_t seed, int threads) {
  if (replicas < 1) throw std::invalid_argument("sample_fbm: replicas >= 1");
  if (dim < 1) throw std::invalid_argument("sample_fbm: dim >= 1");
  if (grid.N < 1 || !(grid.T > 0.0)) throw std::invalid_argument("sample_fbm: bad grid");
  FbmEnsemble e;
  e.hurst = h;
  e.grid = grid;
  e.dim = dim;
  e.replicas = replicas;
  e.method = method;
  e.seed = seed;
  e.paths.assign(std::size_t(replicas) * (grid.N + 1) * dim, 0.0);
  if (method == FbmMethod::Volterra) e.driver.assign(std::size_t(replicas) * grid.N * dim, 0.0);
  switch (method) {
    case FbmMethod::ExactCholesky: sample_cholesky(e, threads); break;
    case FbmMethod::Circulant: sample_circulant(e, threads); break;
    case FbmMethod::Volterra: sample_volterra(e, threads); break;
  }
  return e;
}

void write_ensemble_csv(const FbmEnsemble& e, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "replica,step,component,value\n";
  char buf[64];
  for (int m = 0; m < e.replicas; ++m)
    for (int n = 0; n <= e.grid.N; ++n)
      for (int c = 0; c < e.dim; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", e.path(m, n, c));
        out << m << ',' << n << ',' << c << ',' << buf << '\n';
      }
}

void write_ensemble_binary(const FbmEnsemble& e, const std::string& data_path,
                           const std::string& header_path) {
  {
    std::ofstream out(data_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + data_path);
    out.write(reinterpret_cast<const char*>(e.paths.data()),
              std::streamsize(e.paths.size() * sizeof(double)));
  }
  std::ofstream hdr(header_path);
  if (!hdr) throw std::runtime_error("cannot open " + header_path);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"H\": %.17g, \"T\": %.17g, \"N\": %d, \"dim\": %d, \"replicas\": %d, "
                "\"method\": \"%s\", \"seed\": %llu}\n",
                e.hurst.H, e.grid.T, e.grid.N, e.dim, e.replicas, fbm_method_name(e.method),
                static_cast<unsigned long long>(e.seed));
  hdr << buf;
}

}  // namespace dflow
