#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace dflow {

// Hurst exponent with the derived constants used throughout.
//   q_H = 1/(1-H)
//   c_H = sqrt( 2H / ((1-2H) * B(1-2H, H+1/2)) ),  c_{1/2} = 1
struct HurstParams {
  double H;
  double qH;
  double cH;
  static HurstParams make(double H);
};

struct TimeGrid {
  double T = 1.0;
  int N = 1;
  double dt() const { return T / N; }
  double node(int n) const { return T * double(n) / double(N); }
};

enum class FbmMethod { ExactCholesky, Circulant, Volterra };

const char* fbm_method_name(FbmMethod m);
FbmMethod fbm_method_from_name(const std::string& s);

// Sampled fractional Brownian paths.  paths stores positions at nodes
// t_0..t_N (so N+1 per path, starting at 0); driver stores the standard
// Brownian increments when method == Volterra.
struct FbmEnsemble {
  HurstParams hurst;
  TimeGrid grid;
  int dim = 1;
  int replicas = 0;
  FbmMethod method = FbmMethod::ExactCholesky;
  std::uint64_t seed = 0;
  std::vector<double> paths;   // [(m*(N+1)+n)*dim + c]
  std::vector<double> driver;  // [(m*N+k)*dim + c], empty unless Volterra

  bool has_driver() const { return !driver.empty(); }
  double path(int m, int n, int c) const {
    return paths[(std::size_t(m) * (grid.N + 1) + n) * dim + c];
  }
  double driver_inc(int m, int k, int c) const {
    return driver[(std::size_t(m) * grid.N + k) * dim + c];
  }
};

// Exact fBm covariance (1/2)(t^{2H} + s^{2H} - |t-s|^{2H}).
double fbm_covariance(const HurstParams& h, double t, double s);

// Volterra kernel K_H(t,s) for 0 < s < t:
//   K_H(t,s) = c_H [ (t/s)^{H-1/2}(t-s)^{H-1/2}
//                    + (1/2-H) s^{1/2-H} \int_s^t r^{H-3/2}(r-s)^{H-1/2} dr ].
// The inner integral is evaluated by a 64-node Gauss-Jacobi rule matched to
// the (r-s)^{H-1/2} endpoint factor, refined once by splitting at the
// geometric mean sqrt(s t).
double volterra_kernel(const HurstParams& h, double t, double s);

namespace detail {
// Same kernel through the incomplete-beta closed form of the inner integral:
//   \int_s^t r^{H-3/2}(r-s)^{H-1/2} dr
//     = s^{2H-1} [ B(1-2H, H+1/2) - B_{s/t}(1-2H, H+1/2) ].
// Used as the fast path when filling kernel matrices; unit tests pin the two
// routes against each other.
double volterra_kernel_incbeta(const HurstParams& h, double t, double s);
}  // namespace detail

FbmEnsemble sample_fbm(const HurstParams& h, const TimeGrid& grid, int dim, int replicas,
                       FbmMethod method, std::uint64_t seed, int threads = 1);

// CSV (replica, step, component, value) and binary dump with a JSON header.
void write_ensemble_csv(const FbmEnsemble& e, const std::string& path);
void write_ensemble_binary(const FbmEnsemble& e, const std::string& data_path,
                           const std::string& header_path);

}  // namespace dflow
