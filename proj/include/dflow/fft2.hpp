#pragma once
#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <vector>

#include "dflow/fftw_util.hpp"

namespace dflow {

// in-place c2c 2-d transform pair on a row-major (iy, ix) buffer; FFTW plan
// creation is serialized because the planner is not thread-safe
struct Fft2 {
  int nx, ny;
  fftw_plan fwd, bwd;
  std::vector<std::complex<double>> buf;
  explicit Fft2(int nx_, int ny_) : nx(nx_), ny(ny_), buf(std::size_t(nx_) * ny_) {
    std::lock_guard<std::mutex> g(fftw_plan_mutex());
    auto* p = reinterpret_cast<fftw_complex*>(buf.data());
    fwd = fftw_plan_dft_2d(ny, nx, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_2d(ny, nx, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Fft2() {
    std::lock_guard<std::mutex> g(fftw_plan_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;
  void forward() { fftw_execute(fwd); }
  void backward() { fftw_execute(bwd); }
  std::complex<double>& at(int ix, int iy) { return buf[std::size_t(iy) * nx + ix]; }
};

inline double fourier_mode(int i, int n, double L) {
  const int s = (i <= n / 2) ? i : i - n;
  return 6.283185307179586476925287 * double(s) / L;
}

}  // namespace dflow
