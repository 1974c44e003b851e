#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace dflow {

// Unit-cube lattice partition with the half-open convention
// D_z = { x : -1/2 <= x_i - z_i < 1/2 }.
struct CubePartition {
  int dim = 2;
  // lattice center of the cube containing x
  static long cube_coord(double x) { return long(std::floor(x + 0.5)); }
  void cube_index(const double* x, long* z) const {
    for (int i = 0; i < dim; ++i) z[i] = cube_coord(x[i]);
  }
};

// Uniform 2D grid; samples are interpreted as midpoints of h-cells for
// quadrature purposes.  data layout [(iy*nx+ix)*comps + c].
struct GridField {
  double ox = 0.0, oy = 0.0;
  double h = 1.0;
  int nx = 0, ny = 0;
  int comps = 1;
  bool periodic = false;
  std::vector<double> data;

  static GridField make(double ox, double oy, double h, int nx, int ny, int comps,
                        bool periodic = false) {
    GridField f;
    f.ox = ox; f.oy = oy; f.h = h; f.nx = nx; f.ny = ny; f.comps = comps; f.periodic = periodic;
    f.data.assign(std::size_t(nx) * ny * comps, 0.0);
    return f;
  }
  double x(int ix) const { return ox + ix * h; }
  double y(int iy) const { return oy + iy * h; }
  double& at(int ix, int iy, int c = 0) { return data[(std::size_t(iy) * nx + ix) * comps + c]; }
  double at(int ix, int iy, int c = 0) const {
    return data[(std::size_t(iy) * nx + ix) * comps + c];
  }
};

// K_2(x) = (x_2, -x_1) / (2 pi |x|^2); throws on x = 0.
std::array<double, 2> biot_savart(const std::array<double, 2>& x);

// Vortex-blob regularization: equals biot_savart exactly for |x| >= 2 eps,
// C^1 across the blend, bounded by 1/(2 pi eps), and behaves like
// (x_2,-x_1) |x|^2 / (2 pi eps^4) near 0.
std::array<double, 2> biot_savart_mollified(const std::array<double, 2>& x, double eps);

constexpr double kLocalizedNormInf = -1.0;  // sentinel for p = infinity

enum class LocalizedVariant { Tilde, Bar };  // sup over cubes / sum over cubes

double localized_norm(const GridField& f, double p, LocalizedVariant variant);

// E [ grad^j f ](x + xi), xi ~ N(0, sigma^2 I), by zero-padded FFT
// convolution; j = 0 returns comps components, j = 1 returns 2*comps
// (the gradient of each input component).
GridField gaussian_smooth(const GridField& f, double sigma, int j);

// spectral Leray projection (periodic grids): vhat - k (k . vhat)/|k|^2
GridField leray_project(const GridField& v);

// spectral velocity with curl u = omega on the torus; zero mode dropped
GridField velocity_from_vorticity_torus(const GridField& omega);

// u = K_2^eps * omega by zero-padded FFT on the grid (free-space convolution
// with the mollified kernel sampled at cell offsets, weight h^2).
GridField biot_savart_convolve(const GridField& omega, double eps);

void write_grid_csv(const GridField& f, const std::string& path);
void write_grid_binary(const GridField& f, const std::string& data_path,
                       const std::string& header_path);

}  // namespace dflow
