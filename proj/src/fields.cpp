#include "dflow/fields.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "dflow/fft2.hpp"
#include "dflow/fftw_util.hpp"

namespace dflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
}

std::array<double, 2> biot_savart(const std::array<double, 2>& x) {
  const double r2 = x[0] * x[0] + x[1] * x[1];
  if (r2 == 0.0) throw std::domain_error("biot_savart: singular at x = 0");
  const double s = 1.0 / (kTwoPi * r2);
  return {x[1] * s, -x[0] * s};
}

std::array<double, 2> biot_savart_mollified(const std::array<double, 2>& x, double eps) {
  if (!(eps > 0.0)) throw std::domain_error("biot_savart_mollified: eps > 0");
  const double r2 = x[0] * x[0] + x[1] * x[1];
  const double q = r2 / (eps * eps);
  if (q >= 4.0) return biot_savart(x);
  // cubic profile in q = |x|^2/eps^2: P(q) = q - 7/16 q^2 + 13/256 q^3.
  // P(4) = 1/4 and P'(4) = -1/16 match 1/q at the seam, so the kernel is C^1;
  // max_rho rho P(rho^2) < 1, giving the 1/(2 pi eps) bound.
  const double P = q * (1.0 + q * (-0.4375 + 0.05078125 * q));
  const double s = P / (kTwoPi * eps * eps);
  return {x[1] * s, -x[0] * s};
}

double localized_norm(const GridField& f, double p, LocalizedVariant variant) {
  if (f.comps != 1) throw std::invalid_argument("localized_norm: scalar fields only");
  const double ratio = 0.5 / f.h;
  if (std::fabs(ratio - std::round(ratio)) > 1e-9 * ratio)
    throw std::invalid_argument("localized_norm: spacing must divide 1/2");
  const bool inf = (p == kLocalizedNormInf) || std::isinf(p);
  if (!inf && p < 1.0) throw std::invalid_argument("localized_norm: p >= 1");
  const double cellw = f.h * f.h;
  std::map<std::pair<long, long>, double> cubes;
  for (int iy = 0; iy < f.ny; ++iy)
    for (int ix = 0; ix < f.nx; ++ix) {
      const double v = std::fabs(f.at(ix, iy));
      const auto key = std::make_pair(CubePartition::cube_coord(f.x(ix)),
                                      CubePartition::cube_coord(f.y(iy)));
      auto& acc = cubes[key];
      if (inf)
        acc = std::max(acc, v);
      else
        acc += std::pow(v, p) * cellw;
    }
  double tilde = 0.0, bar = 0.0;
  for (auto& [key, acc] : cubes) {
    const double nrm = inf ? acc : std::pow(acc, 1.0 / p);
    tilde = std::max(tilde, nrm);
    bar += nrm;
  }
  return variant == LocalizedVariant::Tilde ? tilde : bar;
}

namespace {
inline double wavenumber(int i, int n, double L) { return fourier_mode(i, n, L); }
}  // namespace

GridField gaussian_smooth(const GridField& f, double sigma, int j) {
  if (!(sigma > 0.0)) throw std::domain_error("gaussian_smooth: sigma > 0");
  if (j != 0 && j != 1) throw std::invalid_argument("gaussian_smooth: j in {0,1}");
  // periodic data convolves on its own torus, so the unit-mass kernel preserves
  // constants exactly; non-periodic data is zero-extended on a doubled window so
  // the circular convolution cannot wrap
  const int Px = f.periodic ? f.nx : 2 * f.nx;
  const int Py = f.periodic ? f.ny : 2 * f.ny;
  const int ncomp_out = (j == 0) ? f.comps : 2 * f.comps;
  GridField out = GridField::make(f.ox, f.oy, f.h, f.nx, f.ny, ncomp_out, f.periodic);

  // wrapped kernel samples and their discrete mass
  std::vector<double> gauss(std::size_t(Px) * Py);
  double mass = 0.0;
  for (int iy = 0; iy < Py; ++iy)
    for (int ix = 0; ix < Px; ++ix) {
      const double dx = ((ix <= Px / 2) ? ix : ix - Px) * f.h;
      const double dy = ((iy <= Py / 2) ? iy : iy - Py) * f.h;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      gauss[std::size_t(iy) * Px + ix] = g;
      mass += g;
    }

  Fft2 kf(Px, Py), df(Px, Py);
  const int nderiv = (j == 0) ? 1 : 2;
  for (int c = 0; c < f.comps; ++c) {
    for (int dcomp = 0; dcomp < nderiv; ++dcomp) {
      // kernel: normalized gaussian (j=0) or its gradient component (j=1)
      for (int iy = 0; iy < Py; ++iy)
        for (int ix = 0; ix < Px; ++ix) {
          const double dx = ((ix <= Px / 2) ? ix : ix - Px) * f.h;
          const double dy = ((iy <= Py / 2) ? iy : iy - Py) * f.h;
          double k = gauss[std::size_t(iy) * Px + ix] / mass;
          if (j == 1) {
            // the half-window offset is its own mirror image on the wrapped
            // window, so the odd derivative factor must vanish there
            const double fx = (Px % 2 == 0 && ix == Px / 2) ? 0.0 : dx;
            const double fy = (Py % 2 == 0 && iy == Py / 2) ? 0.0 : dy;
            k *= -((dcomp == 0) ? fx : fy) / (sigma * sigma);
          }
          kf.at(ix, iy) = k;
        }
      kf.forward();
      for (auto& z : df.buf) z = 0.0;
      for (int iy = 0; iy < f.ny; ++iy)
        for (int ix = 0; ix < f.nx; ++ix) df.at(ix, iy) = f.at(ix, iy, c);
      df.forward();
      for (std::size_t i = 0; i < df.buf.size(); ++i) df.buf[i] *= kf.buf[i];
      df.backward();
      const double scale = 1.0 / (double(Px) * Py);
      for (int iy = 0; iy < f.ny; ++iy)
        for (int ix = 0; ix < f.nx; ++ix)
          out.at(ix, iy, c * nderiv + dcomp) = df.at(ix, iy).real() * scale;
    }
  }
  return out;
}

GridField leray_project(const GridField& v) {
  if (!v.periodic) throw std::invalid_argument("leray_project: periodic grid required");
  if (v.comps != 2) throw std::invalid_argument("leray_project: 2-component fields only");
  const int nx = v.nx, ny = v.ny;
  const double Lx = nx * v.h, Ly = ny * v.h;
  Fft2 f1(nx, ny), f2(nx, ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      f1.at(ix, iy) = v.at(ix, iy, 0);
      f2.at(ix, iy) = v.at(ix, iy, 1);
    }
  f1.forward();
  f2.forward();
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      if (ix == 0 && iy == 0) continue;  // zero mode untouched
      const double kx = wavenumber(ix, nx, Lx), ky = wavenumber(iy, ny, Ly);
      const double k2 = kx * kx + ky * ky;
      // the sign of a Nyquist frequency is not determined by the real samples,
      // so the k_x k_y cross term of the projector is ambiguous on these modes;
      // the only symmetric idempotent choice is to project them to zero
      const bool axq = (nx % 2 == 0 && ix == nx / 2);
      const bool ayq = (ny % 2 == 0 && iy == ny / 2);
      if ((axq && ky != 0.0) || (ayq && kx != 0.0)) {
        f1.at(ix, iy) = 0.0;
        f2.at(ix, iy) = 0.0;
        continue;
      }
      const auto dot = (kx * f1.at(ix, iy) + ky * f2.at(ix, iy)) / k2;
      f1.at(ix, iy) -= kx * dot;
      f2.at(ix, iy) -= ky * dot;
    }
  f1.backward();
  f2.backward();
  GridField out = GridField::make(v.ox, v.oy, v.h, nx, ny, 2, true);
  const double scale = 1.0 / (double(nx) * ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      out.at(ix, iy, 0) = f1.at(ix, iy).real() * scale;
      out.at(ix, iy, 1) = f2.at(ix, iy).real() * scale;
    }
  return out;
}

GridField velocity_from_vorticity_torus(const GridField& omega) {
  if (!omega.periodic)
    throw std::invalid_argument("velocity_from_vorticity_torus: periodic grid required");
  if (omega.comps != 1)
    throw std::invalid_argument("velocity_from_vorticity_torus: scalar vorticity required");
  const int nx = omega.nx, ny = omega.ny;
  const double Lx = nx * omega.h, Ly = ny * omega.h;
  Fft2 w(nx, ny), u1(nx, ny), u2(nx, ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) w.at(ix, iy) = omega.at(ix, iy);
  w.forward();
  const std::complex<double> I(0.0, 1.0);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      if (ix == 0 && iy == 0) {
        u1.at(ix, iy) = 0.0;
        u2.at(ix, iy) = 0.0;
        continue;
      }
      const double kx = wavenumber(ix, nx, Lx), ky = wavenumber(iy, ny, Ly);
      const double k2 = kx * kx + ky * ky;
      // periodic analogue of the free-space kernel (x2, -x1)/(2 pi |x|^2):
      // u1hat = -i ky what / k^2, u2hat = i kx what / k^2, zero mean mode.
      // a Nyquist mode of the real samples is a pure cosine whose sampled
      // derivative vanishes at the nodes, so the odd i*k factors are zero there
      const double kxd = (nx % 2 == 0 && ix == nx / 2) ? 0.0 : kx;
      const double kyd = (ny % 2 == 0 && iy == ny / 2) ? 0.0 : ky;
      u1.at(ix, iy) = -I * kyd * w.at(ix, iy) / k2;
      u2.at(ix, iy) = I * kxd * w.at(ix, iy) / k2;
    }
  u1.backward();
  u2.backward();
  GridField out = GridField::make(omega.ox, omega.oy, omega.h, nx, ny, 2, true);
  const double scale = 1.0 / (double(nx) * ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      out.at(ix, iy, 0) = u1.at(ix, iy).real() * scale;
      out.at(ix, iy, 1) = u2.at(ix, iy).real() * scale;
    }
  return out;
}

GridField biot_savart_convolve(const GridField& omega, double eps) {
  if (omega.comps != 1) throw std::invalid_argument("biot_savart_convolve: scalar input");
  const int nx = omega.nx, ny = omega.ny;
  const int Px = 2 * nx, Py = 2 * ny;
  Fft2 w(Px, Py), kc(Px, Py);
  for (auto& z : w.buf) z = 0.0;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) w.at(ix, iy) = omega.at(ix, iy);
  w.forward();
  GridField out = GridField::make(omega.ox, omega.oy, omega.h, nx, ny, 2, omega.periodic);
  const double scale = omega.h * omega.h / (double(Px) * Py);
  for (int c = 0; c < 2; ++c) {
    for (int iy = 0; iy < Py; ++iy)
      for (int ix = 0; ix < Px; ++ix) {
        const double dx = ((ix <= Px / 2) ? ix : ix - Px) * omega.h;
        const double dy = ((iy <= Py / 2) ? iy : iy - Py) * omega.h;
        const auto k = biot_savart_mollified({dx, dy}, eps);
        kc.at(ix, iy) = k[c];
      }
    kc.forward();
    std::vector<std::complex<double>> prod(w.buf.size());
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = w.buf[i] * kc.buf[i];
    kc.buf = prod;
    kc.backward();
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) out.at(ix, iy, c) = kc.at(ix, iy).real() * scale;
  }
  return out;
}

void write_grid_csv(const GridField& f, const std::string& path) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot open " + path);
  outf << "x,y";
  for (int c = 0; c < f.comps; ++c) outf << ",c" << c;
  outf << "\n";
  char buf[64];
  for (int iy = 0; iy < f.ny; ++iy)
    for (int ix = 0; ix < f.nx; ++ix) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", f.x(ix), f.y(iy));
      outf << buf;
      for (int c = 0; c < f.comps; ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", f.at(ix, iy, c));
        outf << buf;
      }
      outf << '\n';
    }
}

void write_grid_binary(const GridField& f, const std::string& data_path,
                       const std::string& header_path) {
  {
    std::ofstream outf(data_path, std::ios::binary);
    if (!outf) throw std::runtime_error("cannot open " + data_path);
    outf.write(reinterpret_cast<const char*>(f.data.data()),
               std::streamsize(f.data.size() * sizeof(double)));
  }
  std::ofstream hdr(header_path);
  if (!hdr) throw std::runtime_error("cannot open " + header_path);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"origin\": [%.17g, %.17g], \"spacing\": %.17g, \"shape\": [%d, %d], "
                "\"comps\": %d, \"periodic\": %s}\n",
                f.ox, f.oy, f.h, f.nx, f.ny, f.comps, f.periodic ? "true" : "false");
  hdr << buf;
}

}  // namespace dflow
