#include "dflow/nse.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dflow/fft2.hpp"

namespace dflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
}

VelocityField forward_velocity(const FlowEnsemble& ens, const DiscreteSignedMeasure& nu0,
                               double eps, int step, const GridField& layout, int threads) {
  VelocityField out;
  out.field = particle_velocity(ens, nu0, eps, step, layout, threads);
  out.t = ens.time_of(step);
  out.eps = eps;
  out.source = "particle";
  return out;
}

double lamb_oseen_speed(double gamma, double nu, double t, double r) {
  if (!(t > 0.0) || !(nu > 0.0)) throw std::domain_error("lamb_oseen: t > 0 and nu > 0");
  if (r == 0.0) return 0.0;
  // -expm1 keeps the r -> 0 limit gamma*r/(8 pi nu t) accurate
  return gamma * -std::expm1(-r * r / (4.0 * nu * t)) / (kTwoPi * r);
}

VelocityField lamb_oseen(double gamma, double nu, double t, const GridField& layout) {
  VelocityField out;
  out.field = GridField::make(layout.ox, layout.oy, layout.h, layout.nx, layout.ny, 2,
                              layout.periodic);
  out.t = t;
  out.source = "closed-form";
  for (int iy = 0; iy < layout.ny; ++iy)
    for (int ix = 0; ix < layout.nx; ++ix) {
      const double x = layout.x(ix), y = layout.y(iy);
      const double r = std::hypot(x, y);
      if (r == 0.0) continue;
      const double s = lamb_oseen_speed(gamma, nu, t, r) / r;
      out.field.at(ix, iy, 0) = y * s;
      out.field.at(ix, iy, 1) = -x * s;
    }
  return out;
}

double div_grad_ratio(const GridField& u) {
  if (u.comps != 2) throw std::invalid_argument("div_grad_ratio: 2-component field required");
  if (u.nx < 3 || u.ny < 3) throw std::invalid_argument("div_grad_ratio: grid too small");
  double div2 = 0.0, grad2 = 0.0;
  const double inv2h = 1.0 / (2.0 * u.h);
  for (int iy = 1; iy + 1 < u.ny; ++iy)
    for (int ix = 1; ix + 1 < u.nx; ++ix) {
      const double dux_dx = (u.at(ix + 1, iy, 0) - u.at(ix - 1, iy, 0)) * inv2h;
      const double dux_dy = (u.at(ix, iy + 1, 0) - u.at(ix, iy - 1, 0)) * inv2h;
      const double duy_dx = (u.at(ix + 1, iy, 1) - u.at(ix - 1, iy, 1)) * inv2h;
      const double duy_dy = (u.at(ix, iy + 1, 1) - u.at(ix, iy - 1, 1)) * inv2h;
      const double d = dux_dx + duy_dy;
      div2 += d * d;
      grad2 += dux_dx * dux_dx + dux_dy * dux_dy + duy_dx * duy_dx + duy_dy * duy_dy;
    }
  if (grad2 == 0.0) return 0.0;
  return std::sqrt(div2 / grad2);
}

// ---------------------------------------------------------------------------
// pseudo-spectral oracle
// ---------------------------------------------------------------------------

namespace {
struct SpectralWork {
  int n;
  double L;
  std::vector<double> kx, ky, k2inv;
  std::vector<char> mask;  // 2/3-rule pass band
  Fft2 f;

  SpectralWork(int n_, double L_) : n(n_), L(L_), f(n_, n_) {
    kx.resize((std::size_t)n * n);
    ky.resize((std::size_t)n * n);
    k2inv.resize((std::size_t)n * n);
    mask.resize((std::size_t)n * n);
    const int kmax = n / 3;
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) {
        const std::size_t id = (std::size_t)iy * n + ix;
        kx[id] = fourier_mode(ix, n, L);
        ky[id] = fourier_mode(iy, n, L);
        const double k2 = kx[id] * kx[id] + ky[id] * ky[id];
        k2inv[id] = k2 > 0.0 ? 1.0 / k2 : 0.0;
        const int sx = ix <= n / 2 ? ix : ix - n;
        const int sy = iy <= n / 2 ? iy : iy - n;
        mask[id] = (std::abs(sx) <= kmax && std::abs(sy) <= kmax) ? 1 : 0;
      }
  }
};

using Cvec = std::vector<std::complex<double>>;

// -dealias(FFT(u . grad w)) evaluated pseudo-spectrally; also reports max|u|
Cvec nonlinear_term(SpectralWork& w, const Cvec& what, double* umax_out) {
  const int n = w.n;
  const std::size_t sz = (std::size_t)n * n;
  const std::complex<double> I(0.0, 1.0);
  Cvec u1(sz), u2(sz), wx(sz), wy(sz);
  auto to_real = [&](const Cvec& src, Cvec& dst) {
    std::copy(src.begin(), src.end(), w.f.buf.begin());
    w.f.backward();
    std::copy(w.f.buf.begin(), w.f.buf.end(), dst.begin());
  };
  Cvec tmp(sz);
  for (std::size_t i = 0; i < sz; ++i) tmp[i] = -I * w.ky[i] * what[i] * w.k2inv[i];
  to_real(tmp, u1);
  for (std::size_t i = 0; i < sz; ++i) tmp[i] = I * w.kx[i] * what[i] * w.k2inv[i];
  to_real(tmp, u2);
  for (std::size_t i = 0; i < sz; ++i) tmp[i] = I * w.kx[i] * what[i];
  to_real(tmp, wx);
  for (std::size_t i = 0; i < sz; ++i) tmp[i] = I * w.ky[i] * what[i];
  to_real(tmp, wy);
  const double scale = 1.0 / double(sz);
  double umax = 0.0;
  for (std::size_t i = 0; i < sz; ++i) {
    const double a = u1[i].real() * scale, b = u2[i].real() * scale;
    umax = std::max(umax, std::max(std::fabs(a), std::fabs(b)));
    w.f.buf[i] = a * wx[i].real() * scale + b * wy[i].real() * scale;
  }
  if (umax_out) *umax_out = umax;
  w.f.forward();
  Cvec out(sz);
  for (std::size_t i = 0; i < sz; ++i) out[i] = w.mask[i] ? -w.f.buf[i] : 0.0;
  return out;
}
}  // namespace

SpectralResult spectral_oracle(const GridField& omega0, double nu, double dt, int steps) {
  if (!omega0.periodic || omega0.comps != 1)
    throw std::invalid_argument("spectral_oracle: periodic scalar vorticity required");
  if (omega0.nx != omega0.ny) throw std::invalid_argument("spectral_oracle: square grid required");
  if (!(dt > 0.0) || steps < 0) throw std::invalid_argument("spectral_oracle: bad dt/steps");
  const int n = omega0.nx;
  const double L = n * omega0.h;
  SpectralWork w(n, L);
  const std::size_t sz = (std::size_t)n * n;

  Cvec what(sz);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) w.f.buf[(std::size_t)iy * n + ix] = omega0.at(ix, iy);
  w.f.forward();
  std::copy(w.f.buf.begin(), w.f.buf.end(), what.begin());

  std::vector<double> E(sz), E2(sz);
  for (std::size_t i = 0; i < sz; ++i) {
    const double k2 = w.kx[i] * w.kx[i] + w.ky[i] * w.ky[i];
    E[i] = std::exp(-nu * k2 * dt);
    E2[i] = std::exp(-nu * k2 * 0.5 * dt);
  }

  Cvec s1(sz), s2(sz), s3(sz);
  for (int step = 0; step < steps; ++step) {
    double umax = 0.0;
    const Cvec a = nonlinear_term(w, what, &umax);
    const double cfl = umax * dt / omega0.h;
    if (cfl > 0.5) {
      std::ostringstream os;
      os << "spectral_oracle: CFL number " << cfl << " exceeds 0.5 at step " << step
         << "; use dt <= " << 0.4 * omega0.h / umax;
      throw std::runtime_error(os.str());
    }
    for (std::size_t i = 0; i < sz; ++i) s1[i] = E2[i] * (what[i] + 0.5 * dt * a[i]);
    const Cvec b = nonlinear_term(w, s1, nullptr);
    for (std::size_t i = 0; i < sz; ++i) s2[i] = E2[i] * what[i] + 0.5 * dt * b[i];
    const Cvec c = nonlinear_term(w, s2, nullptr);
    for (std::size_t i = 0; i < sz; ++i) s3[i] = E[i] * what[i] + dt * E2[i] * c[i];
    const Cvec d = nonlinear_term(w, s3, nullptr);
    for (std::size_t i = 0; i < sz; ++i)
      what[i] = E[i] * what[i] +
                dt / 6.0 * (E[i] * a[i] + 2.0 * E2[i] * (b[i] + c[i]) + d[i]);
  }

  SpectralResult res;
  res.steps = steps;
  res.dt = dt;
  res.t = steps * dt;
  res.omega = GridField::make(omega0.ox, omega0.oy, omega0.h, n, n, 1, true);
  std::copy(what.begin(), what.end(), w.f.buf.begin());
  w.f.backward();
  const double scale = 1.0 / double(sz);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      res.omega.at(ix, iy) = w.f.buf[(std::size_t)iy * n + ix].real() * scale;
  res.u = velocity_from_vorticity_torus(res.omega);
  return res;
}

// ---------------------------------------------------------------------------
// residual of the velocity equation
// ---------------------------------------------------------------------------

namespace {
// quintic-smoothstep window: 1 on the central half, C^2 decay to 0 at edges
double taper_1d(double chi) {
  const double d = std::fabs(chi - 0.5);
  if (d <= 0.25) return 1.0;
  if (d >= 0.47) return 0.0;
  const double s = (d - 0.25) / 0.22;
  const double step = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
  return 1.0 - step;
}

struct SpectralDeriv {
  int nx, ny;
  double Lx, Ly;
  Fft2 f;
  SpectralDeriv(int nx_, int ny_, double Lx_, double Ly_) : nx(nx_), ny(ny_), Lx(Lx_), Ly(Ly_),
                                                            f(nx_, ny_) {}
  // out = d^ax/dx d^ay/dy (in), or Laplacian when lap is set
  void apply(const std::vector<double>& in, std::vector<double>& out, int ax, int ay, bool lap) {
    const std::size_t sz = (std::size_t)nx * ny;
    for (std::size_t i = 0; i < sz; ++i) f.buf[i] = in[i];
    f.forward();
    const std::complex<double> I(0.0, 1.0);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const double kx = fourier_mode(ix, nx, Lx), ky = fourier_mode(iy, ny, Ly);
        std::complex<double> m(1.0, 0.0);
        if (lap) {
          m = -(kx * kx + ky * ky);
        } else {
          for (int r = 0; r < ax; ++r) m *= I * kx;
          for (int r = 0; r < ay; ++r) m *= I * ky;
        }
        f.buf[(std::size_t)iy * nx + ix] *= m;
      }
    f.backward();
    const double scale = 1.0 / double(sz);
    out.resize(sz);
    for (std::size_t i = 0; i < sz; ++i) out[i] = f.buf[i].real() * scale;
  }
};
}  // namespace

double ns_residual(const std::vector<GridField>& snaps, double dt, double nu, bool backward) {
  if (snaps.size() < 3) throw std::invalid_argument("ns_residual: need at least 3 snapshots");
  const GridField& g0 = snaps[0];
  if (g0.comps != 2) throw std::invalid_argument("ns_residual: 2-component fields required");
  for (const auto& s : snaps)
    if (s.nx != g0.nx || s.ny != g0.ny || s.comps != 2)
      throw std::invalid_argument("ns_residual: snapshot shapes differ");
  const int nx = g0.nx, ny = g0.ny;
  const std::size_t sz = (std::size_t)nx * ny;
  const double Lx = nx * g0.h, Ly = ny * g0.h;
  const bool taper = !g0.periodic;

  std::vector<double> win(sz, 1.0);
  std::vector<char> interior(sz, 1);
  if (taper) {
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const double cx = (ix + 0.5) / nx, cy = (iy + 0.5) / ny;
        win[(std::size_t)iy * nx + ix] = taper_1d(cx) * taper_1d(cy);
        interior[(std::size_t)iy * nx + ix] =
            (std::fabs(cx - 0.5) <= 0.25 && std::fabs(cy - 0.5) <= 0.25) ? 1 : 0;
      }
  }

  auto windowed = [&](const GridField& f, int c) {
    std::vector<double> v(sz);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
        v[(std::size_t)iy * nx + ix] = f.at(ix, iy, c) * win[(std::size_t)iy * nx + ix];
    return v;
  };

  SpectralDeriv sd(nx, ny, Lx, Ly);
  const double visc_sign = backward ? 1.0 : -1.0;
  double num2 = 0.0, den2 = 0.0;
  std::vector<double> dx1, dy1, lap, r1(sz), r2(sz);
  for (std::size_t k = 1; k + 1 < snaps.size(); ++k) {
    std::vector<double> u1 = windowed(snaps[k], 0), u2 = windowed(snaps[k], 1);
    const std::vector<double> u1p = windowed(snaps[k + 1], 0), u1m = windowed(snaps[k - 1], 0);
    const std::vector<double> u2p = windowed(snaps[k + 1], 1), u2m = windowed(snaps[k - 1], 1);
    std::vector<double> lap1, lap2;
    sd.apply(u1, lap1, 0, 0, true);
    sd.apply(u2, lap2, 0, 0, true);
    sd.apply(u1, dx1, 1, 0, false);
    sd.apply(u1, dy1, 0, 1, false);
    for (std::size_t i = 0; i < sz; ++i)
      r1[i] = (u1p[i] - u1m[i]) / (2.0 * dt) + u1[i] * dx1[i] + u2[i] * dy1[i] +
              visc_sign * nu * lap1[i];
    sd.apply(u2, dx1, 1, 0, false);
    sd.apply(u2, dy1, 0, 1, false);
    for (std::size_t i = 0; i < sz; ++i)
      r2[i] = (u2p[i] - u2m[i]) / (2.0 * dt) + u1[i] * dx1[i] + u2[i] * dy1[i] +
              visc_sign * nu * lap2[i];

    // Leray projection of the residual (pressure gradients are not errors)
    GridField rf = GridField::make(g0.ox, g0.oy, g0.h, nx, ny, 2, true);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        rf.at(ix, iy, 0) = r1[(std::size_t)iy * nx + ix];
        rf.at(ix, iy, 1) = r2[(std::size_t)iy * nx + ix];
      }
    const GridField pr = leray_project(rf);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const std::size_t i = (std::size_t)iy * nx + ix;
        if (!interior[i]) continue;
        num2 += pr.at(ix, iy, 0) * pr.at(ix, iy, 0) + pr.at(ix, iy, 1) * pr.at(ix, iy, 1);
        den2 += nu * nu * (lap1[i] * lap1[i] + lap2[i] * lap2[i]);
      }
  }
  if (den2 == 0.0) return num2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num2 / den2);
}

ShortTimeFit short_time_exponent(const std::vector<double>& ts, const std::vector<double>& vals) {
  if (ts.size() != vals.size() || ts.size() < 2)
    throw std::invalid_argument("short_time_exponent: need matching t/value samples, >= 2");
  double vmax = 0.0;
  for (double v : vals) vmax = std::max(vmax, std::fabs(v));
  ShortTimeFit fit;
  if (vmax < 1e-13) {
    fit.exact = true;
    return fit;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!(ts[i] > 0.0) || !(std::fabs(vals[i]) > 0.0)) continue;
    const double x = std::log(ts[i]), y = std::log(std::fabs(vals[i]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("short_time_exponent: fewer than 2 usable samples");
  fit.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return fit;
}

// ---------------------------------------------------------------------------
// self-similarity of the forward system
// ---------------------------------------------------------------------------

double scaling_check(const ScalingCheckConfig& cfg, const GridField& layout) {
  const double H = cfg.hurst.H;
  const double lam = cfg.lambda;
  const double c = std::pow(lam, 1.0 / H);

  ForwardVortexDrift scaled;
  scaled.nu0 = cfg.nu0;
  scaled.eps = cfg.eps;
  ForwardVortexDrift base;
  base.nu0 = cfg.nu0;
  for (auto& a : base.nu0.atoms) {
    a[0] *= lam;
    a[1] *= lam;
  }
  const double wscale = std::pow(lam, 2.0 - 1.0 / H);
  for (auto& w : base.nu0.weights) w *= wscale;
  base.eps = cfg.eps * lam;

  const TimeGrid grid_s{cfg.T, cfg.steps};
  const TimeGrid grid_b{c * cfg.T, cfg.steps};
  const std::vector<int> last = {cfg.steps};
  const FlowEnsemble ens_s =
      forward_particle(scaled, cfg.hurst, grid_s, cfg.replicas, cfg.seed, last, cfg.threads);
  const FlowEnsemble ens_b =
      forward_particle(base, cfg.hurst, grid_b, cfg.replicas, cfg.seed, last, cfg.threads);

  const GridField u_s = particle_velocity(ens_s, scaled.nu0, scaled.eps, cfg.steps, layout,
                                          cfg.threads);
  GridField layout_b = GridField::make(lam * layout.ox, lam * layout.oy, lam * layout.h,
                                       layout.nx, layout.ny, layout.comps, layout.periodic);
  const GridField u_b = particle_velocity(ens_b, base.nu0, base.eps, cfg.steps, layout_b,
                                          cfg.threads);

  const double pref = std::pow(lam, 1.0 / H - 1.0);
  double sup_diff = 0.0, sup_ref = 0.0;
  for (int iy = 0; iy < layout.ny; ++iy)
    for (int ix = 0; ix < layout.nx; ++ix)
      for (int ccomp = 0; ccomp < 2; ++ccomp) {
        const double a = pref * u_b.at(ix, iy, ccomp);
        const double b = u_s.at(ix, iy, ccomp);
        sup_diff = std::max(sup_diff, std::fabs(a - b));
        sup_ref = std::max(sup_ref, std::fabs(b));
      }
  if (sup_ref == 0.0) return sup_diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return sup_diff / sup_ref;
}

}  // namespace dflow
