#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dflow/dfsde.hpp"
#include "dflow/fbm.hpp"
#include "dflow/fields.hpp"
#include "dflow/nse.hpp"
#include "dflow/rng.hpp"

using namespace dflow;

namespace {

constexpr double kPi = 3.14159265358979323846;

double enstrophy(const GridField& w) {
  double s = 0.0;
  for (double v : w.data) s += v * v;
  return s * w.h * w.h;
}

double grid_mass(const GridField& w) {
  double s = 0.0;
  for (double v : w.data) s += v;
  return s * w.h * w.h;
}

// decaying point-vortex speed from the heat-kernel vorticity profile
double vortex_speed(double gamma, double fourNuT, double r) {
  return gamma * -std::expm1(-r * r / fourNuT) / (2 * kPi * r);
}

}  // namespace

// ---------------------------------------------------------------------------
// closed-form diffusing point vortex
// ---------------------------------------------------------------------------

TEST_CASE("diffusing point vortex closed form") {
  SUBCASE("speed profile matches an independently integrated reference") {
    // gamma=1, nu=0.5, t=0.5 (so 4*nu*t = 1); reference values were produced
    // by an external arbitrary-precision evaluation of the same profile
    const double g = 1.0, nu = 0.5, t = 0.5;
    CHECK(std::fabs(lamb_oseen_speed(g, nu, t, 0.3) - 0.04566092436714854) < 1e-15);
    CHECK(std::fabs(lamb_oseen_speed(g, nu, t, 0.6) - 0.08019384519916295) < 1e-15);
    CHECK(std::fabs(lamb_oseen_speed(g, nu, t, 1.0) - 0.10060511156757618) < 1e-15);
    CHECK(std::fabs(lamb_oseen_speed(g, nu, t, 1.5) - 0.09492009033654794) < 1e-15);
  }

  SUBCASE("exact limits") {
    CHECK(lamb_oseen_speed(2.0, 0.3, 1.0, 0.0) == 0.0);
    // r -> 0: u_theta ~ gamma r / (8 pi nu t); expm1 keeps this accurate
    const double r = 1e-8;
    const double lim = 3.0 * r / (8 * kPi * 0.25 * 2.0);
    CHECK(std::fabs(lamb_oseen_speed(3.0, 0.25, 2.0, r) / lim - 1.0) < 1e-9);
    // r -> inf: the full circulation, gamma / (2 pi r)
    CHECK(std::fabs(lamb_oseen_speed(3.0, 0.25, 2.0, 50.0) / (3.0 / (2 * kPi * 50.0)) - 1.0) <
          1e-15);
    CHECK_THROWS_AS(lamb_oseen_speed(1.0, 0.5, 0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(lamb_oseen_speed(1.0, 0.5, -1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(lamb_oseen_speed(1.0, 0.0, 0.5, 1.0), std::domain_error);
    CHECK_THROWS_AS(lamb_oseen_speed(1.0, -0.5, 0.5, 1.0), std::domain_error);
  }

  SUBCASE("grid snapshot: clockwise orientation, metadata, solenoidality") {
    const GridField layout = GridField::make(-2.0, -2.0, 0.125, 33, 33, 2);
    const auto vf = lamb_oseen(1.0, 0.5, 0.5, layout);
    CHECK(vf.source == "closed-form");
    CHECK(vf.eps == 0.0);
    CHECK(vf.t == 0.5);
    CHECK(vf.field.comps == 2);

    // at (r, 0) with gamma > 0 the velocity points in -e2 (clockwise kernel)
    const int ic = 16;  // grid point at the origin
    const int ir = ic + 8;  // (1.0, 0.0)
    CHECK(vf.field.at(ir, ic, 0) == 0.0);
    CHECK(std::fabs(vf.field.at(ir, ic, 1) + lamb_oseen_speed(1.0, 0.5, 0.5, 1.0)) < 1e-15);

    // the grid node exactly at the origin carries zero velocity
    CHECK(vf.field.at(ic, ic, 0) == 0.0);
    CHECK(vf.field.at(ic, ic, 1) == 0.0);

    // field equals speed(r) * (y, -x)/r at a generic point
    const int ix = 22, iy = 9;
    const double x = layout.x(ix), y = layout.y(iy), r = std::hypot(x, y);
    const double s = lamb_oseen_speed(1.0, 0.5, 0.5, r) / r;
    CHECK(std::fabs(vf.field.at(ix, iy, 0) - y * s) < 1e-15);
    CHECK(std::fabs(vf.field.at(ix, iy, 1) + x * s) < 1e-15);

    // a rotational field is divergence-free; centred differences see that
    CHECK(div_grad_ratio(vf.field) < 5e-3);
  }
}

// ---------------------------------------------------------------------------
// discrete incompressibility measure
// ---------------------------------------------------------------------------

TEST_CASE("divergence-to-gradient ratio") {
  const int n = 64;
  const double h = 2 * kPi / n;

  SUBCASE("cellular flow is discretely divergence-free") {
    // u = (sin x cos y, -cos x sin y): div u = 0 identically, and the centred
    // stencil inherits the cancellation exactly up to roundoff
    GridField u = GridField::make(0.0, 0.0, h, n, n, 2, true);
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) {
        u.at(ix, iy, 0) = std::sin(u.x(ix)) * std::cos(u.y(iy));
        u.at(ix, iy, 1) = -std::cos(u.x(ix)) * std::sin(u.y(iy));
      }
    CHECK(div_grad_ratio(u) < 1e-13);
  }

  SUBCASE("pure dilation is all divergence") {
    // u = (x, y): div = 2, |grad|^2 = 2, ratio = sqrt(2) pointwise
    GridField u = GridField::make(-1.0, -1.0, 0.25, 9, 9, 2);
    for (int iy = 0; iy < 9; ++iy)
      for (int ix = 0; ix < 9; ++ix) {
        u.at(ix, iy, 0) = u.x(ix);
        u.at(ix, iy, 1) = u.y(iy);
      }
    CHECK(std::fabs(div_grad_ratio(u) - std::sqrt(2.0)) < 1e-12);
  }

  SUBCASE("constant field has no gradient: ratio defined as zero") {
    GridField u = GridField::make(0.0, 0.0, 1.0, 5, 5, 2);
    for (auto& v : u.data) v = 3.25;
    CHECK(div_grad_ratio(u) == 0.0);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(div_grad_ratio(GridField::make(0, 0, 1, 5, 5, 1)), std::invalid_argument);
    CHECK_THROWS_AS(div_grad_ratio(GridField::make(0, 0, 1, 2, 5, 2)), std::invalid_argument);
    CHECK_THROWS_AS(div_grad_ratio(GridField::make(0, 0, 1, 5, 2, 2)), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// pseudo-spectral vorticity integrator
// ---------------------------------------------------------------------------

TEST_CASE("spectral vorticity integrator: exactly decaying modes") {
  const int n = 32;
  const double h = 2 * kPi / n;

  SUBCASE("zero vorticity stays exactly zero") {
    const GridField w0 = GridField::make(0.0, 0.0, h, n, n, 1, true);
    const auto res = spectral_oracle(w0, 0.4, 0.01, 10);
    for (double v : res.omega.data) CHECK(v == 0.0);
    for (double v : res.u.data) CHECK(v == 0.0);
  }

  SUBCASE("single Fourier mode: pure integrating-factor decay") {
    // omega0 = cos(k x1) has identically vanishing self-advection, so the
    // scheme reduces to the exact viscous decay exp(-nu k^2 t) of the mode,
    // and u = (0, -sin(k x1)/k) decayed alike
    const int k = 3;
    const double nu = 0.2, dt = 0.01;
    const int steps = 50;
    GridField w0 = GridField::make(0.0, 0.0, h, n, n, 1, true);
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) w0.at(ix, iy) = std::cos(k * w0.x(ix));
    const auto res = spectral_oracle(w0, nu, dt, steps);
    CHECK(res.steps == steps);
    CHECK(res.dt == dt);
    CHECK(std::fabs(res.t - 0.5) < 1e-14);
    const double decay = std::exp(-nu * k * k * res.t);
    double eo = 0.0, eu0 = 0.0, eu1 = 0.0;
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) {
        eo = std::max(eo, std::fabs(res.omega.at(ix, iy) - decay * std::cos(k * w0.x(ix))));
        eu0 = std::max(eu0, std::fabs(res.u.at(ix, iy, 0)));
        eu1 = std::max(eu1,
                       std::fabs(res.u.at(ix, iy, 1) + decay * std::sin(k * w0.x(ix)) / k));
      }
    CHECK(eo < 1e-12);
    CHECK(eu0 < 1e-12);
    CHECK(eu1 < 1e-12);
  }

  SUBCASE("zero steps: spectral round trip only") {
    GridField w0 = GridField::make(0.0, 0.0, h, n, n, 1, true);
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) w0.at(ix, iy) = std::sin(2 * w0.x(ix)) * std::cos(w0.y(iy));
    const auto res = spectral_oracle(w0, 0.4, 0.01, 0);
    CHECK(res.t == 0.0);
    double e = 0.0;
    for (std::size_t i = 0; i < w0.data.size(); ++i)
      e = std::max(e, std::fabs(res.omega.data[i] - w0.data[i]));
    CHECK(e < 1e-13);
  }
}

TEST_CASE("spectral vorticity integrator: radial self-check against the heat kernel") {
  // a radial vortex patch self-advects trivially (its velocity is tangential),
  // so the vorticity solves the plain heat equation: omega(t) is the Gaussian
  // of variance sigma^2 + 2 nu t.  Integrate to T = 0.25 in 5 chained legs.
  const int N = 128;
  const double L = 12.8, h = L / N, nu = 0.5, sigma = 0.3, dt = 0.0025;
  GridField w0 = GridField::make(-L / 2, -L / 2, h, N, N, 1, true);
  for (int iy = 0; iy < N; ++iy)
    for (int ix = 0; ix < N; ++ix) {
      const double x = w0.x(ix), y = w0.y(iy);
      w0.at(ix, iy) =
          std::exp(-(x * x + y * y) / (2 * sigma * sigma)) / (2 * kPi * sigma * sigma);
    }
  const double mass0 = grid_mass(w0);
  CHECK(std::fabs(mass0 - 1.0) < 1e-10);  // unit circulation, resolved tails

  std::vector<double> ens = {enstrophy(w0)};
  GridField cur = w0;
  SpectralResult res;
  for (int leg = 0; leg < 5; ++leg) {
    res = spectral_oracle(cur, nu, dt, 20);
    cur = res.omega;
    ens.push_back(enstrophy(cur));
  }

  SUBCASE("vorticity matches the heat solution") {
    const double T = 0.25, s2t = sigma * sigma + 2 * nu * T;
    const double peak = 1.0 / (2 * kPi * s2t);
    double sup = 0.0;
    for (int iy = 0; iy < N; ++iy)
      for (int ix = 0; ix < N; ++ix) {
        const double x = cur.x(ix), y = cur.y(iy);
        const double heat = std::exp(-(x * x + y * y) / (2 * s2t)) / (2 * kPi * s2t);
        sup = std::max(sup, std::fabs(cur.at(ix, iy) - heat));
      }
    CHECK(sup / peak < 1e-5);  // measured 1.2e-6; time + truncation error
  }

  SUBCASE("circulation is conserved and enstrophy decays") {
    CHECK(std::fabs(grid_mass(cur) - mass0) < 1e-12);
    for (std::size_t i = 0; i + 1 < ens.size(); ++i) CHECK(ens[i + 1] <= ens[i] * (1 + 1e-13));
    CHECK(ens.back() < 0.5 * ens.front());
  }

  SUBCASE("velocity probes match the periodic closed form") {
    // on the torus the inverse curl drops the mean vorticity, which adds a
    // solid-body counter-rotation -mass * r / (2 L^2) to the free-space speed
    const double s2t = sigma * sigma + 2 * nu * 0.25;
    for (double r : {0.6, 1.0}) {
      const int i = N / 2 + (int)std::lround(r / h), j = N / 2;
      const double expect = vortex_speed(1.0, 2 * s2t, r) - mass0 * r / (2 * L * L);
      CHECK(std::fabs(res.u.at(i, j, 0)) < 1e-6);
      CHECK(std::fabs(res.u.at(i, j, 1) + expect) < 1e-4);  // measured <= 1.9e-5
    }
  }
}

TEST_CASE("spectral vorticity integrator: frozen cross-check of a non-radial flow") {
  // mixed-mode initial vorticity on the 2pi torus, nu=0.1, dt=0.005, 100
  // steps.  The frozen values come from an independent implementation of the
  // same scheme (different language, FFT library and loop order).
  const int N = 64;
  const double h = 2 * kPi / N;
  GridField w0 = GridField::make(0.0, 0.0, h, N, N, 1, true);
  for (int iy = 0; iy < N; ++iy)
    for (int ix = 0; ix < N; ++ix)
      w0.at(ix, iy) =
          std::sin(w0.x(ix)) + std::cos(2 * w0.y(iy)) + 0.3 * std::sin(w0.x(ix) + w0.y(iy));
  const auto res = spectral_oracle(w0, 0.1, 0.005, 100);

  struct OmegaProbe {
    int i, j;
    double val;
  };
  const OmegaProbe wp[] = {
      {8, 16, 0.1793715712730085},   {40, 8, -1.334083752368684},
      {5, 50, -0.5738958696063021},  {32, 32, 0.7048900401757533},
      {20, 44, 0.22537077785046933}, {60, 2, 0.28562932184292317},
  };
  for (const auto& p : wp) CHECK(std::fabs(res.omega.at(p.i, p.j) - p.val) < 1e-9);

  struct UProbe {
    int i, j;
    double ux, uy;
  };
  const UProbe up[] = {
      {8, 16, 0.20013584341784832, 0.5479008955523291},
      {40, 8, 0.329772880037311, -0.5759649711380814},
      {5, 50, 0.009944302319077891, 0.9277718819441597},
      {32, 32, 0.06374823760955198, -0.8366443689752731},
      {20, 44, 0.1145170741868426, -0.2745323585485059},
      {60, 2, -0.2114986465738599, 0.9932270499960933},
  };
  for (const auto& p : up) {
    CHECK(std::fabs(res.u.at(p.i, p.j, 0) - p.ux) < 1e-9);
    CHECK(std::fabs(res.u.at(p.i, p.j, 1) - p.uy) < 1e-9);
  }

  CHECK(std::fabs(enstrophy(res.omega) / 32.452878908569275 - 1.0) < 1e-12);
}

TEST_CASE("spectral vorticity integrator: validation and CFL abort") {
  const int n = 32;
  const double h = 2 * kPi / n;

  SUBCASE("input validation") {
    CHECK_THROWS_AS(spectral_oracle(GridField::make(0, 0, h, n, n, 1, false), 0.1, 0.01, 1),
                    std::invalid_argument);  // not periodic
    CHECK_THROWS_AS(spectral_oracle(GridField::make(0, 0, h, n, n, 2, true), 0.1, 0.01, 1),
                    std::invalid_argument);  // not scalar
    CHECK_THROWS_AS(spectral_oracle(GridField::make(0, 0, h, n, 16, 1, true), 0.1, 0.01, 1),
                    std::invalid_argument);  // not square
    CHECK_THROWS_AS(spectral_oracle(GridField::make(0, 0, h, n, n, 1, true), 0.1, 0.0, 1),
                    std::invalid_argument);  // bad dt
    CHECK_THROWS_AS(spectral_oracle(GridField::make(0, 0, h, n, n, 1, true), 0.1, 0.01, -1),
                    std::invalid_argument);  // bad steps
  }

  SUBCASE("advective CFL breach aborts with a usable suggestion") {
    // max |u| = 40 here, so CFL = 40 * 0.01 / h ~ 2 >> 0.5
    GridField w0 = GridField::make(0.0, 0.0, h, n, n, 1, true);
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) w0.at(ix, iy) = 40.0 * std::sin(w0.x(ix));
    CHECK_THROWS_WITH_AS(spectral_oracle(w0, 0.1, 0.01, 5), doctest::Contains("use dt <="),
                         std::runtime_error);
    // a compliant dt on the same data runs fine
    CHECK_NOTHROW(spectral_oracle(w0, 0.1, 0.0005, 5));
  }
}

// ---------------------------------------------------------------------------
// Navier-Stokes residual diagnostic
// ---------------------------------------------------------------------------

namespace {

// exact periodic solution u(t) = e^{-2 nu t} (sin x cos y, -cos x sin y);
// the nonlinearity is a pure gradient, removed by the Leray projection
GridField cellular_snapshot(int n, double nu, double t) {
  GridField g = GridField::make(0.0, 0.0, 2 * kPi / n, n, n, 2, true);
  const double a = std::exp(-2 * nu * t);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      g.at(ix, iy, 0) = a * std::sin(g.x(ix)) * std::cos(g.y(iy));
      g.at(ix, iy, 1) = -a * std::cos(g.x(ix)) * std::sin(g.y(iy));
    }
  return g;
}

std::vector<GridField> cellular_series(int n, double nu, double t0, double dt, int count) {
  std::vector<GridField> s;
  for (int k = 0; k < count; ++k) s.push_back(cellular_snapshot(n, nu, t0 + k * dt));
  return s;
}

}  // namespace

TEST_CASE("navier-stokes residual of velocity snapshot sequences") {
  const int n = 32;
  const double nu = 0.5, t0 = 0.1;

  SUBCASE("exact solution: residual is the central-difference error, order dt^2") {
    // the only surviving term is the time-difference bias
    // (sinh(2 nu dt)/(2 nu dt) - 1) * ||dt u|| / ||nu lap u|| = (2 nu dt)^2/6
    const double r1 = ns_residual(cellular_series(n, nu, t0, 0.1, 5), 0.1, nu);
    const double r2 = ns_residual(cellular_series(n, nu, t0, 0.05, 5), 0.05, nu);
    CHECK(r1 < 5e-3);  // predicted 1.667e-3
    CHECK(std::fabs(r1 / (0.1 * 0.1 / 6.0) - 1.0) < 0.01);
    const double ratio = r1 / r2;
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
  }

  SUBCASE("reversed-time sequences need the flipped viscous sign") {
    std::vector<GridField> rev;
    for (int k = 0; k < 5; ++k) rev.push_back(cellular_snapshot(n, nu, t0 + (4 - k) * 0.1));
    CHECK(ns_residual(rev, 0.1, nu, true) < 5e-3);
    // with the forward sign the viscous term doubles instead of cancelling:
    // residual -> ||4 nu u|| / ||2 nu u|| = 2
    CHECK(ns_residual(rev, 0.1, nu, false) > 1.0);
  }

  SUBCASE("perturbed snapshots are flagged by a much larger residual") {
    auto noisy = cellular_series(n, nu, t0, 0.1, 5);
    RngStream g(5150);
    for (auto& s : noisy)
      for (auto& v : s.data) v += 1e-2 * g.gaussian();
    const double clean = ns_residual(cellular_series(n, nu, t0, 0.1, 5), 0.1, nu);
    CHECK(ns_residual(noisy, 0.1, nu) > 10.0 * clean);
  }

  SUBCASE("validation") {
    auto two = cellular_series(n, nu, t0, 0.1, 2);
    CHECK_THROWS_AS(ns_residual(two, 0.1, nu), std::invalid_argument);
    auto scalar = std::vector<GridField>(3, GridField::make(0, 0, 0.1, 8, 8, 1));
    CHECK_THROWS_AS(ns_residual(scalar, 0.1, nu), std::invalid_argument);
    auto mixed = cellular_series(n, nu, t0, 0.1, 3);
    mixed[2] = cellular_snapshot(16, nu, t0 + 0.2);
    CHECK_THROWS_AS(ns_residual(mixed, 0.1, nu), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// short-time exponent fit
// ---------------------------------------------------------------------------

TEST_CASE("short-time exponent fit") {
  SUBCASE("machine-zero samples report exactness instead of a slope") {
    const auto fit = short_time_exponent({0.01, 0.02, 0.04}, {0.0, 1e-14, 0.0});
    CHECK(fit.exact);
    CHECK(fit.exponent == 0.0);
  }

  SUBCASE("pure power law is recovered to roundoff") {
    std::vector<double> ts, vals;
    for (int k = 1; k <= 10; ++k) {
      ts.push_back(0.01 * k);
      vals.push_back(3.0 * std::pow(0.01 * k, 0.4));
    }
    const auto fit = short_time_exponent(ts, vals);
    CHECK(!fit.exact);
    CHECK(std::fabs(fit.exponent - 0.4) < 1e-12);
  }

  SUBCASE("unusable samples are skipped, not fitted") {
    // t <= 0 and exact zeros are dropped; the remaining points fix the slope
    const auto fit = short_time_exponent({-1.0, 0.0, 0.1, 0.2, 0.4}, {5.0, 5.0, 2.0, 4.0, 8.0});
    CHECK(std::fabs(fit.exponent - 1.0) < 1e-12);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(short_time_exponent({0.1, 0.2}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(short_time_exponent({0.1}, {1.0}), std::invalid_argument);
    // non-zero values but only one usable sample
    CHECK_THROWS_AS(short_time_exponent({0.1, -0.2}, {1.0, 2.0}), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// particle velocity snapshots and self-similarity
// ---------------------------------------------------------------------------

TEST_CASE("particle velocity snapshot carries provenance metadata") {
  ForwardVortexDrift spec;
  spec.nu0.atoms = {{0.3, 0.0}, {-0.3, 0.1}};
  spec.nu0.weights = {0.6, 0.4};
  spec.eps = 0.15;
  const TimeGrid grid{0.25, 8};
  const auto ens = forward_particle(spec, HurstParams::make(0.5), grid, 16, 2024);
  const GridField layout = GridField::make(-1.0, -1.0, 0.5, 5, 5, 2);

  const auto vf = forward_velocity(ens, spec.nu0, spec.eps, 4, layout);
  CHECK(vf.source == "particle");
  CHECK(vf.eps == 0.15);
  CHECK(vf.t == ens.time_of(4));

  const auto direct = particle_velocity(ens, spec.nu0, spec.eps, 4, layout);
  REQUIRE(vf.field.data.size() == direct.data.size());
  for (std::size_t i = 0; i < direct.data.size(); ++i) CHECK(vf.field.data[i] == direct.data[i]);
}

TEST_CASE("forward particle system is self-similar under parabolic scaling") {
  // dilating atoms by lambda, weights by lambda^(2-1/H), the mollifier by
  // lambda and the horizon by lambda^(1/H) maps solutions to solutions; with
  // lambda = 2 the rescaling is even exact in binary floating point, so the
  // paired-noise discrepancy sits at roundoff level
  ScalingCheckConfig cfg;
  cfg.lambda = 2.0;
  cfg.nu0.atoms = {{0.3, 0.1}, {-0.2, 0.25}};
  cfg.nu0.weights = {0.7, 0.3};
  cfg.T = 0.25;
  cfg.steps = 32;
  cfg.replicas = 200;
  cfg.eps = 0.1;
  cfg.seed = 7;
  const GridField layout = GridField::make(-1.0, -1.0, 0.25, 9, 9, 2);

  cfg.hurst = HurstParams::make(0.5);
  CHECK(scaling_check(cfg, layout) < 1e-12);  // measured exactly 0

  cfg.hurst = HurstParams::make(0.3);
  CHECK(scaling_check(cfg, layout) < 1e-12);  // measured 2.3e-15
}
