#include "dflow/dfsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dflow/rng.hpp"
#include "dflow/special.hpp"
#include "dflow/threading.hpp"
#include "dflow/transport.hpp"

namespace dflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

// mollified Biot-Savart accumulation over a source cloud, branch-light form of
// biot_savart_mollified (the far field evaluates (1/q)/eps^2 instead of 1/r^2,
// a one-ulp difference that keeps the loop free of divergent branches)
void vortex_accumulate(double px, double py, const double* sx, const double* sy, const double* sw,
                       std::size_t ns, double inv_eps2, double* u1, double* u2) {
  double a1 = 0.0, a2 = 0.0;
  for (std::size_t s = 0; s < ns; ++s) {
    const double d1 = px - sx[s];
    const double d2 = py - sy[s];
    const double q = (d1 * d1 + d2 * d2) * inv_eps2;
    const double near_p = q * (1.0 + q * (-0.4375 + 0.05078125 * q));
    const double prof = q < 4.0 ? near_p : 1.0 / q;  // q = 0 -> 0: no self-force
    const double c = prof * sw[s];
    a1 += c * d2;
    a2 -= c * d1;
  }
  const double scale = inv_eps2 / kTwoPi;
  *u1 = a1 * scale;
  *u2 = a2 * scale;
}

std::vector<int> normalize_store_steps(std::vector<int> steps, int n_steps) {
  if (steps.empty()) {
    steps.resize(n_steps + 1);
    std::iota(steps.begin(), steps.end(), 0);
    return steps;
  }
  steps.push_back(0);
  steps.push_back(n_steps);
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  if (steps.front() < 0 || steps.back() > n_steps)
    throw std::invalid_argument("store_steps outside [0, N]");
  return steps;
}

[[noreturn]] void throw_nonfinite(double t, int atom, int replica) {
  std::ostringstream os;
  os << "drift evaluated to a non-finite value at t=" << t << ", atom " << atom << ", replica "
     << replica;
  throw std::runtime_error(os.str());
}

// bilinear interpolation of a GridField with zero extension outside the
// window; nodes sit at (ox + i h, oy + j h)
void bilinear_or_zero(const GridField& f, double x, double y, double* out) {
  for (int c = 0; c < f.comps; ++c) out[c] = 0.0;
  const double gx = (x - f.ox) / f.h;
  const double gy = (y - f.oy) / f.h;
  const int i0 = (int)std::floor(gx);
  const int j0 = (int)std::floor(gy);
  const double fx = gx - i0, fy = gy - j0;
  const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const int is[4] = {i0, i0 + 1, i0, i0 + 1};
  const int js[4] = {j0, j0, j0 + 1, j0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (is[k] < 0 || is[k] >= f.nx || js[k] < 0 || js[k] >= f.ny) continue;
    for (int c = 0; c < f.comps; ++c) out[c] += wts[k] * f.at(is[k], js[k], c);
  }
}
}  // namespace

// ---------------------------------------------------------------------------
// DiscreteSignedMeasure
// ---------------------------------------------------------------------------

double DiscreteSignedMeasure::total_variation() const {
  double s = 0.0;
  for (double w : weights) s += std::fabs(w);
  return s;
}

double DiscreteSignedMeasure::total_mass() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

void DiscreteSignedMeasure::prune(double drop_tol, double grid_tol) {
  if (atoms.size() != weights.size())
    throw std::invalid_argument("DiscreteSignedMeasure: atom/weight size mismatch");
  std::map<std::pair<double, double>, std::size_t> seen;
  std::vector<std::array<double, 2>> out_a;
  std::vector<double> out_w;
  auto key_of = [&](const std::array<double, 2>& a) {
    if (grid_tol <= 0.0) return std::make_pair(a[0], a[1]);
    return std::make_pair(std::round(a[0] / grid_tol) * grid_tol,
                          std::round(a[1] / grid_tol) * grid_tol);
  };
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const auto key = key_of(atoms[i]);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, out_a.size());
      out_a.push_back(atoms[i]);
      out_w.push_back(weights[i]);
    } else {
      out_w[it->second] += weights[i];
    }
  }
  atoms.clear();
  weights.clear();
  for (std::size_t i = 0; i < out_a.size(); ++i) {
    const bool drop = drop_tol > 0.0 ? std::fabs(out_w[i]) <= drop_tol : out_w[i] == 0.0;
    if (drop) continue;
    atoms.push_back(out_a[i]);
    weights.push_back(out_w[i]);
  }
}

DiscreteSignedMeasure DiscreteSignedMeasure::point(double x, double y, double w) {
  DiscreteSignedMeasure m;
  m.atoms.push_back({x, y});
  m.weights.push_back(w);
  return m;
}

DiscreteSignedMeasure gaussian_blob_atoms(double mass, double sigma, double cx, double cy,
                                          int n) {
  if (!(sigma > 0.0) || n < 1) throw std::invalid_argument("gaussian_blob_atoms: bad parameters");
  const QuadRule gh = gauss_hermite(n);
  const double root_pi = std::sqrt(M_PI);
  DiscreteSignedMeasure m;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      m.atoms.push_back({cx + std::sqrt(2.0) * sigma * gh.x[i],
                         cy + std::sqrt(2.0) * sigma * gh.x[j]});
      m.weights.push_back(mass * (gh.w[i] / root_pi) * (gh.w[j] / root_pi));
    }
  return m;
}

// ---------------------------------------------------------------------------
// FlowEnsemble / DistributionFlow
// ---------------------------------------------------------------------------

int FlowEnsemble::stored_index(int step) const {
  auto it = std::lower_bound(stored_steps.begin(), stored_steps.end(), step);
  if (it == stored_steps.end() || *it != step) return -1;
  return (int)(it - stored_steps.begin());
}

DistributionFlow extract_flow(const FlowEnsemble& ens, const std::vector<int>& steps) {
  DistributionFlow flow;
  flow.atoms = ens.atoms;
  flow.replicas = ens.replicas;
  flow.dim = ens.dim;
  flow.atom_pos = ens.atom_pos;
  flow.pos.resize((std::size_t)steps.size() * ens.atoms * ens.replicas * ens.dim);
  flow.times.reserve(steps.size());
  for (std::size_t ti = 0; ti < steps.size(); ++ti) {
    const int si = ens.stored_index(steps[ti]);
    if (si < 0) throw std::invalid_argument("extract_flow: step not stored in ensemble");
    flow.times.push_back(ens.time_of(steps[ti]));
    for (int j = 0; j < ens.atoms; ++j)
      for (int m = 0; m < ens.replicas; ++m) {
        const double* src = ens.at(j, m, si);
        double* dst =
            &flow.pos[(((std::size_t)ti * ens.atoms + j) * ens.replicas + m) * ens.dim];
        std::memcpy(dst, src, sizeof(double) * ens.dim);
      }
  }
  return flow;
}

// ---------------------------------------------------------------------------
// RegularDrift
// ---------------------------------------------------------------------------

void RegularDrift::b1(const double* z, double* out) const {
  const double e = std::exp(-0.5 * (z[0] * z[0] + z[1] * z[1]));
  out[0] = b1_amp * z[0] * e;
  out[1] = b1_amp * z[1] * e;
}

double RegularDrift::phi1(const double* x) const {
  return phi1_amp * std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1])) / kTwoPi;
}

double RegularDrift::phi2(const double* x) const {
  const double s2 = phi2_sigma * phi2_sigma;
  return std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1]) / s2) / (kTwoPi * s2);
}

double RegularDrift::Certificate::moment_bound(double t, double m0) const {
  if (!(kappa1 < 0.0)) return std::numeric_limits<double>::infinity();
  const double e = std::exp(kappa1 * t);
  return e * m0 + (kappa0 + kappa5) * (e - 1.0) / kappa1;
}

// Dissipativity constants for dX = B dt + dW in d = 2.  Writing m2(t) = E|X|^2,
// Ito gives m2' = 2 E<X,B> + d.  Young splits with parameters eps1, eps2:
//   <x,B1>      <= eps1 |x|^2 + (|phi1|_inf Q)^2 / (4 eps1),   Q = sup_x sum_j w_j |b1(x-y_j)|
//   <x,B2>      <= beta S |x|^2 + eps2 |x|^2 + (beta S1)^2 |nu|_CP1^2 / (4 eps2)
//   <x,-lam x>   = -lam |x|^2
// with S = sum w_j phi2(y_j), S1 = sum w_j phi2(y_j)(1+|y_j|), and |E X(z)| <=
// (1+|z|) |nu|_CP1.  Doubling and adding d yields m2' <= kappa0 + kappa1 m2 +
// kappa2 |nu|^2; the self-consistent sup over starting points closes because
// kappa1 + 2 kappa2 < 0, giving the second-moment bound in moment_bound().
RegularDrift::Certificate RegularDrift::certify(const DiscreteSignedMeasure& quad) const {
  Certificate c;
  const double eps1 = c.eps1, eps2 = c.eps2;
  double S = 0.0, S1 = 0.0;
  for (std::size_t j = 0; j < quad.size(); ++j) {
    const double pj = phi2(quad.atoms[j].data());
    const double wj = quad.weights[j];
    if (wj < 0.0) throw std::invalid_argument("certify: quadrature weights must be nonnegative");
    S += wj * pj;
    S1 += wj * pj * (1.0 + std::hypot(quad.atoms[j][0], quad.atoms[j][1]));
  }
  // numeric sup of the lattice sum of |b1|; |b1| decays like r exp(-r^2/2) so a
  // +-4 padded scan at step 0.05 resolves it, 2% headroom for the scan grid
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  for (const auto& a : quad.atoms) {
    xmin = std::min(xmin, a[0]);
    xmax = std::max(xmax, a[0]);
    ymin = std::min(ymin, a[1]);
    ymax = std::max(ymax, a[1]);
  }
  double Q = 0.0;
  const double step = 0.05;
  for (double x = xmin - 4.0; x <= xmax + 4.0; x += step)
    for (double y = ymin - 4.0; y <= ymax + 4.0; y += step) {
      double s = 0.0;
      for (std::size_t j = 0; j < quad.size(); ++j) {
        const double z0 = x - quad.atoms[j][0], z1 = y - quad.atoms[j][1];
        const double r = std::sqrt(z0 * z0 + z1 * z1);
        s += quad.weights[j] * b1_amp * r * std::exp(-0.5 * r * r);
      }
      Q = std::max(Q, s);
    }
  Q *= 1.02;

  const double phi1_inf = phi1_amp / kTwoPi;
  const double d = 2.0;
  c.kappa1 = 2.0 * (-lambda + beta * S + eps1 + eps2);
  c.kappa0 = d + (phi1_inf * Q) * (phi1_inf * Q) / (2.0 * eps1);
  c.kappa2 = (beta * S1) * (beta * S1) / (2.0 * eps2);
  c.valid = c.kappa1 < 0.0 && c.kappa1 + 2.0 * c.kappa2 < 0.0;
  c.kappa5 = c.valid ? 2.0 * c.kappa2 * (-c.kappa1 + c.kappa0) / (-c.kappa1 - 2.0 * c.kappa2)
                     : std::numeric_limits<double>::infinity();
  return c;
}

std::vector<double> truncate_by_norm(const std::vector<double>& value, double norm) {
  if (!(norm > 1.0)) return value;
  std::vector<double> out(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) out[i] = value[i] / norm;
  return out;
}

// ---------------------------------------------------------------------------
// solve_frozen
// ---------------------------------------------------------------------------

FlowEnsemble solve_frozen(const DriftField& drift, const std::vector<double>& x0, int dim,
                          const FbmEnsemble& noise, double start,
                          const std::vector<int>& store_steps, int threads) {
  if (dim <= 0 || x0.empty() || x0.size() % dim != 0)
    throw std::invalid_argument("solve_frozen: x0 must hold atoms*dim coordinates");
  if (noise.dim != dim) throw std::invalid_argument("solve_frozen: noise dimension mismatch");
  const int atoms = (int)(x0.size() / dim);
  if (noise.replicas % atoms != 0)
    throw std::invalid_argument("solve_frozen: noise replicas must be a multiple of atom count");
  const int M = noise.replicas / atoms;
  const int N = noise.grid.N;
  const double dt = noise.grid.dt();

  FlowEnsemble ens;
  ens.hurst = noise.hurst;
  ens.grid = noise.grid;
  ens.start = start;
  ens.dim = dim;
  ens.atoms = atoms;
  ens.replicas = M;
  ens.seed = noise.seed;
  ens.stored_steps = normalize_store_steps(store_steps, N);
  ens.atom_pos.resize(atoms);
  for (int j = 0; j < atoms; ++j) {
    ens.atom_pos[j] = {x0[(std::size_t)j * dim],
                       dim > 1 ? x0[(std::size_t)j * dim + 1] : 0.0};
  }
  ens.x.assign((std::size_t)atoms * M * ens.stored_steps.size() * dim, 0.0);

  parallel_for((std::size_t)atoms * M, threads, [&](std::size_t rep) {
    const int j = (int)(rep / M), m = (int)(rep % M);
    std::vector<double> x(x0.begin() + (std::size_t)j * dim, x0.begin() + (std::size_t)(j + 1) * dim);
    std::vector<double> b(dim);
    int next_store = 0;
    auto maybe_store = [&](int n) {
      if (next_store < (int)ens.stored_steps.size() && ens.stored_steps[next_store] == n) {
        std::memcpy(ens.at(j, m, next_store), x.data(), sizeof(double) * dim);
        ++next_store;
      }
    };
    maybe_store(0);
    for (int n = 0; n < N; ++n) {
      const double t = start + n * dt;
      drift(t, x.data(), b.data());
      for (int c = 0; c < dim; ++c) {
        if (!std::isfinite(b[c])) throw_nonfinite(t, j, m);
        x[c] += b[c] * dt + (noise.path((int)rep, n + 1, c) - noise.path((int)rep, n, c));
      }
      maybe_store(n + 1);
    }
  });
  return ens;
}

// ---------------------------------------------------------------------------
// forward interacting-particle solver
// ---------------------------------------------------------------------------

double default_mollifier_eps(const DiscreteSignedMeasure& nu0) {
  const std::size_t n = nu0.size();
  if (n < 2) return 0.1;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double dx = nu0.atoms[i][0] - nu0.atoms[k][0];
      const double dy = nu0.atoms[i][1] - nu0.atoms[k][1];
      best = std::min(best, dx * dx + dy * dy);
    }
    acc += std::sqrt(best);
  }
  return 2.0 * acc / n;
}

FlowEnsemble forward_particle(const ForwardVortexDrift& spec, const HurstParams& hp,
                              const TimeGrid& grid, int replicas, std::uint64_t seed,
                              const std::vector<int>& store_steps, int threads) {
  const int J = (int)spec.nu0.size();
  if (J == 0) throw std::invalid_argument("forward_particle: empty initial measure");
  if (replicas <= 0) throw std::invalid_argument("forward_particle: replicas >= 1");
  const int M = replicas;
  const std::size_t P = (std::size_t)J * M;
  const int N = grid.N;
  const double dt = grid.dt();
  const double eps = spec.eps > 0.0 ? spec.eps : default_mollifier_eps(spec.nu0);
  const double inv_eps2 = 1.0 / (eps * eps);

  // driving increments, one per (atom, replica, step, component)
  std::vector<double> dw((std::size_t)P * N * 2);
  if (hp.H == 0.5) {
    parallel_for(P, threads, [&](std::size_t rep) {
      RngStream g0 = RngStream::substream(seed, {(std::uint64_t)rep, 0});
      RngStream g1 = RngStream::substream(seed, {(std::uint64_t)rep, 1});
      const double sdt = std::sqrt(dt);
      for (int n = 0; n < N; ++n) {
        dw[(rep * N + n) * 2 + 0] = sdt * g0.gaussian();
        dw[(rep * N + n) * 2 + 1] = sdt * g1.gaussian();
      }
    });
  } else {
    const FbmEnsemble noise = sample_fbm(hp, grid, 2, (int)P, FbmMethod::Volterra, seed, threads);
    parallel_for(P, threads, [&](std::size_t rep) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < 2; ++c)
          dw[(rep * N + n) * 2 + c] =
              noise.path((int)rep, n + 1, c) - noise.path((int)rep, n, c);
    });
  }

  FlowEnsemble ens;
  ens.hurst = hp;
  ens.grid = grid;
  ens.start = 0.0;
  ens.dim = 2;
  ens.atoms = J;
  ens.replicas = M;
  ens.seed = seed;
  ens.atom_pos = spec.nu0.atoms;
  ens.stored_steps = normalize_store_steps(store_steps, N);
  ens.x.assign(P * ens.stored_steps.size() * 2, 0.0);

  std::vector<double> cx(P), cy(P), nx(P), ny(P), sw(P);
  for (int j = 0; j < J; ++j)
    for (int m = 0; m < M; ++m) {
      cx[(std::size_t)j * M + m] = spec.nu0.atoms[j][0];
      cy[(std::size_t)j * M + m] = spec.nu0.atoms[j][1];
      sw[(std::size_t)j * M + m] = spec.nu0.weights[j] / M;
    }

  auto store_slice = [&](int stored_idx) {
    for (std::size_t p = 0; p < P; ++p) {
      double* dst = &ens.x[(p * ens.stored_steps.size() + stored_idx) * 2];
      dst[0] = cx[p];
      dst[1] = cy[p];
    }
  };
  int next_store = 0;
  if (ens.stored_steps[0] == 0) store_slice(next_store++);

  for (int n = 0; n < N; ++n) {
    parallel_for(P, threads, [&](std::size_t p) {
      double u1, u2;
      vortex_accumulate(cx[p], cy[p], cx.data(), cy.data(), sw.data(), P, inv_eps2, &u1, &u2);
      if (!std::isfinite(u1) || !std::isfinite(u2))
        throw_nonfinite(n * dt, (int)(p / M), (int)(p % M));
      nx[p] = cx[p] + u1 * dt + dw[(p * N + n) * 2 + 0];
      ny[p] = cy[p] + u2 * dt + dw[(p * N + n) * 2 + 1];
    });
    cx.swap(nx);
    cy.swap(ny);
    if (next_store < (int)ens.stored_steps.size() && ens.stored_steps[next_store] == n + 1)
      store_slice(next_store++);
  }
  return ens;
}

GridField particle_velocity(const FlowEnsemble& ens, const DiscreteSignedMeasure& nu0, double eps,
                            int step, const GridField& layout, int threads) {
  if (ens.dim != 2) throw std::invalid_argument("particle_velocity: 2-d ensembles only");
  if ((int)nu0.size() != ens.atoms)
    throw std::invalid_argument("particle_velocity: measure/ensemble atom mismatch");
  const int si = ens.stored_index(step);
  if (si < 0) throw std::invalid_argument("particle_velocity: step not stored");
  if (!(eps > 0.0)) throw std::invalid_argument("particle_velocity: eps > 0");
  const std::size_t P = (std::size_t)ens.atoms * ens.replicas;
  std::vector<double> sx(P), sy(P), sw(P);
  for (int j = 0; j < ens.atoms; ++j)
    for (int m = 0; m < ens.replicas; ++m) {
      const double* p = ens.at(j, m, si);
      sx[(std::size_t)j * ens.replicas + m] = p[0];
      sy[(std::size_t)j * ens.replicas + m] = p[1];
      sw[(std::size_t)j * ens.replicas + m] = nu0.weights[j] / ens.replicas;
    }
  GridField out = GridField::make(layout.ox, layout.oy, layout.h, layout.nx, layout.ny, 2,
                                  layout.periodic);
  const double inv_eps2 = 1.0 / (eps * eps);
  parallel_for((std::size_t)out.nx * out.ny, threads, [&](std::size_t idx) {
    const int iy = (int)(idx / out.nx), ix = (int)(idx % out.nx);
    double u1, u2;
    vortex_accumulate(out.x(ix), out.y(iy), sx.data(), sy.data(), sw.data(), P, inv_eps2, &u1,
                       &u2);
    out.at(ix, iy, 0) = u1;
    out.at(ix, iy, 1) = u2;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Picard over flows, regular drift
// ---------------------------------------------------------------------------

namespace {
struct RegularTables {
  // statistics of the previous iterate's flow
  std::vector<double> phi;    // [j * R + i]: E phi1(X_{r_i -> T}(y_j))
  std::vector<double> mean;   // [(j * (N+1) + n) * 2 + c]: E X_{0 -> t_n}(y_j)
};

// per-step coefficient tables for the drift under `tab`
struct RegularStepCoefs {
  std::vector<double> phi_at_step;  // [n * J + j]
  std::vector<double> b2_shift;     // [n * 2 + c]: beta * sum_j w_j phi2(y_j) mean_{j,n}
  double beta_s = 0.0;              // beta * sum_j w_j phi2(y_j)
};

RegularStepCoefs make_step_coefs(const RegularDrift& spec, const DiscreteSignedMeasure& quad,
                                 const RegularTables& tab, const std::vector<int>& restart_steps,
                                 int N) {
  const int J = (int)quad.size();
  const int R = (int)restart_steps.size();
  RegularStepCoefs co;
  co.phi_at_step.resize((std::size_t)(N + 1) * J);
  co.b2_shift.assign((std::size_t)(N + 1) * 2, 0.0);
  std::vector<double> wp(J);
  for (int j = 0; j < J; ++j) {
    wp[j] = quad.weights[j] * spec.phi2(quad.atoms[j].data());
    co.beta_s += spec.beta * wp[j];
  }
  for (int n = 0; n <= N; ++n) {
    // piecewise-linear interpolation of the future statistic between restart nodes
    int i = 0;
    while (i + 2 < R && restart_steps[i + 1] <= n) ++i;
    const int a = restart_steps[i], b = restart_steps[i + 1];
    const double th = b > a ? (double)(n - a) / (b - a) : 0.0;
    for (int j = 0; j < J; ++j)
      co.phi_at_step[(std::size_t)n * J + j] =
          (1.0 - th) * tab.phi[(std::size_t)j * R + i] + th * tab.phi[(std::size_t)j * R + i + 1];
    for (int j = 0; j < J; ++j)
      for (int c = 0; c < 2; ++c)
        co.b2_shift[(std::size_t)n * 2 + c] +=
            spec.beta * wp[j] * tab.mean[((std::size_t)j * (N + 1) + n) * 2 + c];
  }
  return co;
}

inline void regular_drift_eval(const RegularDrift& spec, const DiscreteSignedMeasure& quad,
                               const RegularStepCoefs& co, int n, const double* x, double* out) {
  const int J = (int)quad.size();
  double b1x = 0.0, b1y = 0.0;
  const double* phi_n = &co.phi_at_step[(std::size_t)n * J];
  for (int j = 0; j < J; ++j) {
    const double z0 = x[0] - quad.atoms[j][0], z1 = x[1] - quad.atoms[j][1];
    const double e = spec.b1_amp * std::exp(-0.5 * (z0 * z0 + z1 * z1));
    const double w = quad.weights[j] * phi_n[j];
    b1x += w * z0 * e;
    b1y += w * z1 * e;
  }
  out[0] = b1x + co.beta_s * x[0] - co.b2_shift[(std::size_t)n * 2 + 0] - spec.lambda * x[0];
  out[1] = b1y + co.beta_s * x[1] - co.b2_shift[(std::size_t)n * 2 + 1] - spec.lambda * x[1];
}
}  // namespace

PicardReport picard_forward_regular(const RegularDrift& spec, const DiscreteSignedMeasure& quad,
                                    const TimeGrid& grid, int M, std::uint64_t seed,
                                    const PicardOptions& opt, DistributionFlow* flow_out,
                                    FlowEnsemble* ens_out) {
  const int J = (int)quad.size();
  if (J == 0) throw std::invalid_argument("picard_forward_regular: empty atom set");
  if (M <= 0) throw std::invalid_argument("picard_forward_regular: M >= 1");
  const int N = grid.N;
  const double dt = grid.dt();
  const int R = std::max(2, opt.restart_nodes);
  const int Msub = opt.restart_replicas > 0 ? opt.restart_replicas : M;
  const int C = std::max(1, opt.checkpoints);

  std::vector<int> restart_steps(R);
  for (int i = 0; i < R; ++i) restart_steps[i] = (int)std::lround((double)i * N / (R - 1));
  std::vector<int> check_steps(C);
  for (int k = 0; k < C; ++k) check_steps[k] = (int)std::lround((double)(k + 1) * N / C);

  // iterate 0: the constant-in-time delta flow
  RegularTables tab;
  tab.phi.resize((std::size_t)J * R);
  tab.mean.resize((std::size_t)J * (N + 1) * 2);
  for (int j = 0; j < J; ++j) {
    const double p1 = spec.phi1(quad.atoms[j].data());
    for (int i = 0; i < R; ++i) tab.phi[(std::size_t)j * R + i] = p1;
    for (int n = 0; n <= N; ++n)
      for (int c = 0; c < 2; ++c)
        tab.mean[((std::size_t)j * (N + 1) + n) * 2 + c] = quad.atoms[j][c];
  }
  DistributionFlow prev_flow;  // delta flow
  prev_flow.atoms = J;
  prev_flow.replicas = 1;
  prev_flow.dim = 2;
  prev_flow.atom_pos = quad.atoms;
  prev_flow.pos.resize((std::size_t)C * J * 2);
  for (int k = 0; k < C; ++k) {
    prev_flow.times.push_back(check_steps[k] * dt);
    for (int j = 0; j < J; ++j)
      for (int c = 0; c < 2; ++c)
        prev_flow.pos[(((std::size_t)k * J + j) * 1) * 2 + c] = quad.atoms[j][c];
  }

  PicardReport rep;
  int grow_streak = 0;
  double prev_d = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= opt.max_iter; ++it) {
    const RegularStepCoefs co = make_step_coefs(spec, quad, tab, restart_steps, N);

    // future statistics of the new iterate on the restart lattice
    RegularTables fresh;
    fresh.phi.assign((std::size_t)J * R, 0.0);
    fresh.mean.assign((std::size_t)J * (N + 1) * 2, 0.0);
    parallel_for((std::size_t)J * (R - 1), opt.threads, [&](std::size_t w) {
      const int j = (int)(w / (R - 1)), i = (int)(w % (R - 1));
      const int n0 = restart_steps[i];
      double acc = 0.0;
      double x[2], b[2];
      for (int m = 0; m < Msub; ++m) {
        RngStream g = RngStream::substream(seed, {1u, (std::uint64_t)i, (std::uint64_t)j,
                                                  (std::uint64_t)m});
        x[0] = quad.atoms[j][0];
        x[1] = quad.atoms[j][1];
        const double sdt = std::sqrt(dt);
        for (int n = n0; n < N; ++n) {
          regular_drift_eval(spec, quad, co, n, x, b);
          if (!std::isfinite(b[0]) || !std::isfinite(b[1])) throw_nonfinite(n * dt, j, m);
          x[0] += b[0] * dt + sdt * g.gaussian();
          x[1] += b[1] * dt + sdt * g.gaussian();
        }
        acc += spec.phi1(x);
      }
      fresh.phi[(std::size_t)j * R + i] = acc / Msub;
    });
    for (int j = 0; j < J; ++j)
      fresh.phi[(std::size_t)j * R + (R - 1)] = spec.phi1(quad.atoms[j].data());

    // main run from time 0, recording per-step means and checkpoint clouds
    DistributionFlow flow;
    flow.atoms = J;
    flow.replicas = M;
    flow.dim = 2;
    flow.atom_pos = quad.atoms;
    flow.times = prev_flow.times;
    flow.pos.resize((std::size_t)C * J * M * 2);
    FlowEnsemble ens;
    ens.hurst = HurstParams::make(0.5);
    ens.grid = grid;
    ens.dim = 2;
    ens.atoms = J;
    ens.replicas = M;
    ens.seed = seed;
    ens.atom_pos = quad.atoms;
    ens.stored_steps = normalize_store_steps(check_steps, N);
    ens.x.assign((std::size_t)J * M * ens.stored_steps.size() * 2, 0.0);

    parallel_for((std::size_t)J, opt.threads, [&](std::size_t ja) {
      const int j = (int)ja;
      double x[2], b[2];
      const double sdt = std::sqrt(dt);
      for (int m = 0; m < M; ++m) {
        RngStream g = RngStream::substream(seed, {0u, 0u, (std::uint64_t)j, (std::uint64_t)m});
        x[0] = quad.atoms[j][0];
        x[1] = quad.atoms[j][1];
        int next_store = 0, next_check = 0;
        auto record = [&](int n) {
          for (int c = 0; c < 2; ++c)
            fresh.mean[((std::size_t)j * (N + 1) + n) * 2 + c] += x[c];
          if (next_store < (int)ens.stored_steps.size() && ens.stored_steps[next_store] == n) {
            double* dst = ens.at(j, m, next_store);
            dst[0] = x[0];
            dst[1] = x[1];
            ++next_store;
          }
          if (next_check < C && check_steps[next_check] == n) {
            double* dst = &flow.pos[(((std::size_t)next_check * J + j) * M + m) * 2];
            dst[0] = x[0];
            dst[1] = x[1];
            ++next_check;
          }
        };
        record(0);
        for (int n = 0; n < N; ++n) {
          regular_drift_eval(spec, quad, co, n, x, b);
          if (!std::isfinite(b[0]) || !std::isfinite(b[1])) throw_nonfinite(n * dt, j, m);
          x[0] += b[0] * dt + sdt * g.gaussian();
          x[1] += b[1] * dt + sdt * g.gaussian();
          record(n + 1);
        }
      }
      for (int n = 0; n <= N; ++n)
        for (int c = 0; c < 2; ++c) fresh.mean[((std::size_t)j * (N + 1) + n) * 2 + c] /= M;
    });

    // d_CP1 between successive iterates over the checkpoint times
    FlowDistanceOptions dopt;
    dopt.subsample = opt.w1_subsample;
    double d = 0.0;
    for (int k = 0; k < C; ++k) d = std::max(d, flow_distance_w1(flow, k, prev_flow, k, dopt));
    rep.trace.push_back(d);
    rep.iterations = it;

    prev_flow = std::move(flow);
    tab = std::move(fresh);
    if (flow_out) *flow_out = prev_flow;
    if (ens_out) *ens_out = std::move(ens);

    if (it >= 2 && d <= opt.tol) {
      rep.converged = true;
      break;
    }
    if (d > prev_d) {
      if (++grow_streak >= 3) {
        rep.non_contractive = true;
        break;
      }
    } else {
      grow_streak = 0;
    }
    prev_d = d;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// backward representation
// ---------------------------------------------------------------------------

BackwardPicardResult backward_picard(const std::function<double(const double*)>& terminal,
                                     const TimeGrid& grid, const GridField& layout, int M,
                                     std::uint64_t seed, const BackwardPicardOptions& opt) {
  if (M <= 0) throw std::invalid_argument("backward_picard: M >= 1");
  const int N = grid.N;
  const double dt = grid.dt();
  const double sq2 = std::sqrt(2.0);
  const double conv_eps = opt.conv_eps > 0.0 ? opt.conv_eps : layout.h;
  const int npts = layout.nx * layout.ny;

  BackwardPicardResult res;
  res.times.resize(N + 1);
  for (int n = 0; n <= N; ++n) res.times[n] = grid.node(n);
  res.u.assign(N + 1, GridField::make(layout.ox, layout.oy, layout.h, layout.nx, layout.ny, 2,
                                      layout.periodic));
  res.v.assign(N + 1, GridField::make(layout.ox, layout.oy, layout.h, layout.nx, layout.ny, 1,
                                      layout.periodic));

  for (int it = 1; it <= opt.max_iter; ++it) {
    std::vector<GridField> v_new(N + 1, GridField::make(layout.ox, layout.oy, layout.h, layout.nx,
                                                        layout.ny, 1, layout.periodic));
    parallel_for((std::size_t)npts, opt.threads, [&](std::size_t idx) {
      const int iy = (int)(idx / layout.nx), ix = (int)(idx % layout.nx);
      const double x0 = layout.x(ix), y0 = layout.y(iy);
      std::vector<double> acc(N + 1, 0.0);
      std::vector<double> dwbuf((std::size_t)N * 2);
      for (int m = 0; m < M; ++m) {
        RngStream g = RngStream::substream(seed, {(std::uint64_t)idx, (std::uint64_t)m});
        const double sdt = sq2 * std::sqrt(dt);
        for (int n = 0; n < N; ++n) {
          dwbuf[(std::size_t)n * 2 + 0] = sdt * g.gaussian();
          dwbuf[(std::size_t)n * 2 + 1] = sdt * g.gaussian();
        }
        // shared increment table across start slices: path from slice i uses
        // exactly the increments i..N-1, so neighbouring starts stay coupled
        for (int i = 0; i <= N; ++i) {
          double x = x0, y = y0, uv[2];
          for (int n = i; n < N; ++n) {
            bilinear_or_zero(res.u[n], x, y, uv);
            if (opt.truncate) {
              const double nrm = std::hypot(uv[0], uv[1]) / opt.truncate_bound;
              if (nrm > 1.0) {
                uv[0] /= nrm;
                uv[1] /= nrm;
              }
            }
            x += uv[0] * dt + dwbuf[(std::size_t)n * 2 + 0];
            y += uv[1] * dt + dwbuf[(std::size_t)n * 2 + 1];
          }
          const double xy[2] = {x, y};
          acc[i] += terminal(xy);
        }
      }
      for (int i = 0; i <= N; ++i) v_new[i].at(ix, iy) = acc[i] / M;
    });

    double sup_diff = 0.0;
    for (int i = 0; i <= N; ++i) {
      GridField u_i = biot_savart_convolve(v_new[i], conv_eps);
      for (std::size_t k = 0; k < u_i.data.size(); ++k)
        sup_diff = std::max(sup_diff, std::fabs(u_i.data[k] - res.u[i].data[k]));
      res.u[i] = std::move(u_i);
      res.v[i] = std::move(v_new[i]);
    }
    res.sup_diffs.push_back(sup_diff);
    res.iterations = it;
    if (sup_diff <= opt.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// comparisons and diagnostics
// ---------------------------------------------------------------------------

double flow_distance_w1(const DistributionFlow& a, int ta, const DistributionFlow& b, int tb,
                        const FlowDistanceOptions& opt) {
  if (a.atoms != b.atoms || a.dim != b.dim)
    throw std::invalid_argument("flow_distance_w1: incompatible flows");
  int n = std::max(a.replicas, b.replicas);
  if (opt.subsample > 0) n = std::min(n, opt.subsample);
  std::vector<double> pa((std::size_t)n * a.dim), pb((std::size_t)n * a.dim);
  // equal-size clouds for the assignment: stride when subsampling a larger
  // ensemble, cycle when one side has fewer replicas (e.g. a delta flow)
  auto fill = [&](const double* src, int nrep, int dim, std::vector<double>& dst) {
    const int stride = std::max(1, nrep / n);
    for (int m = 0; m < n; ++m) {
      const int idx = nrep >= n ? m * stride : m % nrep;
      for (int c = 0; c < dim; ++c)
        dst[(std::size_t)m * dim + c] = src[(std::size_t)idx * dim + c];
    }
  };
  double dmax = 0.0;
  for (int j = 0; j < a.atoms; ++j) {
    fill(a.slice(ta, j), a.replicas, a.dim, pa);
    fill(b.slice(tb, j), b.replicas, b.dim, pb);
    const double w1 = w1_auto(pa, pb, n, a.dim, opt.exact_threshold);
    const double denom = 1.0 + std::hypot(a.atom_pos[j][0], a.atom_pos[j][1]);
    dmax = std::max(dmax, w1 / denom);
  }
  return dmax;
}

TvReport flow_distance_tv(const DistributionFlow& a, int ta, const DistributionFlow& b, int tb,
                          double cell) {
  if (a.atoms != b.atoms || a.dim != b.dim)
    throw std::invalid_argument("flow_distance_tv: incompatible flows");
  TvReport rep;
  for (int j = 0; j < a.atoms; ++j) {
    std::vector<double> pa(a.slice(ta, j), a.slice(ta, j) + (std::size_t)a.replicas * a.dim);
    std::vector<double> pb(b.slice(tb, j), b.slice(tb, j) + (std::size_t)b.replicas * b.dim);
    const HistogramPair hp = tv_histogram(pa, a.replicas, pb, b.replicas, a.dim, cell);
    if (hp.tv > rep.tv) {
      rep.tv = hp.tv;
      rep.rel_entropy = hp.rel_entropy;
    }
    rep.ckp_flag = rep.ckp_flag || hp.ckp_flag;
  }
  return rep;
}

std::vector<MomentRow> moment_report(const FlowEnsemble& ens, const std::vector<int>& steps) {
  std::vector<MomentRow> rows;
  for (int step : steps) {
    const int si = ens.stored_index(step);
    if (si < 0) throw std::invalid_argument("moment_report: step not stored");
    for (int j = 0; j < ens.atoms; ++j) {
      MomentRow row;
      row.t = ens.time_of(step);
      row.atom = j;
      double s1 = 0, s2 = 0, s1sq = 0, s2sq = 0;
      for (int m = 0; m < ens.replicas; ++m) {
        const double* p = ens.at(j, m, si);
        double r2 = 0.0;
        for (int c = 0; c < ens.dim; ++c) r2 += p[c] * p[c];
        const double r1 = std::sqrt(r2);
        s1 += r1;
        s2 += r2;
        s1sq += r2;
        s2sq += r2 * r2;
      }
      const int M = ens.replicas;
      row.m1 = s1 / M;
      row.m2 = s2 / M;
      row.m1_se = std::sqrt(std::max(0.0, s1sq / M - row.m1 * row.m1) / M);
      row.m2_se = std::sqrt(std::max(0.0, s2sq / M - row.m2 * row.m2) / M);
      rows.push_back(row);
    }
  }
  return rows;
}

ChapmanReport chapman_flow_check(const DriftField& drift, const std::vector<double>& x0, int dim,
                                 double s, double r, double t, int steps_per_unit, int M,
                                 std::uint64_t seed, double cell, int threads) {
  if (!(s < r && r < t)) throw std::invalid_argument("chapman_flow_check: need s < r < t");
  if (dim <= 0 || x0.empty() || x0.size() % dim != 0)
    throw std::invalid_argument("chapman_flow_check: x0 must hold atoms*dim coordinates");
  const int atoms = (int)(x0.size() / dim);

  auto run = [&](const std::vector<double>& starts, double t0, double t1, std::uint64_t tag,
                 int atom) {
    const int steps = std::max(1, (int)std::lround((t1 - t0) * steps_per_unit));
    const double dt = (t1 - t0) / steps;
    const double sdt = std::sqrt(dt);
    std::vector<double> out(starts.size());
    const std::size_t count = starts.size() / dim;
    parallel_for(count, threads, [&](std::size_t m) {
      RngStream g = RngStream::substream(seed, {tag, (std::uint64_t)atom, (std::uint64_t)m});
      std::vector<double> x(starts.begin() + m * dim, starts.begin() + (m + 1) * dim);
      std::vector<double> b(dim);
      for (int n = 0; n < steps; ++n) {
        drift(t0 + n * dt, x.data(), b.data());
        for (int c = 0; c < dim; ++c) {
          if (!std::isfinite(b[c])) throw_nonfinite(t0 + n * dt, atom, (int)m);
          x[c] += b[c] * dt + sdt * g.gaussian();
        }
      }
      std::copy(x.begin(), x.end(), out.begin() + m * dim);
    });
    return out;
  };

  ChapmanReport rep;
  rep.cell = cell;
  for (int j = 0; j < atoms; ++j) {
    std::vector<double> starts((std::size_t)M * dim);
    for (int m = 0; m < M; ++m)
      for (int c = 0; c < dim; ++c) starts[(std::size_t)m * dim + c] = x0[(std::size_t)j * dim + c];

    // direct law, an independent copy of it, and the restarted law
    const std::vector<double> direct = run(starts, s, t, 0, j);
    const std::vector<double> direct2 = run(starts, s, t, 1, j);
    const std::vector<double> mid = run(starts, s, r, 2, j);
    std::vector<double> restarts((std::size_t)M * dim);
    RngStream pick = RngStream::substream(seed, {3u, (std::uint64_t)j});
    for (int m = 0; m < M; ++m) {
      const int idx = (int)(pick.uniform() * M);
      for (int c = 0; c < dim; ++c)
        restarts[(std::size_t)m * dim + c] = mid[(std::size_t)std::min(idx, M - 1) * dim + c];
    }
    const std::vector<double> rest = run(restarts, r, t, 4, j);

    const double d = tv_histogram(direct, M, rest, M, dim, cell).tv;
    const double floor_j = tv_histogram(direct, M, direct2, M, dim, cell).tv;
    rep.distance = std::max(rep.distance, d);
    rep.noise_floor = std::max(rep.noise_floor, floor_j);
  }
  return rep;
}

}  // namespace dflow
