#pragma once
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dflow/fbm.hpp"
#include "dflow/fields.hpp"

namespace dflow {

// ---------------------------------------------------------------------------
// measures and ensembles
// ---------------------------------------------------------------------------

// finite signed measure sum_j w_j delta_{y_j} on R^2
struct DiscreteSignedMeasure {
  std::vector<std::array<double, 2>> atoms;
  std::vector<double> weights;

  std::size_t size() const { return atoms.size(); }
  double total_variation() const;
  double total_mass() const;
  // merge coincident atoms (exact position match after rounding to `grid_tol`
  // multiples; 0 = exact equality) and drop atoms with |w| <= drop_tol
  void prune(double drop_tol = 0.0, double grid_tol = 0.0);

  static DiscreteSignedMeasure point(double x, double y, double w = 1.0);
};

// ensemble of flow trajectories started from `atom_pos[j]` at time `start`:
// replica m of atom j occupies contiguous dim-blocks per stored step.
// Positions are stored only at the steps listed in `stored_steps`
// (ascending, always containing 0 and grid.N) to keep large runs in memory.
struct FlowEnsemble {
  HurstParams hurst;
  TimeGrid grid;   // spans [start, start + grid.T]
  double start = 0.0;
  int dim = 2;
  int atoms = 0;
  int replicas = 0;  // per atom
  std::uint64_t seed = 0;
  std::vector<std::array<double, 2>> atom_pos;  // dim<=2 convenience copy (padded with 0)
  std::vector<int> stored_steps;
  std::vector<double> x;  // [((j*replicas + m)*stored + si)*dim + c]

  int stored_count() const { return (int)stored_steps.size(); }
  int stored_index(int step) const;  // -1 when the step is not stored
  double time_of(int step) const { return start + grid.dt() * step; }
  const double* at(int atom, int replica, int stored_idx) const {
    return &x[(((std::size_t)atom * replicas + replica) * stored_steps.size() + stored_idx) * dim];
  }
  double* at(int atom, int replica, int stored_idx) {
    return &x[(((std::size_t)atom * replicas + replica) * stored_steps.size() + stored_idx) * dim];
  }
};

// time-indexed family of empirical measures (one per atom), extracted from a
// FlowEnsemble at selected steps; positions have uniform weight 1/replicas.
struct DistributionFlow {
  std::vector<double> times;
  int atoms = 0;
  int replicas = 0;
  int dim = 2;
  std::vector<std::array<double, 2>> atom_pos;
  std::vector<double> pos;  // [(((t*atoms + j)*replicas + m))*dim + c]

  const double* slice(int t_idx, int atom) const {
    return &pos[(((std::size_t)t_idx * atoms + atom) * replicas) * dim];
  }
};

DistributionFlow extract_flow(const FlowEnsemble& ens, const std::vector<int>& steps);

// product Gauss-Hermite atomization of mass * N((cx,cy), sigma^2 I):
// n^2 atoms whose moments match the Gaussian up to degree 2n-1 per axis
DiscreteSignedMeasure gaussian_blob_atoms(double mass, double sigma, double cx, double cy, int n);

// ---------------------------------------------------------------------------
// drift specifications
// ---------------------------------------------------------------------------

struct ZeroDrift {};

// B(t,x) = sum_j w_j b1(x - y_j) mu[j](phi1)
//        + beta * sum_j w_j phi2(y_j) (x - mean nu[j])   - lambda x
// where mu[j] is the time-t->T flow started at atom j and nu[j] the 0->t one;
// b2(z) = beta z is kept linear so the nu-convolution reduces to replica means.
struct RegularDrift {
  double b1_amp = 0.5;     // b1(z) = b1_amp * z * exp(-|z|^2/2)
  double beta = 0.15;      // slope of b2
  double phi1_amp = 0.5;   // phi1 = phi1_amp * standard normal density
  double phi2_sigma = 0.5; // phi2 = N(0, phi2_sigma^2 I) density
  double lambda = 1.5;     // confining linear pull

  void b1(const double* z, double* out) const;
  double phi1(const double* x) const;
  double phi2(const double* x) const;

  // dissipativity certificate: <x, B(t,x,mu,nu)> + 2 d
  //   <= kappa0 + kappa1 |x|^2 + kappa2 (1 + |nu|_CP1)^2   (see certify())
  struct Certificate {
    double kappa0 = 0, kappa1 = 0, kappa2 = 0, kappa5 = 0;
    double eps1 = 0.1, eps2 = 0.1;  // Young-split parameters
    bool valid = false;             // kappa1 < 0 and kappa1 + 2 kappa2 < 0
    // second-moment bound e^{kappa1 t} m0 + (kappa0+kappa5)(e^{kappa1 t}-1)/kappa1
    double moment_bound(double t, double m0) const;
  };
  Certificate certify(const DiscreteSignedMeasure& quad) const;
};

// forward vortex dynamics: drift is the mollified Biot-Savart convolution of
// the empirical flow of nu0 (weights enter signed; replicas uniform)
struct ForwardVortexDrift {
  DiscreteSignedMeasure nu0;
  double eps = 0.0;  // 0 = auto: 2x mean nearest-atom spacing (single atom: 0.1)
};

// backward representation: drift is a time-space velocity field, evaluated by
// bilinear interpolation in space and piecewise-constant (left slice) in time
struct BackwardVortexDrift {
  std::vector<GridField> u;   // one 2-component slice per time node
  std::vector<double> times;  // ascending, same length as u
  bool truncate = false;
  double truncate_bound = 1.0;
};

using DriftSpec = std::variant<ZeroDrift, RegularDrift, ForwardVortexDrift, BackwardVortexDrift>;

// time-space drift callback: fn(t, x[dim], out[dim])
using DriftField = std::function<void(double, const double*, double*)>;

std::vector<double> truncate_by_norm(const std::vector<double>& value, double norm);

// ---------------------------------------------------------------------------
// solvers
// ---------------------------------------------------------------------------

// Euler-Maruyama under a frozen (flow-independent) drift; one driving-noise
// replica per (atom, replica) pair taken from `noise`, which must satisfy
// noise.replicas == atoms * replicas_per_atom and noise.dim == dim.
FlowEnsemble solve_frozen(const DriftField& drift, const std::vector<double>& x0, int dim,
                          const FbmEnsemble& noise, double start = 0.0,
                          const std::vector<int>& store_steps = {}, int threads = 1);

struct PicardOptions {
  int max_iter = 8;
  double tol = 5e-3;        // d_CP1 drop target between successive flows
  int checkpoints = 5;      // evenly spaced comparison times
  int w1_subsample = 256;   // replicas used in the W1 distance
  int restart_nodes = 5;    // future-statistics lattice for the mu-term
  int restart_replicas = 0; // 0 = same as M
  int threads = 1;
};

struct PicardReport {
  std::vector<double> trace;  // d_CP1 between successive iterates
  int iterations = 0;
  bool converged = false;
  bool non_contractive = false;  // distance grew 3 times in a row
};

// Picard-over-flows for the regular (flow-functional) drift at H = 1/2.
// Returns the final flow sampled at the checkpoint times.
PicardReport picard_forward_regular(const RegularDrift& spec, const DiscreteSignedMeasure& quad,
                                    const TimeGrid& grid, int M, std::uint64_t seed,
                                    const PicardOptions& opt, DistributionFlow* flow_out,
                                    FlowEnsemble* ens_out = nullptr);

// interacting-particle forward solver for the vortex drift; stores positions
// at `store_steps` (empty = every step)
FlowEnsemble forward_particle(const ForwardVortexDrift& spec, const HurstParams& hp,
                              const TimeGrid& grid, int replicas, std::uint64_t seed,
                              const std::vector<int>& store_steps = {}, int threads = 1);

// empirical velocity field of a particle ensemble on a grid of evaluation
// points: u(x) = sum_j w_j (1/M) sum_m K2^eps(x - X^{j,m}); `step` must be stored
GridField particle_velocity(const FlowEnsemble& ens, const DiscreteSignedMeasure& nu0, double eps,
                            int step, const GridField& layout, int threads = 1);

double default_mollifier_eps(const DiscreteSignedMeasure& nu0);

struct BackwardPicardOptions {
  int max_iter = 8;
  double tol = 1e-3;       // sup-norm Cauchy threshold on u
  double conv_eps = 0.0;   // mollifier for the K2 convolution; 0 = grid spacing
  bool truncate = false;
  double truncate_bound = 1.0;
  int threads = 1;
};

struct BackwardPicardResult {
  std::vector<GridField> u;  // velocity slices, one per grid node (0..N)
  std::vector<GridField> v;  // conditional-expectation vorticity slices
  std::vector<double> times;
  std::vector<double> sup_diffs;  // ||u_{k+1}-u_k||_inf per Picard step
  int iterations = 0;
  bool converged = false;
};

// backward probabilistic representation on [0,T]: v_k(s,x) = E g(X_{s,T}(x))
// with dX = u_{k-1}(r, X) dr + sqrt(2) dW, u_k(s,.) = K2^eps * v_k(s,.) on the
// lattice of `layout`; shared increment tables across start slices (CRN).
BackwardPicardResult backward_picard(const std::function<double(const double*)>& terminal,
                                     const TimeGrid& grid, const GridField& layout, int M,
                                     std::uint64_t seed, const BackwardPicardOptions& opt);

// ---------------------------------------------------------------------------
// flow comparison and diagnostics
// ---------------------------------------------------------------------------

struct FlowDistanceOptions {
  int exact_threshold = 512;  // point count above which the entropic solver is used
  int subsample = 0;          // 0 = use all replicas
};

// d_CP1 = sup_j W1(mu^j, nu^j) / (1 + |y_j|) at one time index of each flow
double flow_distance_w1(const DistributionFlow& a, int ta, const DistributionFlow& b, int tb,
                        const FlowDistanceOptions& opt = {});

struct TvReport {
  double tv = 0.0;          // sup over atoms of the histogram TV distance
  double rel_entropy = 0.0; // relative entropy at the sup-attaining atom
  bool ckp_flag = false;    // any atom violating tv <= sqrt(2 ent) + slack
};

TvReport flow_distance_tv(const DistributionFlow& a, int ta, const DistributionFlow& b, int tb,
                          double cell);

struct MomentRow {
  double t = 0.0;
  int atom = 0;
  double m1 = 0.0, m1_se = 0.0;  // E|X|, standard error
  double m2 = 0.0, m2_se = 0.0;  // E|X|^2, standard error
};

std::vector<MomentRow> moment_report(const FlowEnsemble& ens, const std::vector<int>& steps);

struct ChapmanReport {
  double distance = 0.0;     // sup-atom TV between direct and restarted laws at t
  double noise_floor = 0.0;  // same statistic for two equal-law resamplings
  double cell = 0.0;
};

// flow property check at H = 1/2: simulate s->t directly, and s->r, resample,
// r->t; compare time-t laws in TV against a same-law resampling control.
ChapmanReport chapman_flow_check(const DriftField& drift, const std::vector<double>& x0, int dim,
                                 double s, double r, double t, int steps_per_unit, int M,
                                 std::uint64_t seed, double cell, int threads = 1);

}  // namespace dflow
