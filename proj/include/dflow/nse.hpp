#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dflow/dfsde.hpp"
#include "dflow/fields.hpp"

namespace dflow {

// velocity snapshot with provenance: "particle", "spectral", "closed-form", ...
struct VelocityField {
  GridField field;  // 2 components
  double t = 0.0;
  double eps = 0.0;  // mollification scale, 0 when not applicable
  std::string source;
};

// empirical velocity of a particle ensemble at a stored step (see
// particle_velocity); tags the snapshot for downstream provenance checks
VelocityField forward_velocity(const FlowEnsemble& ens, const DiscreteSignedMeasure& nu0,
                               double eps, int step, const GridField& layout, int threads = 1);

// closed-form diffusing point vortex of circulation gamma:
// u(x) = gamma (1 - exp(-r^2/(4 nu t)))/(2 pi r) * (x2, -x1)/r
VelocityField lamb_oseen(double gamma, double nu, double t, const GridField& layout);
double lamb_oseen_speed(double gamma, double nu, double t, double r);

// ratio of centred-difference divergence to velocity-gradient norm on the
// interior of a 2-component field (discrete incompressibility measure)
double div_grad_ratio(const GridField& u);

struct SpectralResult {
  GridField omega;
  GridField u;
  double t = 0.0;
  int steps = 0;
  double dt = 0.0;
};

// pseudo-spectral vorticity integrator on the periodic box of `omega0`:
// 2/3 dealiasing, integrating-factor RK4, velocity from the inverse curl with
// the (x2,-x1) kernel orientation.  Aborts when the advective CFL number
// max|u| dt / h exceeds 0.5, reporting a suggested dt.
SpectralResult spectral_oracle(const GridField& omega0, double nu, double dt, int steps);

// relative Navier-Stokes residual of equally spaced velocity snapshots:
// || P(d_s u + (u.grad) u -/+ nu lap u) ||_2 / || nu lap u ||_2, central time
// differences and spectral space derivatives; `backward` flips the viscous
// sign for fields indexed by a reversed time variable.  Non-periodic windows
// are tapered and all norms are taken on the central quarter.
double ns_residual(const std::vector<GridField>& snaps, double dt, double nu,
                   bool backward = false);

struct ShortTimeFit {
  double exponent = 0.0;  // least-squares slope of log(value) against log(t)
  bool exact = false;     // all samples at machine zero: no bias to fit
};

ShortTimeFit short_time_exponent(const std::vector<double>& ts, const std::vector<double>& vals);

// self-similarity of the forward particle system: the base configuration is
// the lambda-dilated instance of `nu0` (atoms scaled by lambda, weights by
// lambda^(2-1/H), mollifier by lambda, horizon by lambda^(1/H)) driven by the
// same noise substreams; returns the relative sup discrepancy between
// lambda^(1/H-1) u_base(lambda^(1/H) T, lambda x) and u_scaled(T, x).
struct ScalingCheckConfig {
  HurstParams hurst;
  double lambda = 2.0;
  DiscreteSignedMeasure nu0;  // the scaled (small) instance
  double T = 0.25;            // horizon of the scaled instance
  int steps = 128;
  int replicas = 2000;
  double eps = 0.1;  // mollifier of the scaled instance
  std::uint64_t seed = 1;
  int threads = 1;
};

double scaling_check(const ScalingCheckConfig& cfg, const GridField& layout);

}  // namespace dflow
