#include "dflow/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "dflow/dfsde.hpp"
#include "dflow/fbm.hpp"
#include "dflow/fields.hpp"
#include "dflow/fraccalc.hpp"
#include "dflow/io.hpp"
#include "dflow/nse.hpp"
#include "dflow/threading.hpp"

namespace dflow {

namespace {
using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!obj.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& obj, const std::string& key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + key + "' has the wrong type");
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

GridField layout_from(const json& w, const std::string& ctx) {
  check_keys(w, {"ox", "oy", "h", "nx", "ny"}, ctx);
  const double ox = get_or(w, "ox", -1.25), oy = get_or(w, "oy", -1.25);
  const double h = get_or(w, "h", 0.05);
  const int nx = get_or(w, "nx", 51), ny = get_or(w, "ny", 51);
  if (!(h > 0.0) || nx < 2 || ny < 2) throw ConfigError(ctx + ": invalid grid geometry");
  return GridField::make(ox, oy, h, nx, ny, 1, false);
}

DiscreteSignedMeasure measure_from(const json& p, const std::string& out_dir) {
  (void)out_dir;
  if (p.contains("measure_csv")) {
    return read_measure_csv(p.at("measure_csv").get<std::string>());
  }
  if (p.contains("atoms")) {
    DiscreteSignedMeasure m;
    for (const auto& row : p.at("atoms")) {
      if (!row.is_array() || row.size() != 3)
        throw ConfigError("atoms: each entry must be [y1, y2, w]");
      m.atoms.push_back({row[0].get<double>(), row[1].get<double>()});
      m.weights.push_back(row[2].get<double>());
    }
    if (m.size() == 0) throw ConfigError("atoms: empty list");
    m.prune(0.0, 0.0);
    return m;
  }
  return DiscreteSignedMeasure::point(0.0, 0.0, 1.0);
}

// --------------------------------------------------------------------------
// subcommands
// --------------------------------------------------------------------------

json run_fbm_sample(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  check_keys(p, {"H", "T", "N", "dim", "replicas", "method"}, "params");
  const HurstParams hp = HurstParams::make(get_or(p, "H", 0.3));
  const TimeGrid grid{get_or(p, "T", 1.0), get_or(p, "N", 256)};
  const int dim = get_or(p, "dim", 1);
  const int replicas = get_or(p, "replicas", 64);
  const FbmMethod method = fbm_method_from_name(get_or<std::string>(p, "method", "volterra"));
  const FbmEnsemble ens = sample_fbm(hp, grid, dim, replicas, method, seed, threads);
  write_ensemble_csv(ens, out + "/paths.csv");
  write_ensemble_binary(ens, out + "/paths.bin", out + "/paths_header.json");

  double m2 = 0.0;
  for (int m = 0; m < replicas; ++m)
    for (int c = 0; c < dim; ++c) {
      const double v = ens.path(m, grid.N, c);
      m2 += v * v;
    }
  m2 /= (double)replicas * dim;
  json s;
  s["terminal_second_moment"] = m2;
  s["terminal_second_moment_theory"] = std::pow(grid.T, 2.0 * hp.H);
  s["artifacts"] = {"paths.csv", "paths.bin", "paths_header.json"};
  return s;
}

json run_girsanov_check(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  check_keys(p, {"H", "T", "N", "replicas", "drift"}, "params");
  const HurstParams hp = HurstParams::make(get_or(p, "H", 0.3));
  const TimeGrid grid{get_or(p, "T", 1.0), get_or(p, "N", 512)};
  const int replicas = get_or(p, "replicas", 256);
  std::vector<double> b = get_or(p, "drift", std::vector<double>{0.5});
  const int dim = (int)b.size();
  const FbmEnsemble ens = sample_fbm(hp, grid, dim, replicas, FbmMethod::Volterra, seed, threads);
  std::vector<double> b_path((std::size_t)replicas * grid.N * dim);
  for (int m = 0; m < replicas; ++m)
    for (int n = 0; n < grid.N; ++n)
      for (int c = 0; c < dim; ++c)
        b_path[((std::size_t)m * grid.N + n) * dim + c] = b[c];
  const std::vector<GirsanovWeight> ws = girsanov_weight(b_path, ens, hp, threads);

  std::ofstream rec(out + "/weights.jsonl");
  double mean = 0.0, var = 0.0;
  for (int m = 0; m < replicas; ++m) {
    json row;
    row["replica"] = m;
    row["log_z"] = ws[m].log_z;
    row["l2_norm_sq"] = ws[m].l2_norm_sq;
    rec << row.dump() << "\n";
    mean += ws[m].z_T;
  }
  mean /= replicas;
  for (int m = 0; m < replicas; ++m) var += (ws[m].z_T - mean) * (ws[m].z_T - mean);
  var /= std::max(1, replicas - 1);
  json s;
  s["mean_z"] = mean;
  s["se_z"] = std::sqrt(var / replicas);
  s["mean_l2_norm_sq"] = [&] {
    double a = 0.0;
    for (const auto& w : ws) a += w.l2_norm_sq;
    return a / replicas;
  }();
  s["artifacts"] = {"weights.jsonl"};
  return s;
}

json run_forward_ns(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  check_keys(p, {"H", "T", "steps", "replicas", "eps", "measure_csv", "atoms", "window",
                 "velocity_step"},
             "params");
  ForwardVortexDrift spec;
  spec.nu0 = measure_from(p, out);
  spec.eps = get_or(p, "eps", 0.0);
  const HurstParams hp = HurstParams::make(get_or(p, "H", 0.5));
  const TimeGrid grid{get_or(p, "T", 0.25), get_or(p, "steps", 50)};
  const int replicas = get_or(p, "replicas", 1000);
  const int vstep = get_or(p, "velocity_step", grid.N);
  if (vstep < 0 || vstep > grid.N) throw ConfigError("velocity_step outside [0, steps]");
  const GridField layout =
      layout_from(p.contains("window") ? p.at("window") : json::object(), "window");

  const FlowEnsemble ens =
      forward_particle(spec, hp, grid, replicas, seed, {0, vstep, grid.N}, threads);
  const double eps = spec.eps > 0.0 ? spec.eps : default_mollifier_eps(spec.nu0);
  const VelocityField u = forward_velocity(ens, spec.nu0, eps, vstep, layout, threads);
  write_grid_csv(u.field, out + "/velocity.csv");
  write_grid_binary(u.field, out + "/velocity.bin", out + "/velocity_header.json");

  double umax = 0.0;
  for (double v : u.field.data) umax = std::max(umax, std::fabs(v));
  json s;
  s["t"] = u.t;
  s["eps"] = eps;
  s["umax"] = umax;
  s["div_grad_ratio"] = div_grad_ratio(u.field);
  s["source"] = u.source;
  s["artifacts"] = {"velocity.csv", "velocity.bin", "velocity_header.json"};
  return s;
}

json run_backward_ns(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  check_keys(p, {"T", "steps", "replicas", "terminal", "window", "eps", "tol", "max_iter",
                 "truncate", "truncate_bound"},
             "params");
  const TimeGrid grid{get_or(p, "T", 0.5), get_or(p, "steps", 25)};
  const int replicas = get_or(p, "replicas", 500);
  json tp = p.contains("terminal") ? p.at("terminal") : json::object();
  check_keys(tp, {"amp", "sigma"}, "terminal");
  const double amp = get_or(tp, "amp", 0.4), sigma = get_or(tp, "sigma", 0.5);
  if (!(sigma > 0.0)) throw ConfigError("terminal.sigma must be positive");
  json wp = p.contains("window") ? p.at("window") : json{{"ox", -1.5}, {"oy", -1.5},
                                                         {"h", 0.2}, {"nx", 16}, {"ny", 16}};
  const GridField layout = layout_from(wp, "window");

  BackwardPicardOptions opt;
  opt.conv_eps = get_or(p, "eps", 0.0);
  opt.tol = get_or(p, "tol", 1e-3);
  opt.max_iter = get_or(p, "max_iter", 6);
  opt.truncate = get_or(p, "truncate", false);
  opt.truncate_bound = get_or(p, "truncate_bound", 1.0);
  opt.threads = threads;
  const auto terminal = [amp, sigma](const double* x) {
    return amp * std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1]) / (sigma * sigma));
  };
  const BackwardPicardResult res = backward_picard(terminal, grid, layout, replicas, seed, opt);
  write_grid_csv(res.u.front(), out + "/velocity_s0.csv");
  write_grid_csv(res.u.back(), out + "/velocity_sT.csv");

  json s;
  s["iterations"] = res.iterations;
  s["converged"] = res.converged;
  s["sup_diffs"] = res.sup_diffs;
  s["artifacts"] = {"velocity_s0.csv", "velocity_sT.csv"};
  return s;
}

json run_oracle_compare(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  (void)out;
  check_keys(p, {"grid_n", "box", "nu", "dt", "T", "blob", "particle", "window"}, "params");
  const int n = get_or(p, "grid_n", 64);
  const double L = get_or(p, "box", 6.4);
  const double nu = get_or(p, "nu", 0.5);
  if (nu != 0.5)
    throw ConfigError("oracle-compare: the particle route fixes nu = 0.5 (unit Brownian noise)");
  const double T = get_or(p, "T", 0.1);
  const double dt = get_or(p, "dt", 0.0025);
  const int ora_steps = (int)std::lround(T / dt);
  if (std::fabs(ora_steps * dt - T) > 1e-9) throw ConfigError("oracle-compare: dt must divide T");

  json bp = p.contains("blob") ? p.at("blob") : json::object();
  check_keys(bp, {"mass", "sigma", "x", "y", "nodes"}, "blob");
  const double mass = get_or(bp, "mass", 1.0), sigma = get_or(bp, "sigma", 0.3);
  const double bx = get_or(bp, "x", 0.0), by = get_or(bp, "y", 0.0);
  const int nodes = get_or(bp, "nodes", 5);

  json pp = p.contains("particle") ? p.at("particle") : json::object();
  check_keys(pp, {"replicas", "steps", "eps"}, "particle");
  const int M = get_or(pp, "replicas", 500);
  const int steps = get_or(pp, "steps", 20);
  const double eps = get_or(pp, "eps", 0.1);

  // spectral reference on the torus centred so the blob sits mid-box
  GridField omega0 = GridField::make(bx - L / 2, by - L / 2, L / n, n, n, 1, true);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double norm = mass / (2.0 * M_PI * sigma * sigma);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const double dx = omega0.x(ix) - bx, dy = omega0.y(iy) - by;
      omega0.at(ix, iy) = norm * std::exp(-(dx * dx + dy * dy) * inv2s2);
    }
  const SpectralResult ref = spectral_oracle(omega0, nu, dt, ora_steps);

  // particle route from the Gauss-Hermite atomization of the same blob
  ForwardVortexDrift spec;
  spec.nu0 = gaussian_blob_atoms(mass, sigma, bx, by, nodes);
  spec.eps = eps;
  const TimeGrid grid{T, steps};
  const FlowEnsemble ens = forward_particle(spec, HurstParams::make(0.5), grid, M, seed,
                                            {0, grid.N}, threads);
  const GridField layout =
      layout_from(p.contains("window") ? p.at("window") : json::object(), "window");
  const GridField u_part = particle_velocity(ens, spec.nu0, eps, grid.N, layout, threads);

  // sample the torus field at the window nodes (bilinear, periodic wrap)
  double num = 0.0, den = 0.0;
  for (int iy = 0; iy < layout.ny; ++iy)
    for (int ix = 0; ix < layout.nx; ++ix) {
      const double x = layout.x(ix), y = layout.y(iy);
      double gx = (x - ref.u.ox) / ref.u.h, gy = (y - ref.u.oy) / ref.u.h;
      gx -= std::floor(gx / n) * n;
      gy -= std::floor(gy / n) * n;
      const int i0 = (int)gx % n, j0 = (int)gy % n;
      const int i1 = (i0 + 1) % n, j1 = (j0 + 1) % n;
      const double fx = gx - std::floor(gx), fy = gy - std::floor(gy);
      for (int c = 0; c < 2; ++c) {
        const double uref = (1 - fx) * (1 - fy) * ref.u.at(i0, j0, c) +
                            fx * (1 - fy) * ref.u.at(i1, j0, c) +
                            (1 - fx) * fy * ref.u.at(i0, j1, c) +
                            fx * fy * ref.u.at(i1, j1, c);
        const double d = u_part.at(ix, iy, c) - uref;
        num += d * d;
        den += uref * uref;
      }
    }
  json s;
  s["l2_rel_err"] = den > 0.0 ? std::sqrt(num / den) : 0.0;
  s["oracle_steps"] = ora_steps;
  s["particle_replicas"] = M;
  return s;
}

json run_diagnostics(const json& p, std::uint64_t seed, int threads, const std::string& out) {
  (void)out;
  check_keys(p, {"H", "T", "N", "dim", "replicas", "lambda", "drift"}, "params");
  const HurstParams hp = HurstParams::make(get_or(p, "H", 0.3));
  const TimeGrid grid{get_or(p, "T", 1.0), get_or(p, "N", 512)};
  const int dim = get_or(p, "dim", 1);
  const int replicas = get_or(p, "replicas", 2000);
  const double lambda = get_or(p, "lambda", 0.5);
  std::vector<double> bval = get_or(p, "drift", std::vector<double>(dim, 0.5));
  if ((int)bval.size() != dim) throw ConfigError("drift length must equal dim");

  const DriftField b = [bval](double, const double*, double* o) {
    for (std::size_t c = 0; c < bval.size(); ++c) o[c] = bval[c];
  };
  const KhasminskiiReport kh =
      khasminskii_diagnostic(b, hp, grid, dim, lambda, replicas, seed, threads);
  const ScalarField f = [](double, const double* x) { return std::exp(-0.5 * x[0] * x[0]); };
  const auto occ = occupation_moment_diagnostic(f, hp, grid, dim, {1, 2}, replicas, seed, threads);

  json s;
  s["khasminskii"] = {{"mean", kh.mean},
                      {"running_means", kh.running_means},
                      {"divergence_flag", kh.divergence_flag}};
  json om = json::array();
  for (const auto& o : occ)
    om.push_back({{"m", o.m}, {"moment", o.moment}, {"std_error", o.std_error}});
  s["occupation_moments"] = om;
  return s;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"simulation toolkit for distribution-flow SDEs and 2-d vortex dynamics"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::uint64_t seed_flag = 0;
  bool seed_given = false;
  int threads_flag = 0;
  bool threads_given = false;

  const std::vector<std::string> names = {"fbm-sample",  "girsanov-check", "forward-ns",
                                          "backward-ns", "oracle-compare", "diagnostics"};
  for (const auto& n : names) {
    CLI::App* sub = app.add_subcommand(n);
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--seed", seed_flag, "override the RNG seed")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--threads", threads_flag, "worker thread count (0 = hardware)")
        ->each([&](const std::string&) { threads_given = true; });
    sub->add_option("--out", out_dir, "output directory");
  }

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  try {
    json cfg = json::object();
    if (!config_path.empty()) cfg = read_json_file(config_path);
    check_keys(cfg, {"subcommand", "seed", "threads", "params"}, "config");
    if (cfg.contains("subcommand") && cfg.at("subcommand").get<std::string>() != sub)
      throw ConfigError("config subcommand '" + cfg.at("subcommand").get<std::string>() +
                        "' does not match invoked subcommand '" + sub + "'");
    const std::uint64_t seed = seed_given ? seed_flag : get_or<std::uint64_t>(cfg, "seed", 1);
    const int threads = resolve_threads(threads_given ? threads_flag : get_or(cfg, "threads", 1));
    const json params = cfg.contains("params") ? cfg.at("params") : json::object();

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    json manifest;
    manifest["subcommand"] = sub;
    manifest["seed"] = seed;
    manifest["threads"] = threads;
    manifest["params"] = params;

    json summary;
    if (sub == "fbm-sample")
      summary = run_fbm_sample(params, seed, threads, out_dir);
    else if (sub == "girsanov-check")
      summary = run_girsanov_check(params, seed, threads, out_dir);
    else if (sub == "forward-ns")
      summary = run_forward_ns(params, seed, threads, out_dir);
    else if (sub == "backward-ns")
      summary = run_backward_ns(params, seed, threads, out_dir);
    else if (sub == "oracle-compare")
      summary = run_oracle_compare(params, seed, threads, out_dir);
    else if (sub == "diagnostics")
      summary = run_diagnostics(params, seed, threads, out_dir);

    write_json_file(out_dir + "/manifest.json", manifest);
    summary["subcommand"] = sub;
    write_json_file(out_dir + "/summary.json", summary);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MeasureParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace dflow
