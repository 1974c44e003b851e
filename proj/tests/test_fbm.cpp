#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "dflow/fbm.hpp"
#include "test_util.hpp"

using namespace dflow;
using testutil::mean_var;
using testutil::rel_err;

TEST_CASE("c_H normalization constants") {
  // mpmath references for c_H = sqrt(2H / ((1-2H) B(1-2H, H+1/2)))
  const double refs[][2] = {{0.2, 0.556342865007197},
                            {0.25, 0.645998003740752},
                            {0.3, 0.730282934079923},
                            {0.4, 0.8807256833637269},
                            {0.5, 1.0}};
  for (auto& r : refs) {
    const HurstParams hp = HurstParams::make(r[0]);
    CHECK(rel_err(hp.cH, r[1]) < 1e-12);
    CHECK(rel_err(hp.qH, 1.0 / (1.0 - r[0])) < 1e-15);
  }
  CHECK_THROWS(HurstParams::make(0.0));
  CHECK_THROWS(HurstParams::make(0.7));
}

TEST_CASE("fbm covariance closed form") {
  const HurstParams h25 = HurstParams::make(0.25);
  const HurstParams h50 = HurstParams::make(0.5);
  CHECK(fbm_covariance(h25, 1.0, 0.0) == 0.0);
  CHECK(fbm_covariance(h50, 1.0, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(fbm_covariance(h25, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(fbm_covariance(h25, 0.3, 0.8) == doctest::Approx(fbm_covariance(h25, 0.8, 0.3)));
}

TEST_CASE("volterra kernel against frozen quadrature references") {
  // independent mpmath evaluations (closed incomplete-beta form cross-checked
  // against adaptive quadrature at 50 digits)
  struct Ref {
    double H, t, s, K;
  };
  const Ref refs[] = {
      {0.25, 1.0, 0.5, 0.8203226237647528},  {0.3, 2.0, 1.0, 0.7600029290029944},
      {0.2, 1.0, 0.25, 0.7557324178041652},  {0.4, 0.7, 0.3, 0.9763360591478683},
      {0.3, 1.0, 0.001, 1.7271738630215183}, {0.25, 1.0, 0.9, 1.1591008457049508},
  };
  for (auto& r : refs) {
    const HurstParams hp = HurstParams::make(r.H);
    CHECK(rel_err(volterra_kernel(hp, r.t, r.s), r.K) < 1e-9);
    // lower bound K_H(t,s) >= c_H (t-s)^{H-1/2}
    CHECK(volterra_kernel(hp, r.t, r.s) >=
          hp.cH * std::pow(r.t - r.s, r.H - 0.5) * (1.0 - 1e-12));
  }
  // H = 1/2: kernel degenerates to 1
  const HurstParams h50 = HurstParams::make(0.5);
  CHECK(volterra_kernel(h50, 1.0, 0.3) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS(volterra_kernel(h50, 0.3, 0.3));
  CHECK_THROWS(volterra_kernel(h50, 0.3, -0.1));
}

TEST_CASE("volterra kernel dual-route agreement") {
  // quadrature route vs incomplete-beta closed form of the inner integral
  for (double H : {0.2, 0.3, 0.45}) {
    const HurstParams hp = HurstParams::make(H);
    for (double t : {0.4, 1.0, 2.5}) {
      for (double frac : {0.01, 0.2, 0.5, 0.9, 0.99}) {
        const double s = frac * t;
        const double a = volterra_kernel(hp, t, s);
        const double b = detail::volterra_kernel_incbeta(hp, t, s);
        CHECK(rel_err(a, b) < 1e-10);
      }
    }
  }
}

TEST_CASE("volterra kernel scale equivariance") {
  // K_H(ct, cs) = c^{H-1/2} K_H(t,s)
  const HurstParams hp = HurstParams::make(0.35);
  for (double c : {0.5, 2.0, 7.0}) {
    const double lhs = volterra_kernel(hp, c * 1.3, c * 0.4);
    const double rhs = std::pow(c, hp.H - 0.5) * volterra_kernel(hp, 1.3, 0.4);
    CHECK(rel_err(lhs, rhs) < 1e-11);
  }
}

TEST_CASE("H=0.5 samplers reduce to standard Brownian motion") {
  const HurstParams hp = HurstParams::make(0.5);
  const TimeGrid grid{1.0, 32};
  const FbmEnsemble vol = sample_fbm(hp, grid, 1, 8, FbmMethod::Volterra, 99);
  REQUIRE(vol.has_driver());
  // volterra path equals the cumulative sum of its own driver exactly
  for (int m = 0; m < vol.replicas; ++m) {
    double acc = 0.0;
    CHECK(vol.path(m, 0, 0) == 0.0);
    for (int n = 0; n < grid.N; ++n) {
      acc += vol.driver_inc(m, n, 0);
      CHECK(std::fabs(vol.path(m, n + 1, 0) - acc) < 1e-12);
    }
  }
  // increments of the exact sampler are iid N(0, dt): variance within 4 SE
  const int M = 20000;
  const FbmEnsemble ex = sample_fbm(hp, grid, 1, M, FbmMethod::ExactCholesky, 7);
  std::vector<double> incs(M);
  for (int m = 0; m < M; ++m) incs[m] = ex.path(m, 5, 0) - ex.path(m, 4, 0);
  const auto mv = mean_var(incs);
  const double dt = grid.dt();
  CHECK(std::fabs(mv.var - dt) < 4.0 * dt * std::sqrt(2.0 / (M - 1.0)));
  CHECK(std::fabs(mv.mean) < 4.0 * mv.se);
}

TEST_CASE("terminal variance matches T^2H for every method") {
  const TimeGrid grid{1.5, 48};
  const int M = 20000;
  for (double H : {0.3, 0.5}) {
    const HurstParams hp = HurstParams::make(H);
    for (FbmMethod method :
         {FbmMethod::ExactCholesky, FbmMethod::Circulant, FbmMethod::Volterra}) {
      const FbmEnsemble e = sample_fbm(hp, grid, 1, M, method, 1234);
      std::vector<double> term(M);
      for (int m = 0; m < M; ++m) term[m] = e.path(m, grid.N, 0);
      const auto mv = mean_var(term);
      const double want = std::pow(grid.T, 2.0 * H);
      // volterra is a left-point scheme: first-order bias on top of MC noise
      const double tol = 4.0 * want * std::sqrt(2.0 / (M - 1.0)) +
                         (method == FbmMethod::Volterra ? 0.02 * want : 0.0);
      INFO("H=", H, " method=", fbm_method_name(method), " var=", mv.var, " want=", want);
      CHECK(std::fabs(mv.var - want) < tol);
    }
  }
}

TEST_CASE("cross-method covariance agreement at H=0.25") {
  // empirical covariance at a few node pairs: exact-cholesky vs circulant
  const HurstParams hp = HurstParams::make(0.25);
  const TimeGrid grid{1.0, 64};
  const int M = 20000;
  const FbmEnsemble a = sample_fbm(hp, grid, 1, M, FbmMethod::ExactCholesky, 21);
  const FbmEnsemble b = sample_fbm(hp, grid, 1, M, FbmMethod::Circulant, 22);
  const int nodes[] = {16, 32, 64};
  for (int i : nodes)
    for (int j : nodes) {
      if (j > i) continue;
      auto cov_of = [&](const FbmEnsemble& e) {
        std::vector<double> prod(M);
        for (int m = 0; m < M; ++m) prod[m] = e.path(m, i, 0) * e.path(m, j, 0);
        return mean_var(prod);
      };
      const auto ca = cov_of(a), cb = cov_of(b);
      const double se = std::sqrt(ca.se * ca.se + cb.se * cb.se);
      INFO("nodes ", i, ",", j, ": ", ca.mean, " vs ", cb.mean);
      CHECK(std::fabs(ca.mean - cb.mean) < 4.0 * se);
      // and both near the closed form
      const double want = fbm_covariance(hp, grid.node(i), grid.node(j));
      CHECK(std::fabs(ca.mean - want) < 4.0 * ca.se);
    }
}

TEST_CASE("self-similarity of variance across scales") {
  // Var(W_{lambda t}) / Var(W_t) = lambda^{2H}
  const HurstParams hp = HurstParams::make(0.3);
  const TimeGrid grid{2.0, 64};
  const int M = 20000;
  const FbmEnsemble e = sample_fbm(hp, grid, 1, M, FbmMethod::ExactCholesky, 5);
  std::vector<double> at16(M), at64(M);  // t = 0.5 and t = 2.0, lambda = 4
  for (int m = 0; m < M; ++m) {
    at16[m] = e.path(m, 16, 0);
    at64[m] = e.path(m, 64, 0);
  }
  const double ratio = mean_var(at64).var / mean_var(at16).var;
  const double want = std::pow(4.0, 2.0 * hp.H);
  CHECK(rel_err(ratio, want) < 0.08);  // ratio of correlated variances, generous MC room
}

TEST_CASE("stationary increments") {
  // Cov(W_{t+r}-W_r, W_{s+r}-W_r) = fbm_covariance(t, s)
  const HurstParams hp = HurstParams::make(0.3);
  const TimeGrid grid{1.0, 64};
  const int M = 20000;
  const FbmEnsemble e = sample_fbm(hp, grid, 1, M, FbmMethod::ExactCholesky, 31);
  const int r = 16, ti = 24, si = 40;  // offsets 24/64 and 40/64 past r
  std::vector<double> prod(M);
  for (int m = 0; m < M; ++m)
    prod[m] = (e.path(m, r + ti, 0) - e.path(m, r, 0)) * (e.path(m, r + si, 0) - e.path(m, r, 0));
  const auto mv = mean_var(prod);
  const double want = fbm_covariance(hp, grid.node(ti), grid.node(si));
  CHECK(std::fabs(mv.mean - want) < 4.0 * mv.se);
}

TEST_CASE("determinism and replica-prefix stability") {
  const HurstParams hp = HurstParams::make(0.3);
  const TimeGrid grid{1.0, 16};
  for (FbmMethod method :
       {FbmMethod::ExactCholesky, FbmMethod::Circulant, FbmMethod::Volterra}) {
    const FbmEnsemble a = sample_fbm(hp, grid, 2, 6, method, 42, 1);
    const FbmEnsemble b = sample_fbm(hp, grid, 2, 6, method, 42, 4);
    CHECK(a.paths == b.paths);  // bitwise identical across thread counts
    const FbmEnsemble c = sample_fbm(hp, grid, 2, 3, method, 42, 2);
    // per-replica substreams: a prefix of the replica set is unchanged
    for (int m = 0; m < 3; ++m)
      for (int n = 0; n <= grid.N; ++n)
        for (int c2 = 0; c2 < 2; ++c2) CHECK(a.path(m, n, c2) == c.path(m, n, c2));
  }
}

TEST_CASE("dimension components are independent streams") {
  const HurstParams hp = HurstParams::make(0.4);
  const TimeGrid grid{1.0, 32};
  const int M = 4000;
  const FbmEnsemble e = sample_fbm(hp, grid, 2, M, FbmMethod::ExactCholesky, 17);
  std::vector<double> prod(M);
  for (int m = 0; m < M; ++m) prod[m] = e.path(m, 32, 0) * e.path(m, 32, 1);
  const auto mv = mean_var(prod);
  CHECK(std::fabs(mv.mean) < 4.0 * mv.se);
  for (int m = 0; m < M; ++m) {
    CHECK(e.path(m, 0, 0) == 0.0);
    CHECK(e.path(m, 0, 1) == 0.0);
  }
}

TEST_CASE("ensemble serialization round trip") {
  const HurstParams hp = HurstParams::make(0.5);
  const TimeGrid grid{1.0, 4};
  const FbmEnsemble e = sample_fbm(hp, grid, 1, 2, FbmMethod::ExactCholesky, 3);
  const std::string csv = "/tmp/dflow_test_paths.csv";
  const std::string bin = "/tmp/dflow_test_paths.bin";
  const std::string hdr = "/tmp/dflow_test_paths.json";
  write_ensemble_csv(e, csv);
  write_ensemble_binary(e, bin, hdr);
  FILE* f = std::fopen(bin.c_str(), "rb");
  REQUIRE(f != nullptr);
  std::vector<double> back(e.paths.size());
  REQUIRE(std::fread(back.data(), sizeof(double), back.size(), f) == back.size());
  std::fclose(f);
  CHECK(back == e.paths);
}
