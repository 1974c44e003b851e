#include "dflow/special.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace dflow {

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double beta_fn(double a, double b) { return std::exp(log_beta(a, b)); }

namespace {

// modified Lentz evaluation of the continued fraction for I_x(a,b)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-16, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("inc_beta: continued fraction did not converge");
}

}  // namespace

double inc_beta_reg(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("inc_beta: a,b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lfront = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(lfront) * betacf(a, b, x) / a;
  return 1.0 - std::exp(lfront) * betacf(b, a, 1.0 - x) / b;
}

double inc_beta_lower(double a, double b, double x) {
  return inc_beta_reg(a, b, x) * beta_fn(a, b);
}

namespace {

// Legendre P_n and derivative by recurrence
void legendre_eval(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1.0);
}

// Golub-Welsch: nodes = eigenvalues of the symmetrized recurrence matrix,
// weights = mu0 * (first eigenvector component)^2.  Robust for exponents
// close to -1, where Newton iterations on the polynomial lose roots that
// cluster at the singular endpoint.
QuadRule golub_welsch(const std::vector<double>& diag, const std::vector<double>& offdiag,
                      double mu0) {
  const int n = (int)diag.size();
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) J(k, k) = diag[k];
  for (int k = 1; k < n; ++k) {
    J(k, k - 1) = offdiag[k - 1];
    J(k - 1, k) = offdiag[k - 1];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    r.x[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    r.w[i] = mu0 * v0 * v0;
  }
  return r;
}

}  // namespace

QuadRule gauss_legendre(int n) {
  QuadRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    // Tricomi-style initial guess, then Newton
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double p, dp;
    for (int it = 0; it < 100; ++it) {
      legendre_eval(n, x, p, dp);
      const double dx = -p / dp;
      x += dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    legendre_eval(n, x, p, dp);
    r.x[n - 1 - i] = x;
    r.w[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

QuadRule gauss_jacobi(int n, double alpha, double beta) {
  if (alpha <= -1.0 || beta <= -1.0) throw std::domain_error("gauss_jacobi: need alpha,beta > -1");
  if (n < 1) throw std::domain_error("gauss_jacobi: n >= 1");
  // monic-Jacobi recurrence coefficients (Gautschi's a_k, b_k)
  const double ab = alpha + beta;
  std::vector<double> diag(n), off(std::max(0, n - 1));
  diag[0] = (beta - alpha) / (ab + 2.0);
  for (int k = 1; k < n; ++k) {
    const double den = (2.0 * k + ab) * (2.0 * k + ab + 2.0);
    diag[k] = (beta * beta - alpha * alpha) / den;
  }
  if (n > 1) {
    off[0] = std::sqrt(4.0 * (1.0 + alpha) * (1.0 + beta) / ((ab + 2.0) * (ab + 2.0) * (ab + 3.0)));
    for (int k = 2; k < n; ++k) {
      const double t = 2.0 * k + ab;
      off[k - 1] = std::sqrt(4.0 * k * (k + alpha) * (k + beta) * (k + ab) /
                             (t * t * (t + 1.0) * (t - 1.0)));
    }
  }
  const double mu0 = std::pow(2.0, ab + 1.0) * beta_fn(alpha + 1.0, beta + 1.0);
  return golub_welsch(diag, off, mu0);
}

QuadRule gauss_hermite(int n) {
  if (n < 1) throw std::domain_error("gauss_hermite: n >= 1");
  // monic Hermite recurrence: a_k = 0, b_k = k/2, mu0 = integral of exp(-x^2)
  std::vector<double> diag(n, 0.0), off(std::max(0, n - 1));
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(0.5 * k);
  return golub_welsch(diag, off, std::sqrt(M_PI));
}

}  // namespace dflow
