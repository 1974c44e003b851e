#pragma once
#include <vector>

namespace dflow {

double beta_fn(double a, double b);      // B(a,b) = Γ(a)Γ(b)/Γ(a+b)
double log_beta(double a, double b);

// regularized lower incomplete beta I_x(a,b), continued-fraction evaluation
double inc_beta_reg(double a, double b, double x);
// unregularized B_x(a,b) = I_x(a,b) * B(a,b)
double inc_beta_lower(double a, double b, double x);

struct QuadRule {
  std::vector<double> x;  // nodes on [-1,1]
  std::vector<double> w;
};

// Gauss-Legendre rule (weight 1)
QuadRule gauss_legendre(int n);
// Gauss-Jacobi rule with weight (1-x)^alpha (1+x)^beta on [-1,1]
QuadRule gauss_jacobi(int n, double alpha, double beta);
// Gauss-Hermite rule with weight exp(-x^2) on the real line (Golub-Welsch)
QuadRule gauss_hermite(int n);

}  // namespace dflow
