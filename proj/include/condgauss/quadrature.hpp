#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace condgauss::quadrature {

/// Gauss-Hermite rule for the standard normal weight: E[g(Z)] ~ sum_k w_k g(x_k).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point rule from the eigen-decomposition of the Jacobi matrix.
GaussHermiteRule gauss_hermite(std::size_t n);

using Fn = std::function<double(double)>;

double expectation(const GaussHermiteRule& rule, const Fn& g);

struct TestFunction {
  std::string name;
  Fn g;
  Fn dg;
};
/// tanh, x^2 and softplus with their derivatives.
std::vector<TestFunction> standard_test_functions();

struct IdentityCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  [[nodiscard]] double error() const;
};

/// E[Z g(Z)] against E[g'(Z)].
IdentityCheck stein_check(const GaussHermiteRule& rule, const TestFunction& f);

/// d/dm E[g(sZ+m)] against E[g'(sZ+m)] and d/ds E[g(sZ+m)] against E[Z g'(sZ+m)].
/// The left-hand sides differentiate the quadrature expectation itself.
std::vector<IdentityCheck> price_checks(const GaussHermiteRule& rule, const TestFunction& f, double m, double s);

}  // namespace condgauss::quadrature
