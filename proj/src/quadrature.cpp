#include "condgauss/quadrature.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace condgauss::quadrature {

GaussHermiteRule gauss_hermite(std::size_t n) {
  if (n == 0) throw std::invalid_argument("need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(k));
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  if (solver.info() != Eigen::Success) throw std::runtime_error("Jacobi eigen-decomposition failed");
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    rule.nodes[k] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights[k] = v0 * v0;
  }
  // Symmetrise so odd moments vanish to rounding.
  for (std::size_t k = 0; k < n / 2; ++k) {
    const std::size_t j = n - 1 - k;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[j] + rule.weights[k]);
    rule.nodes[k] = -x;
    rule.nodes[j] = x;
    rule.weights[k] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  const double total = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
  for (double& w : rule.weights) w /= total;
  return rule;
}

double expectation(const GaussHermiteRule& rule, const Fn& g) {
  long double acc = 0.0L;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) acc += rule.weights[k] * g(rule.nodes[k]);
  return static_cast<double>(acc);
}

std::vector<TestFunction> standard_test_functions() {
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  return {
      {"tanh", [](double x) { return std::tanh(x); },
       [](double x) {
         const double t = std::tanh(x);
         return 1.0 - t * t;
       }},
      {"x^2", [](double x) { return x * x; }, [](double x) { return 2.0 * x; }},
      {"softplus", softplus, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }},
  };
}

double IdentityCheck::error() const { return std::abs(lhs - rhs); }

IdentityCheck stein_check(const GaussHermiteRule& rule, const TestFunction& f) {
  IdentityCheck c;
  c.name = "stein " + f.name;
  c.lhs = expectation(rule, [&](double z) { return z * f.g(z); });
  c.rhs = expectation(rule, f.dg);
  return c;
}

std::vector<IdentityCheck> price_checks(const GaussHermiteRule& rule, const TestFunction& f, double m, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("scale must be positive");
  const double h = 1e-4;
  auto value = [&](double mm, double ss) { return expectation(rule, [&](double z) { return f.g(ss * z + mm); }); };
  // Fourth-order central differences of the quadrature expectation.
  auto diff = [h](const Fn& fn) { return (-fn(2 * h) + 8 * fn(h) - 8 * fn(-h) + fn(-2 * h)) / (12 * h); };
  IdentityCheck dm;
  dm.name = "price d/dm " + f.name;
  dm.lhs = diff([&](double e) { return value(m + e, s); });
  dm.rhs = expectation(rule, [&](double z) { return f.dg(s * z + m); });
  IdentityCheck ds;
  ds.name = "price d/ds " + f.name;
  ds.lhs = diff([&](double e) { return value(m, s + e); });
  ds.rhs = expectation(rule, [&](double z) { return z * f.dg(s * z + m); });
  return {dm, ds};
}

}  // namespace condgauss::quadrature
