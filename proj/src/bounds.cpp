#include "condgauss/bounds.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

namespace condgauss::bounds {

namespace {

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error(std::string(what) + " must lie in [0,1], got " + std::to_string(p));
  }
}

// v0 from Pinsker: kl(u||v) >= 2(v-u)^2, so u + sqrt(c/2) is never left of the root.
constexpr double kNewtonTolerance = 1e-12;
constexpr int kNewtonMaxIterations = 100;

constexpr double kGradUClamp = 1e-6;
constexpr double kGradVClamp = 1e-9;

}  // namespace

std::string_view to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::kInvKl: return "invkl";
    case BoundKind::kMcAllester: return "mcall";
    case BoundKind::kQuadratic: return "quad";
    case BoundKind::kLambda: return "lbd";
  }
  return "?";
}

BoundKind parse_bound_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "invkl") return BoundKind::kInvKl;
  if (s == "mcall") return BoundKind::kMcAllester;
  if (s == "quad") return BoundKind::kQuadratic;
  if (s == "lbd") return BoundKind::kLambda;
  throw std::invalid_argument("unknown bound kind '" + std::string(name) + "'");
}

void BoundSpec::validate() const {
  if (!(kappa > 0.0)) throw std::domain_error("kappa must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::domain_error("delta must lie in (0,1)");
  if (kind == BoundKind::kLambda) {
    if (!lambda || !(*lambda > 0.0 && *lambda < 1.0)) {
      throw std::domain_error("lbd objective needs lambda in (0,1)");
    }
  }
}

double kl_bernoulli(double u, double v) {
  require_probability(u, "u");
  require_probability(v, "v");
  if (u == v) return 0.0;
  double out = 0.0;
  if (u > 0.0) {
    if (v == 0.0) return kInfinity;
    out += u * std::log(u / v);
  }
  if (u < 1.0) {
    if (v == 1.0) return kInfinity;
    // log((1-u)/(1-v)) = log1p((v-u)/(1-v))
    out += (1.0 - u) * std::log1p((v - u) / (1.0 - v));
  }
  return std::max(out, 0.0);
}

double kl_inv(double u, double c) {
  require_probability(u, "u");
  if (!(c >= 0.0)) throw std::domain_error("kl budget c must be non-negative");
  if (c == 0.0 || u == 1.0) return u;
  if (std::isinf(c)) return 1.0;
  if (u == 0.0) return -std::expm1(-c);
  // kl(u||1^-) = -log(u): any larger budget admits every v. Ties go to 1 (sup).
  if (c >= -std::log(u)) return 1.0;

  double lo = u;
  double hi = 1.0;
  double v = std::clamp(u + std::sqrt(c / 2.0), u + 1e-12, 1.0 - 1e-12);
  for (int it = 0; it < kNewtonMaxIterations; ++it) {
    const double f = kl_bernoulli(u, v) - c;
    if (std::abs(f) < kNewtonTolerance) break;
    if (f > 0.0) {
      hi = v;
    } else {
      lo = v;
    }
    const double slope = (1.0 - u) / (1.0 - v) - u / v;
    double next = v - f / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == v) break;
    v = next;
  }
  return v;
}

KlInvGrad kl_inv_grad(double u, double c) {
  require_probability(u, "u");
  if (!(c >= 0.0) || std::isinf(c)) throw std::domain_error("kl budget c must be finite and non-negative");
  const double uc = std::clamp(u, kGradUClamp, 1.0 - kGradUClamp);
  const double v = std::clamp(kl_inv(uc, c), uc + kGradVClamp, 1.0 - kGradVClamp);
  const double slope = (1.0 - uc) / (1.0 - v) - uc / v;
  KlInvGrad g;
  g.dc = 1.0 / slope;
  g.du = (std::log((1.0 - uc) / (1.0 - v)) - std::log(uc / v)) / slope;
  return g;
}

double penalty(const PenaltyInputs& in) {
  return penalty_slope(in) * (in.kl_div + std::log(2.0 * std::sqrt(static_cast<double>(in.m)) / in.delta));
}

double penalty_slope(const PenaltyInputs& in) {
  if (in.m == 0) throw std::domain_error("penalty needs m >= 1");
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw std::domain_error("delta must lie in (0,1)");
  if (!(in.kappa > 0.0)) throw std::domain_error("kappa must be positive");
  if (!(in.kl_div >= 0.0)) throw std::domain_error("KL divergence must be non-negative");
  return in.kappa / static_cast<double>(in.m);
}

double objective_value(double emp_error, double pen, const BoundSpec& spec) {
  return objective_partials(emp_error, pen, spec).value;
}

ObjectivePartials objective_partials(double emp_error, double pen, const BoundSpec& spec) {
  require_probability(emp_error, "empirical error");
  if (!(pen >= 0.0)) throw std::domain_error("penalty must be non-negative");
  ObjectivePartials out;
  switch (spec.kind) {
    case BoundKind::kInvKl: {
      out.value = kl_inv(emp_error, pen);
      const KlInvGrad g = kl_inv_grad(emp_error, pen);
      out.d_error = g.du;
      out.d_pen = g.dc;
      break;
    }
    case BoundKind::kMcAllester: {
      const double root = std::sqrt(pen / 2.0);
      out.value = emp_error + root;
      out.d_error = 1.0;
      out.d_pen = 0.25 / root;
      break;
    }
    case BoundKind::kQuadratic: {
      const double a = std::sqrt(emp_error + pen / 2.0);
      const double b = std::sqrt(pen / 2.0);
      out.value = (a + b) * (a + b);
      out.d_error = (a + b) / a;
      out.d_pen = 0.5 * (a + b) * (1.0 / a + 1.0 / b);
      break;
    }
    case BoundKind::kLambda: {
      if (!spec.lambda) throw std::domain_error("lbd objective needs lambda");
      const double lam = *spec.lambda;
      if (!(lam > 0.0 && lam < 1.0)) throw std::domain_error("lambda must lie in (0,1)");
      const double scale = 1.0 / (1.0 - lam / 2.0);
      const double inner = emp_error + pen / lam;
      out.value = scale * inner;
      out.d_error = scale;
      out.d_pen = scale / lam;
      out.d_lambda = -scale * pen / (lam * lam) + 0.5 * scale * scale * inner;
      break;
    }
  }
  return out;
}

}  // namespace condgauss::bounds
