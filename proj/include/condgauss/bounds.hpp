#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

// Binary-KL machinery, the four PAC-Bayes objectives and the KL penalty.
// Everything here is a pure function of its arguments.

namespace condgauss::bounds {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class BoundKind { kInvKl, kMcAllester, kQuadratic, kLambda };

std::string_view to_string(BoundKind kind);
/// Accepts `invkl`, `mcall`, `quad`, `lbd` (case-insensitive).
BoundKind parse_bound_kind(std::string_view name);

struct BoundSpec {
  BoundKind kind = BoundKind::kInvKl;
  double kappa = 1.0;
  double delta = 0.025;
  /// Only meaningful for kLambda; initial value when trained.
  std::optional<double> lambda = std::nullopt;

  void validate() const;
};

struct PenaltyInputs {
  double kl_div = 0.0;
  std::size_t m = 0;
  double delta = 0.025;
  double kappa = 1.0;
};

/// kl(u||v) between Bernoulli(u) and Bernoulli(v); +inf when v sits on an
/// endpoint the mass of u does not. Throws std::domain_error outside [0,1].
double kl_bernoulli(double u, double v);

/// sup{v in [0,1] : kl(u||v) <= c}. Newton on [u,1) with bisection fallback.
double kl_inv(double u, double c);

struct KlInvGrad {
  double du = 0.0;
  double dc = 0.0;
};

/// Partial derivatives of kl_inv(u, c). u is clamped to [1e-6, 1-1e-6] and the
/// inverse to [u+1e-9, 1-1e-9] before the implicit-function formulas, so the
/// result is always finite.
KlInvGrad kl_inv_grad(double u, double c);

/// Pen_kappa = kappa/m * (KL + log(2 sqrt(m) / delta)).
double penalty(const PenaltyInputs& in);
/// d Pen / d KL.
double penalty_slope(const PenaltyInputs& in);

/// Value of the chosen bound at (E, Pen). For kLambda the supplied lambda is
/// used as is (no infimum is taken here).
double objective_value(double emp_error, double pen, const BoundSpec& spec);

struct ObjectivePartials {
  double value = 0.0;
  double d_error = 0.0;
  double d_pen = 0.0;
  double d_lambda = 0.0;  // zero unless kind == kLambda
};

ObjectivePartials objective_partials(double emp_error, double pen, const BoundSpec& spec);

}  // namespace condgauss::bounds
