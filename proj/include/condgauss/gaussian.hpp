#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "condgauss/rng.hpp"

namespace condgauss {

/// Class label, 1-based as in Y = {1, ..., q}. Use index() for array access.
struct ClassLabel {
  int value = 1;

  [[nodiscard]] std::size_t index() const { return static_cast<std::size_t>(value - 1); }
  static ClassLabel from_index(std::size_t i) { return ClassLabel{static_cast<int>(i) + 1}; }
  friend bool operator==(ClassLabel, ClassLabel) = default;
};

/// Diagonal Gaussian over one fully-connected layer: weights (out x in,
/// row-major) followed by biases (out). Standard deviations are derived from
/// the raw deviations as sigma = |rho|^{3/2} and are never stored.
class GaussianParamGroup {
 public:
  GaussianParamGroup() = default;
  GaussianParamGroup(std::size_t out_dim, std::size_t in_dim);

  [[nodiscard]] std::size_t out_dim() const { return out_dim_; }
  [[nodiscard]] std::size_t in_dim() const { return in_dim_; }
  [[nodiscard]] std::size_t weight_count() const { return out_dim_ * in_dim_; }
  [[nodiscard]] std::size_t size() const { return weight_count() + out_dim_; }

  std::span<double> mean() { return mean_; }
  [[nodiscard]] std::span<const double> mean() const { return mean_; }
  std::span<double> raw_dev() { return raw_dev_; }
  [[nodiscard]] std::span<const double> raw_dev() const { return raw_dev_; }

  [[nodiscard]] std::vector<double> sigma() const;
  [[nodiscard]] double sigma_at(std::size_t k) const;
  /// Sets rho so that sigma equals `s` everywhere.
  void set_sigma(double s);

  [[nodiscard]] std::span<const double> prior_mean() const { return prior_mean_; }
  [[nodiscard]] std::span<const double> prior_sigma() const { return prior_sigma_; }

  /// Copies the current (mean, sigma) into the prior slots.
  void freeze_prior();
  /// Installs an explicit prior (used when loading snapshots).
  void set_prior(std::vector<double> mean, std::vector<double> sigma);

 private:
  std::size_t out_dim_ = 0;
  std::size_t in_dim_ = 0;
  std::vector<double> mean_;
  std::vector<double> raw_dev_;
  std::vector<double> prior_mean_;
  std::vector<double> prior_sigma_;
};

/// Per-input conditional output law N(mean, diag(var)) of the last linear
/// layer given the last hidden activations.
struct ConditionalHead {
  std::vector<double> mean;
  std::vector<double> var;

  [[nodiscard]] std::size_t classes() const { return mean.size(); }
};

inline constexpr double kVarianceFloor = 1e-12;

/// Standard normal CDF.
double std_normal_cdf(double t);
/// Standard normal density.
double std_normal_pdf(double t);

using CdfFn = double (*)(double);

/// Exact misclassification probability for q = 2.
double binary_error_prob(const ConditionalHead& head, ClassLabel y);

struct EstimatorResult {
  double value = 0.0;         // mean over repeats
  double second_moment = 0.0;  // mean of squared draws, for standard errors
  std::vector<double> d_mean;
  std::vector<double> d_var;
};

/// L1 = psi(max_{i!=y} (F_i - M_y) / sqrt(V_y)) with F_i ~ N(M_i, V_i), averaged
/// over `repeats` independent draws, together with its pathwise gradient.
EstimatorResult estimator_l1(const ConditionalHead& head, ClassLabel y, RngStream& rng,
                             std::size_t repeats = 1, CdfFn cdf = &std_normal_cdf);

/// L2 = 1 - prod_{i!=y} psi((F_y - M_i) / sqrt(V_i)) with F_y ~ N(M_y, V_y).
EstimatorResult estimator_l2(const ConditionalHead& head, ClassLabel y, RngStream& rng,
                             std::size_t repeats = 1, CdfFn cdf = &std_normal_cdf);

/// M_i = sum_j m^W_ij phi_j + m^B_i, V_i = sum_j (s^W_ij phi_j)^2 + (s^B_i)^2.
ConditionalHead conditional_moments(std::span<const double> phi_h, const GaussianParamGroup& group);

/// KL(Q||P) between the diagonal Gaussians of every group and their frozen priors.
double kl_diag_gauss(std::span<const GaussianParamGroup> groups);

struct KlGroupGrad {
  std::vector<double> d_mean;
  std::vector<double> d_sigma;
};
/// Gradient of kl_diag_gauss w.r.t. each group's means and standard deviations.
std::vector<KlGroupGrad> kl_diag_gauss_grad(std::span<const GaussianParamGroup> groups);

struct SigmaOfRho {
  double sigma = 0.0;
  double dsigma_drho = 0.0;
};
SigmaOfRho sigma_of_rho(double rho);
/// rho >= 0 with sigma_of_rho(rho).sigma == s.
double rho_for_sigma(double s);

struct SampledParams {
  std::vector<double> theta;
  std::vector<double> zeta;
};
/// theta = mean + sigma * zeta, zeta i.i.d. N(0,1) from rng (recorded).
SampledParams sample_gaussian(const GaussianParamGroup& group, RngStream& rng);

}  // namespace condgauss
