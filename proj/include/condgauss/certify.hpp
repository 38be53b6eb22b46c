#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "condgauss/data.hpp"
#include "condgauss/network.hpp"
#include "condgauss/rng.hpp"

namespace condgauss {

struct Certificate {
  double tilde_e = 0.0;
  std::size_t n_draws = 0;
  double delta_prime = 0.01;
  double inner_bound = 0.0;
  double kl = 0.0;
  std::size_t m = 0;
  double delta = 0.025;
  double pen = 0.0;
  double final_bound = 0.0;
  double confidence = 0.0;
  std::uint64_t split_hash = 0;
  /// Set when a kl^-1 budget reached -log u, so the sup returned exactly 1.
  bool saturated = false;

  /// Flat key=value block.
  void write(std::ostream& out) const;
  [[nodiscard]] std::string to_text() const;
};

class CertificationRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Average of exact_misclassification over N full posterior draws.
double mc_empirical_error(const StochasticModel& model, const LabelledDataset& data, std::size_t n_draws,
                          const RngStream& rng);

/// kl^-1(tilde_e | log(2/delta')/N).
double inner_bound(double tilde_e, std::size_t n_draws, double delta_prime);

/// Nested bound from already-computed quantities; `pen` is used as given.
Certificate certificate_from_pen(double tilde_e, std::size_t n_draws, double delta_prime, double pen);

/// Nested bound with Pen computed from (kl, m, delta) at kappa = 1.
Certificate certificate_from_values(double tilde_e, std::size_t n_draws, double delta_prime, double kl, std::size_t m,
                                    double delta, std::uint64_t split_hash = 0);

/// Throws CertificationRefused if the prior saw any example of `bound_data`.
void require_prior_independence(const StochasticModel& model, const LabelledDataset& bound_data);

Certificate final_certificate(const StochasticModel& model, const LabelledDataset& bound_data, std::size_t n_draws,
                              double delta, double delta_prime, const RngStream& rng, std::uint64_t split_hash = 0);

}  // namespace condgauss
