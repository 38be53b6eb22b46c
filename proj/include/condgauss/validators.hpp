#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "condgauss/gaussian.hpp"
#include "condgauss/network.hpp"
#include "condgauss/rng.hpp"

namespace condgauss {

struct McMean {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Frequency of F_y <= max_{i != y} F_i over `draws` samples F ~ N(M, diag V).
McMean argmax_error_frequency(const ConditionalHead& head, ClassLabel y, std::size_t draws, const RngStream& rng);

/// Mean of single-draw L1 or L2 values over `draws` independent draws.
McMean estimator_mean(const ConditionalHead& head, ClassLabel y, ErrorEstimator kind, std::size_t draws,
                      const RngStream& rng, CdfFn cdf = &std_normal_cdf);

/// Deliberately biased psi, used as a negative control for the check battery.
double corrupted_std_normal_cdf(double t);

struct CheckOptions {
  CdfFn cdf = &std_normal_cdf;
  std::size_t draws = 200000;
  std::uint64_t seed = 20240607;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<CheckResult> run_checks(const CheckOptions& options = {});
void print_check_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace condgauss
