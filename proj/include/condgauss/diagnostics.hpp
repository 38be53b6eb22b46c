#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "condgauss/data.hpp"
#include "condgauss/network.hpp"
#include "condgauss/rng.hpp"

namespace condgauss {

/// Spread of the Cond-Gauss error estimate over independent redraws, and how
/// much the invKL slope dB/dE changes across that spread. A small change means
/// B(E_hat) is close to affine there, so the bound of the estimate is close to
/// an unbiased estimate of the bound.
struct LinearizationReport {
  std::vector<double> estimates;
  double mean = 0.0;
  double stddev = 0.0;
  double pen = 0.0;
  std::vector<double> bin_edges;
  std::vector<std::size_t> bin_counts;
  double slope_low = 0.0;   // at mean - 2 sd
  double slope_mid = 0.0;   // at mean
  double slope_high = 0.0;  // at mean + 2 sd
  double relative_variation = 0.0;

  void write(std::ostream& out) const;
};

/// `rows` empty means the whole dataset; `pen` is the penalty of the bound
/// being linearised.
LinearizationReport linearization_report(const StochasticModel& model, const LabelledDataset& data, double pen,
                                         const RngStream& rng, std::size_t redraws = 1000,
                                         const BatchOptions& options = {}, std::span<const std::size_t> rows = {},
                                         std::size_t bins = 20);

}  // namespace condgauss
