#include "condgauss/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "condgauss/bounds.hpp"

namespace condgauss {

LinearizationReport linearization_report(const StochasticModel& model, const LabelledDataset& data, double pen,
                                         const RngStream& rng, std::size_t redraws, const BatchOptions& options,
                                         std::span<const std::size_t> rows, std::size_t bins) {
  if (redraws < 2) throw std::invalid_argument("need at least two redraws");
  if (bins == 0) throw std::invalid_argument("need at least one bin");
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows = all;
  }
  LinearizationReport r;
  r.pen = pen;
  r.estimates.resize(redraws);
  for (std::size_t k = 0; k < redraws; ++k) {
    r.estimates[k] = batch_error_estimate(model, data, rows, rng.derive(StreamTag::kDiagnostic, {k}), options);
  }
  long double sum = 0.0L;
  for (double e : r.estimates) sum += e;
  r.mean = static_cast<double>(sum / redraws);
  long double sq = 0.0L;
  for (double e : r.estimates) sq += (e - r.mean) * (e - r.mean);
  r.stddev = std::sqrt(static_cast<double>(sq / (redraws - 1)));

  const auto [lo_it, hi_it] = std::minmax_element(r.estimates.begin(), r.estimates.end());
  const double lo = *lo_it;
  const double width = std::max(*hi_it - lo, 1e-12) / static_cast<double>(bins);
  r.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) r.bin_edges[b] = lo + width * static_cast<double>(b);
  r.bin_counts.assign(bins, 0);
  for (double e : r.estimates) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>((e - lo) / width));
    ++r.bin_counts[b];
  }

  auto slope = [pen](double e) { return bounds::kl_inv_grad(std::clamp(e, 0.0, 1.0), pen).du; };
  r.slope_mid = slope(r.mean);
  r.slope_low = slope(r.mean - 2.0 * r.stddev);
  r.slope_high = slope(r.mean + 2.0 * r.stddev);
  r.relative_variation =
      std::max(std::abs(r.slope_low - r.slope_mid), std::abs(r.slope_high - r.slope_mid)) / std::abs(r.slope_mid);
  return r;
}

void LinearizationReport::write(std::ostream& out) const {
  const auto old = out.precision(8);
  out << "redraws=" << estimates.size() << '\n'
      << "mean=" << mean << '\n'
      << "stddev=" << stddev << '\n'
      << "pen=" << pen << '\n'
      << "slope_low=" << slope_low << '\n'
      << "slope_mid=" << slope_mid << '\n'
      << "slope_high=" << slope_high << '\n'
      << "relative_variation=" << relative_variation << '\n'
      << "histogram\n";
  std::size_t top = 1;
  for (std::size_t c : bin_counts) top = std::max(top, c);
  for (std::size_t b = 0; b < bin_counts.size(); ++b) {
    out << std::setw(12) << bin_edges[b] << ' ' << std::setw(6) << bin_counts[b] << ' '
        << std::string(bin_counts[b] * 50 / top, '#') << '\n';
  }
  out.precision(old);
}

}  // namespace condgauss
