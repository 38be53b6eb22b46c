#include "condgauss/certify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <vector>

#include "condgauss/bounds.hpp"
#include "condgauss/parallel.hpp"

namespace condgauss {

void Certificate::write(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "tilde_e=" << tilde_e << '\n'
      << "n_draws=" << n_draws << '\n'
      << "delta_prime=" << delta_prime << '\n'
      << "inner_bound=" << inner_bound << '\n'
      << "kl=" << kl << '\n'
      << "m=" << m << '\n'
      << "delta=" << delta << '\n'
      << "pen=" << pen << '\n'
      << "final_bound=" << final_bound << '\n'
      << "confidence=" << confidence << '\n'
      << "split_hash=" << std::hex << std::setw(16) << std::setfill('0') << split_hash << std::dec
      << std::setfill(' ') << '\n';
  out.precision(old);
}

std::string Certificate::to_text() const {
  std::ostringstream s;
  write(s);
  return s.str();
}

double mc_empirical_error(const StochasticModel& model, const LabelledDataset& data, std::size_t n_draws,
                          const RngStream& rng) {
  if (n_draws == 0) throw std::invalid_argument("need at least one draw");
  std::vector<double> errors(n_draws);
  parallel_for(n_draws, [&](std::size_t n) {
    const auto theta = sample_all(model, rng.derive(StreamTag::kCertify, {n}));
    errors[n] = exact_misclassification(model, data, theta);
  });
  long double total = 0.0L;
  for (double e : errors) total += e;
  return static_cast<double>(total / n_draws);
}

double inner_bound(double tilde_e, std::size_t n_draws, double delta_prime) {
  if (n_draws == 0) throw std::domain_error("need at least one draw");
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) throw std::domain_error("delta' must lie in (0,1)");
  return bounds::kl_inv(tilde_e, std::log(2.0 / delta_prime) / static_cast<double>(n_draws));
}

Certificate certificate_from_pen(double tilde_e, std::size_t n_draws, double delta_prime, double pen) {
  Certificate c;
  c.tilde_e = tilde_e;
  c.n_draws = n_draws;
  c.delta_prime = delta_prime;
  c.inner_bound = inner_bound(tilde_e, n_draws, delta_prime);
  c.pen = pen;
  c.final_bound = bounds::kl_inv(c.inner_bound, pen);
  c.confidence = 1.0 - (c.delta + c.delta_prime);
  c.saturated = c.inner_bound >= 1.0 || c.final_bound >= 1.0;
  if (!(c.inner_bound >= c.tilde_e && c.final_bound >= c.inner_bound && c.final_bound <= 1.0)) {
    throw std::logic_error("certificate nesting violated");
  }
  return c;
}

Certificate certificate_from_values(double tilde_e, std::size_t n_draws, double delta_prime, double kl, std::size_t m,
                                    double delta, std::uint64_t split_hash) {
  if (m < 8) throw std::domain_error("the bound sample needs m >= 8");
  if (!(delta > 0.0 && delta < 1.0)) throw std::domain_error("delta must lie in (0,1)");
  if (!(delta + delta_prime < 1.0)) throw std::domain_error("delta + delta' must be below 1");
  const double pen = bounds::penalty({kl, m, delta, 1.0});
  Certificate c = certificate_from_pen(tilde_e, n_draws, delta_prime, pen);
  c.kl = kl;
  c.m = m;
  c.delta = delta;
  c.confidence = 1.0 - (delta + delta_prime);
  c.split_hash = split_hash;
  return c;
}

void require_prior_independence(const StochasticModel& model, const LabelledDataset& bound_data) {
  const PriorProvenance& p = model.provenance;
  if (p.data_free()) return;
  if (p.source_hash != bound_data.source_hash) return;
  std::vector<std::size_t> bound = bound_data.source_index;
  std::sort(bound.begin(), bound.end());
  std::vector<std::size_t> prior = p.indices;
  std::sort(prior.begin(), prior.end());
  std::vector<std::size_t> shared;
  std::set_intersection(prior.begin(), prior.end(), bound.begin(), bound.end(), std::back_inserter(shared));
  if (!shared.empty()) {
    throw CertificationRefused("prior was trained on " + std::to_string(shared.size()) +
                               " examples of the bound set (first source index " + std::to_string(shared.front()) +
                               ")");
  }
}

Certificate final_certificate(const StochasticModel& model, const LabelledDataset& bound_data, std::size_t n_draws,
                              double delta, double delta_prime, const RngStream& rng, std::uint64_t split_hash) {
  require_prior_independence(model, bound_data);
  const double tilde_e = mc_empirical_error(model, bound_data, n_draws, rng);
  return certificate_from_values(tilde_e, n_draws, delta_prime, model.kl(), bound_data.size(), delta, split_hash);
}

}  // namespace condgauss
