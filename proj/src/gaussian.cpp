#include "condgauss/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace condgauss {

GaussianParamGroup::GaussianParamGroup(std::size_t out_dim, std::size_t in_dim)
    : out_dim_(out_dim), in_dim_(in_dim), mean_(size(), 0.0), raw_dev_(size(), 0.0) {}

std::vector<double> GaussianParamGroup::sigma() const {
  std::vector<double> s(raw_dev_.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = sigma_of_rho(raw_dev_[k]).sigma;
  return s;
}

double GaussianParamGroup::sigma_at(std::size_t k) const { return sigma_of_rho(raw_dev_[k]).sigma; }

void GaussianParamGroup::set_sigma(double s) { std::fill(raw_dev_.begin(), raw_dev_.end(), rho_for_sigma(s)); }

void GaussianParamGroup::freeze_prior() {
  prior_mean_ = mean_;
  prior_sigma_ = sigma();
}

void GaussianParamGroup::set_prior(std::vector<double> mean, std::vector<double> sigma) {
  if (mean.size() != size() || sigma.size() != size()) {
    throw std::invalid_argument("prior arrays do not match the group shape");
  }
  prior_mean_ = std::move(mean);
  prior_sigma_ = std::move(sigma);
}

double std_normal_cdf(double t) { return 0.5 * std::erfc(-t * std::numbers::sqrt2 / 2.0); }

double std_normal_pdf(double t) {
  static const double kNorm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return kNorm * std::exp(-0.5 * t * t);
}

double binary_error_prob(const ConditionalHead& head, ClassLabel y) {
  if (head.classes() != 2 || head.var.size() != 2) throw std::invalid_argument("binary_error_prob needs q = 2");
  if (y.value != 1 && y.value != 2) throw std::out_of_range("label must be 1 or 2");
  const double scale = std::sqrt(std::max(head.var[0] + head.var[1], kVarianceFloor));
  const std::size_t self = y.index();
  const std::size_t other = 1 - self;
  return std_normal_cdf((head.mean[other] - head.mean[self]) / scale);
}

namespace {

void check_head(const ConditionalHead& head, ClassLabel y) {
  if (head.classes() < 2 || head.var.size() != head.classes()) {
    throw std::invalid_argument("conditional head needs q >= 2 and matching mean/var sizes");
  }
  if (y.value < 1 || y.index() >= head.classes()) throw std::out_of_range("label outside 1..q");
  if (!(head.var[y.index()] > 0.0)) throw std::domain_error("V_y must be positive");
}

struct FlooredVar {
  double var;
  double root;
  bool active;  // false when clamped: no gradient flows to V
};

FlooredVar floor_var(double v) {
  const bool active = v > kVarianceFloor;
  const double fv = active ? v : kVarianceFloor;
  return {fv, std::sqrt(fv), active};
}

void finish(EstimatorResult& r, std::size_t repeats) {
  const double inv = 1.0 / static_cast<double>(repeats);
  r.value *= inv;
  r.second_moment *= inv;
  for (double& g : r.d_mean) g *= inv;
  for (double& g : r.d_var) g *= inv;
}

}  // namespace

EstimatorResult estimator_l1(const ConditionalHead& head, ClassLabel y, RngStream& rng, std::size_t repeats,
                             CdfFn cdf) {
  check_head(head, y);
  if (repeats == 0) throw std::invalid_argument("repeats must be >= 1");
  const std::size_t q = head.classes();
  const std::size_t iy = y.index();
  std::vector<FlooredVar> fv(q);
  for (std::size_t i = 0; i < q; ++i) fv[i] = floor_var(head.var[i]);

  EstimatorResult r;
  r.d_mean.assign(q, 0.0);
  r.d_var.assign(q, 0.0);
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::size_t best = q;
    double best_f = 0.0;
    double best_xi = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
      if (i == iy) continue;
      const double xi = rng.normal();
      const double f = head.mean[i] + fv[i].root * xi;
      if (best == q || f > best_f) {
        best = i;
        best_f = f;
        best_xi = xi;
      }
    }
    const double t = (best_f - head.mean[iy]) / fv[iy].root;
    const double value = cdf(t);
    r.value += value;
    r.second_moment += value * value;

    const double dt = std_normal_pdf(t) / fv[iy].root;
    r.d_mean[iy] -= dt;
    r.d_mean[best] += dt;
    if (fv[iy].active) r.d_var[iy] -= dt * (best_f - head.mean[iy]) / (2.0 * fv[iy].var);
    if (fv[best].active) r.d_var[best] += dt * best_xi / (2.0 * fv[best].root);
  }
  finish(r, repeats);
  return r;
}

EstimatorResult estimator_l2(const ConditionalHead& head, ClassLabel y, RngStream& rng, std::size_t repeats,
                             CdfFn cdf) {
  check_head(head, y);
  if (repeats == 0) throw std::invalid_argument("repeats must be >= 1");
  const std::size_t q = head.classes();
  const std::size_t iy = y.index();
  std::vector<FlooredVar> fv(q);
  for (std::size_t i = 0; i < q; ++i) fv[i] = floor_var(head.var[i]);

  EstimatorResult r;
  r.d_mean.assign(q, 0.0);
  r.d_var.assign(q, 0.0);
  std::vector<double> z(q), cdfs(q, 1.0), prefix(q + 1), suffix(q + 1);
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    const double xi = rng.normal();
    const double fy = head.mean[iy] + fv[iy].root * xi;
    for (std::size_t i = 0; i < q; ++i) {
      if (i == iy) {
        cdfs[i] = 1.0;
        continue;
      }
      z[i] = (fy - head.mean[i]) / fv[i].root;
      cdfs[i] = cdf(z[i]);
    }
    prefix[0] = 1.0;
    for (std::size_t i = 0; i < q; ++i) prefix[i + 1] = prefix[i] * cdfs[i];
    suffix[q] = 1.0;
    for (std::size_t i = q; i-- > 0;) suffix[i] = suffix[i + 1] * cdfs[i];

    const double value = 1.0 - prefix[q];
    r.value += value;
    r.second_moment += value * value;

    double d_fy = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
      if (i == iy) continue;
      // dL2/dz_i = -pdf(z_i) * prod_{j != i, y} psi(z_j)
      const double dz = -std_normal_pdf(z[i]) * prefix[i] * suffix[i + 1] / fv[i].root;
      r.d_mean[i] -= dz;
      if (fv[i].active) r.d_var[i] -= dz * z[i] / (2.0 * fv[i].root);
      d_fy += dz;
    }
    r.d_mean[iy] += d_fy;
    if (fv[iy].active) r.d_var[iy] += d_fy * xi / (2.0 * fv[iy].root);
  }
  finish(r, repeats);
  return r;
}

ConditionalHead conditional_moments(std::span<const double> phi_h, const GaussianParamGroup& group) {
  if (phi_h.size() != group.in_dim()) {
    throw std::invalid_argument("conditional_moments: activation length " + std::to_string(phi_h.size()) +
                                " does not match layer input " + std::to_string(group.in_dim()));
  }
  const std::size_t q = group.out_dim();
  const std::size_t n = group.in_dim();
  const auto mean = group.mean();
  const auto rho = group.raw_dev();
  ConditionalHead head;
  head.mean.resize(q);
  head.var.resize(q);
  for (std::size_t i = 0; i < q; ++i) {
    long double m = 0.0L;
    long double v = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
      const double phi = phi_h[j];
      m += mean[i * n + j] * phi;
      const double s = sigma_of_rho(rho[i * n + j]).sigma * phi;
      v += s * s;
    }
    const std::size_t b = group.weight_count() + i;
    const double sb = sigma_of_rho(rho[b]).sigma;
    head.mean[i] = static_cast<double>(m + mean[b]);
    head.var[i] = static_cast<double>(v + static_cast<long double>(sb) * sb);
  }
  return head;
}

namespace {

void check_kl_inputs(const GaussianParamGroup& g) {
  if (g.prior_mean().size() != g.size() || g.prior_sigma().size() != g.size()) {
    throw std::logic_error("KL needs a frozen prior on every group");
  }
}

}  // namespace

double kl_diag_gauss(std::span<const GaussianParamGroup> groups) {
  long double total = 0.0L;
  for (const GaussianParamGroup& g : groups) {
    check_kl_inputs(g);
    const auto mean = g.mean();
    const auto rho = g.raw_dev();
    const auto pm = g.prior_mean();
    const auto ps = g.prior_sigma();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double s = sigma_of_rho(rho[k]).sigma;
      if (!(s > 0.0) || !(ps[k] > 0.0)) throw std::domain_error("KL needs strictly positive standard deviations");
      const double ratio = s / ps[k];
      const double shift = (mean[k] - pm[k]) / ps[k];
      total += 0.5L * (static_cast<long double>(ratio) * ratio - 1.0L) + 0.5L * static_cast<long double>(shift) * shift -
               std::log(static_cast<long double>(ratio));
    }
  }
  return static_cast<double>(total);
}

std::vector<KlGroupGrad> kl_diag_gauss_grad(std::span<const GaussianParamGroup> groups) {
  std::vector<KlGroupGrad> out;
  out.reserve(groups.size());
  for (const GaussianParamGroup& g : groups) {
    check_kl_inputs(g);
    KlGroupGrad gg;
    gg.d_mean.resize(g.size());
    gg.d_sigma.resize(g.size());
    const auto mean = g.mean();
    const auto rho = g.raw_dev();
    const auto pm = g.prior_mean();
    const auto ps = g.prior_sigma();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double s = sigma_of_rho(rho[k]).sigma;
      if (!(s > 0.0)) throw std::domain_error("KL needs strictly positive standard deviations");
      const double var_p = ps[k] * ps[k];
      gg.d_mean[k] = (mean[k] - pm[k]) / var_p;
      gg.d_sigma[k] = s / var_p - 1.0 / s;
    }
    out.push_back(std::move(gg));
  }
  return out;
}

SigmaOfRho sigma_of_rho(double rho) {
  const double a = std::abs(rho);
  const double root = std::sqrt(a);
  SigmaOfRho r;
  r.sigma = a * root;
  r.dsigma_drho = rho > 0.0 ? 1.5 * root : (rho < 0.0 ? -1.5 * root : 0.0);
  return r;
}

double rho_for_sigma(double s) {
  if (!(s >= 0.0)) throw std::domain_error("sigma must be non-negative");
  return std::cbrt(s * s);
}

SampledParams sample_gaussian(const GaussianParamGroup& group, RngStream& rng) {
  SampledParams out;
  out.theta.resize(group.size());
  out.zeta.resize(group.size());
  const auto mean = group.mean();
  const auto rho = group.raw_dev();
  for (std::size_t k = 0; k < group.size(); ++k) {
    out.zeta[k] = rng.normal();
    out.theta[k] = mean[k] + sigma_of_rho(rho[k]).sigma * out.zeta[k];
  }
  return out;
}

}  // namespace condgauss
