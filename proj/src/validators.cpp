#include "condgauss/validators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "condgauss/bounds.hpp"
#include "condgauss/quadrature.hpp"
#include "condgauss/trainer.hpp"

namespace condgauss {

namespace {

McMean finish_mean(long double sum, long double sq, std::size_t n) {
  McMean r;
  r.mean = static_cast<double>(sum / n);
  const double var = std::max(0.0, static_cast<double>(sq / n) - r.mean * r.mean);
  r.stderr_ = std::sqrt(var / static_cast<double>(n));
  return r;
}

ConditionalHead random_head(std::size_t q, RngStream& rng) {
  ConditionalHead h;
  for (std::size_t i = 0; i < q; ++i) {
    h.mean.push_back(rng.normal());
    h.var.push_back(0.2 + 1.5 * rng.uniform());
  }
  return h;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

CheckResult check_kl_inv_round_trip(const CheckOptions& opt) {
  RngStream rng = RngStream(opt.seed).derive({1});
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double u = 0.001 + 0.998 * rng.uniform();
    const double c = 1e-6 + (1.0 - 1e-6) * rng.uniform();
    const double v = bounds::kl_inv(u, c);
    if (v < 1.0) worst = std::max(worst, std::abs(bounds::kl_bernoulli(u, v) - c));
  }
  return {"kl_inv round trip", worst < 1e-8, "max |kl - c| = " + fmt(worst), 0.0};
}

CheckResult check_kl_inv_grad(const CheckOptions& opt) {
  RngStream rng = RngStream(opt.seed).derive({2});
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double u = 0.01 + 0.9 * rng.uniform();
    const double c = 0.001 + 0.3 * rng.uniform();
    if (bounds::kl_inv(u, c) > 0.999) continue;
    const auto g = bounds::kl_inv_grad(u, c);
    const double h = 1e-6;
    const double du = (bounds::kl_inv(u + h, c) - bounds::kl_inv(u - h, c)) / (2 * h);
    const double dc = (bounds::kl_inv(u, c + h) - bounds::kl_inv(u, c - h)) / (2 * h);
    worst = std::max({worst, std::abs(g.du - du) / std::abs(du), std::abs(g.dc - dc) / std::abs(dc)});
  }
  return {"kl_inv gradient vs finite differences", worst < 1e-5, "max rel err = " + fmt(worst), 0.0};
}

CheckResult check_bound_ordering(const CheckOptions&) {
  double worst = bounds::kInfinity;
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) {
      const double e = i / 49.0;
      const double pen = 0.5 * j / 49.0;
      const double inv = bounds::objective_value(e, pen, {bounds::BoundKind::kInvKl});
      double best = std::min(bounds::objective_value(e, pen, {bounds::BoundKind::kMcAllester}),
                             bounds::objective_value(e, pen, {bounds::BoundKind::kQuadratic}));
      for (int l = 1; l < 1000; ++l) {
        bounds::BoundSpec lbd{bounds::BoundKind::kLambda};
        lbd.lambda = l / 1000.0;
        best = std::min(best, bounds::objective_value(e, pen, lbd));
      }
      worst = std::min(worst, best - inv);
    }
  }
  return {"invKL is the tightest bound", worst >= -1e-9, "min slack = " + fmt(worst), 0.0};
}

CheckResult check_quadrature(const CheckOptions&) {
  const auto rule = quadrature::gauss_hermite(100);
  double worst = 0.0;
  for (const auto& f : quadrature::standard_test_functions()) {
    worst = std::max(worst, quadrature::stein_check(rule, f).error());
    for (const auto& c : quadrature::price_checks(rule, f, 0.3, 0.8)) worst = std::max(worst, c.error());
  }
  return {"Stein and Price identities (100-node Gauss-Hermite)", worst < 1e-6, "max abs err = " + fmt(worst), 0.0};
}

CheckResult check_unbiasedness(const CheckOptions& opt, ErrorEstimator kind, const char* name) {
  RngStream heads = RngStream(opt.seed).derive({3});
  double worst = 0.0;
  for (std::size_t q : {2, 3, 5}) {
    const ConditionalHead head = random_head(q, heads);
    const ClassLabel y = ClassLabel::from_index(q - 1);
    const McMean oracle = argmax_error_frequency(head, y, opt.draws, RngStream(opt.seed).derive({4, q}));
    const McMean est = estimator_mean(head, y, kind, opt.draws, RngStream(opt.seed).derive({5, q}), opt.cdf);
    const double z = std::abs(est.mean - oracle.mean) / std::hypot(est.stderr_, oracle.stderr_);
    worst = std::max(worst, z);
  }
  return {name, worst < 4.0, "max |z| = " + fmt(worst), 0.0};
}

CheckResult check_binary_closed_form(const CheckOptions& opt) {
  RngStream heads = RngStream(opt.seed).derive({6});
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    const ConditionalHead head = random_head(2, heads);
    const ClassLabel y = ClassLabel::from_index(static_cast<std::size_t>(k % 2));
    const double exact = binary_error_prob(head, y);
    const McMean est = estimator_mean(head, y, ErrorEstimator::kL1, opt.draws, heads.derive({7, std::uint64_t(k)}),
                                      opt.cdf);
    worst = std::max(worst, std::abs(est.mean - exact) / est.stderr_);
  }
  return {"L1 matches the binary closed form", worst < 4.0, "max |z| = " + fmt(worst), 0.0};
}

CheckResult check_network_gradient(const CheckOptions& opt) {
  const ModelSpec spec{{6, 5, 3}};
  StochasticModel model = StochasticModel::initialize(spec, 0.1, RngStream(opt.seed).derive({8}));
  RngStream perturb = RngStream(opt.seed).derive({9});
  for (auto& g : model.groups()) {
    for (double& m : g.mean()) m += 0.3 * perturb.normal();
    for (double& r : g.raw_dev()) r *= 1.0 + 0.5 * perturb.uniform();
  }
  const LabelledDataset data = synth_blobs(3, 4, 6, 2.0, opt.seed);
  std::vector<std::size_t> rows(data.size());
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = k;
  const RngStream batch_rng = RngStream(opt.seed).derive({10});
  const BatchOptions options{20, ErrorEstimator::kL1, 0.0};
  const bounds::BoundSpec spec_b{bounds::BoundKind::kInvKl};
  const std::size_t m = 1000;

  const ObjectiveEvaluation ev = condgauss_objective(model, data, rows, batch_rng, spec_b, m, options);
  const std::vector<double> point = model.flat_params();
  StochasticModel probe = model;
  const grad::ScalarFn fn = [&](std::span<const double> p) {
    probe.set_flat_params(p);
    return condgauss_objective(probe, data, rows, batch_rng, spec_b, m, options, false).value;
  };
  const auto r = grad::fd_check(fn, point, ev.grad, 1e-6, {}, 1e-8);
  return {"toy-network gradient vs finite differences", r.max_rel_error < 1e-4,
          "max rel err = " + fmt(r.max_rel_error), 0.0};
}

}  // namespace

McMean argmax_error_frequency(const ConditionalHead& head, ClassLabel y, std::size_t draws, const RngStream& rng) {
  RngStream r = rng;
  const std::size_t q = head.classes();
  const std::size_t iy = y.index();
  std::vector<double> root(q);
  for (std::size_t i = 0; i < q; ++i) root[i] = std::sqrt(head.var[i]);
  std::size_t errors = 0;
  std::vector<double> f(q);
  for (std::size_t n = 0; n < draws; ++n) {
    for (std::size_t i = 0; i < q; ++i) f[i] = head.mean[i] + root[i] * r.normal();
    bool wrong = false;
    for (std::size_t i = 0; i < q && !wrong; ++i) wrong = i != iy && f[i] >= f[iy];
    errors += wrong ? 1 : 0;
  }
  return finish_mean(errors, errors, draws);
}

McMean estimator_mean(const ConditionalHead& head, ClassLabel y, ErrorEstimator kind, std::size_t draws,
                      const RngStream& rng, CdfFn cdf) {
  RngStream r = rng;
  long double sum = 0.0L;
  long double sq = 0.0L;
  for (std::size_t n = 0; n < draws; ++n) {
    const double v = kind == ErrorEstimator::kL2 ? estimator_l2(head, y, r, 1, cdf).value
                                                  : estimator_l1(head, y, r, 1, cdf).value;
    sum += v;
    sq += static_cast<long double>(v) * v;
  }
  return finish_mean(sum, sq, draws);
}

double corrupted_std_normal_cdf(double t) { return std_normal_cdf(t + 0.25); }

std::vector<CheckResult> run_checks(const CheckOptions& options) {
  using Check = std::function<CheckResult()>;
  const std::vector<Check> checks = {
      [&] { return check_kl_inv_round_trip(options); },
      [&] { return check_kl_inv_grad(options); },
      [&] { return check_bound_ordering(options); },
      [&] { return check_quadrature(options); },
      [&] { return check_unbiasedness(options, ErrorEstimator::kL1, "L1 unbiasedness vs argmax frequency"); },
      [&] { return check_unbiasedness(options, ErrorEstimator::kL2, "L2 unbiasedness vs argmax frequency"); },
      [&] { return check_binary_closed_form(options); },
      [&] { return check_network_gradient(options); },
  };
  std::vector<CheckResult> out;
  for (const auto& check : checks) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

void print_check_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "check" << "  result  seconds  detail\n";
  for (const auto& r : results) {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << (r.passed ? "PASS  " : "FAIL  ")
        << "  " << std::right << std::setw(7) << std::fixed << std::setprecision(2) << r.seconds
        << std::defaultfloat << "  " << r.detail << '\n';
  }
}

}  // namespace condgauss
