#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "condgauss/gaussian.hpp"
#include "condgauss/network.hpp"
#include "condgauss/validators.hpp"

using namespace condgauss;

namespace {

double within_se(double a, double b, double se) { return std::abs(a - b) / se; }

ConditionalHead random_head(std::size_t q, std::mt19937_64& gen) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.2, 2.0);
  ConditionalHead h;
  for (std::size_t i = 0; i < q; ++i) {
    h.mean.push_back(N(gen));
    h.var.push_back(U(gen));
  }
  return h;
}

}  // namespace

TEST(StdNormal, CdfValues) {
  EXPECT_DOUBLE_EQ(std_normal_cdf(0.0), 0.5);
  EXPECT_NEAR(std_normal_cdf(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(std_normal_cdf(-1.0), 0.15865525393145705, 1e-15);
  const double tail = std_normal_cdf(-50.0);
  EXPECT_GE(tail, 0.0);
  EXPECT_LE(tail, 1e-300);
  EXPECT_DOUBLE_EQ(std_normal_cdf(50.0), 1.0);
  double prev = 0.0;
  for (double t = -9.0; t <= 9.0; t += 0.01) {
    const double v = std_normal_cdf(t);
    EXPECT_GE(v, prev);
    EXPECT_NEAR(v + std_normal_cdf(-t), 1.0, 1e-15);
    prev = v;
  }
  EXPECT_NEAR(std_normal_pdf(0.0), 0.3989422804014327, 1e-16);
}

TEST(BinaryErrorProb, ClosedForm) {
  EXPECT_DOUBLE_EQ(binary_error_prob({{0, 0}, {1, 1}}, ClassLabel{1}), 0.5);
  EXPECT_NEAR(binary_error_prob({{1, 0}, {0.5, 0.5}}, ClassLabel{1}), 0.15865525393145705, 1e-15);
  EXPECT_NEAR(binary_error_prob({{1, 0}, {0.5, 0.5}}, ClassLabel{2}), 0.8413447460685429, 1e-15);
  EXPECT_THROW(binary_error_prob({{0, 0, 0}, {1, 1, 1}}, ClassLabel{1}), std::invalid_argument);
}

TEST(BinaryErrorProb, AgreesWithArgmaxFrequency) {
  const ConditionalHead h{{0.3, -0.2}, {0.7, 1.3}};
  const auto mc = argmax_error_frequency(h, ClassLabel{1}, 1000000, RngStream(5));
  EXPECT_LT(within_se(mc.mean, binary_error_prob(h, ClassLabel{1}), mc.stderr_), 3.0);
}

TEST(BinaryErrorProb, SlopeNeverVanishesAtFiniteInputs) {
  for (double gap : {0.0, 0.5, 4.0, 16.0}) {
    const ConditionalHead h{{gap, -gap}, {0.5, 0.5}};
    auto up = h, dn = h;
    up.mean[0] += 1e-4;
    dn.mean[0] -= 1e-4;
    const double slope = binary_error_prob(up, ClassLabel{1}) - binary_error_prob(dn, ClassLabel{1});
    EXPECT_LT(slope, 0.0) << gap;
  }
}

TEST(EstimatorL1, SymmetricHeadGivesChanceError) {
  for (std::size_t q : {2u, 3u, 5u}) {
    ConditionalHead h{std::vector<double>(q, 0.4), std::vector<double>(q, 0.9)};
    const auto mc = estimator_mean(h, ClassLabel{2}, ErrorEstimator::kL1, 100000, RngStream(q));
    EXPECT_LT(within_se(mc.mean, 1.0 - 1.0 / q, mc.stderr_), 3.0) << q;
    const auto mc2 = estimator_mean(h, ClassLabel{1}, ErrorEstimator::kL2, 100000, RngStream(q + 10));
    EXPECT_LT(within_se(mc2.mean, 1.0 - 1.0 / q, mc2.stderr_), 3.0) << q;
  }
}

TEST(EstimatorL1, DominatedClassIsNeverWrong) {
  ConditionalHead h{{1e6, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  RngStream rng(3);
  for (int i = 0; i < 100; ++i) EXPECT_LT(estimator_l1(h, ClassLabel{1}, rng, 1).value, 1e-300);
}

TEST(EstimatorL1, BinaryMatchesClosedForm) {
  const ConditionalHead h{{0.1, 0.5}, {0.4, 0.9}};
  const auto l1 = estimator_mean(h, ClassLabel{1}, ErrorEstimator::kL1, 1000000, RngStream(7));
  const auto l2 = estimator_mean(h, ClassLabel{1}, ErrorEstimator::kL2, 1000000, RngStream(8));
  const double exact = binary_error_prob(h, ClassLabel{1});
  EXPECT_LT(within_se(l1.mean, exact, l1.stderr_), 3.0);
  EXPECT_LT(within_se(l2.mean, exact, l2.stderr_), 3.0);
}

TEST(Estimators, UnbiasedAgainstArgmaxOracle) {
  std::mt19937_64 gen(42);
  const std::size_t qs[] = {2, 3, 5, 10};
  for (int k = 0; k < 8; ++k) {
    const std::size_t q = qs[k % 4];
    const auto h = random_head(q, gen);
    const ClassLabel y = ClassLabel::from_index(gen() % q);
    const auto oracle = argmax_error_frequency(h, y, 400000, RngStream(100 + k));
    const auto l1 = estimator_mean(h, y, ErrorEstimator::kL1, 400000, RngStream(200 + k));
    const auto l2 = estimator_mean(h, y, ErrorEstimator::kL2, 400000, RngStream(300 + k));
    const double se1 = std::hypot(oracle.stderr_, l1.stderr_);
    const double se2 = std::hypot(oracle.stderr_, l2.stderr_);
    EXPECT_LT(within_se(l1.mean, oracle.mean, se1), 4.0) << "q=" << q;
    EXPECT_LT(within_se(l2.mean, oracle.mean, se2), 4.0) << "q=" << q;
  }
}

TEST(Estimators, L1AndL2AgreeForThreeClasses) {
  const ConditionalHead h{{0.2, -0.4, 0.5}, {1.1, 0.6, 0.8}};
  const auto l1 = estimator_mean(h, ClassLabel{2}, ErrorEstimator::kL1, 1000000, RngStream(1));
  const auto l2 = estimator_mean(h, ClassLabel{2}, ErrorEstimator::kL2, 1000000, RngStream(2));
  EXPECT_LT(within_se(l1.mean, l2.mean, std::hypot(l1.stderr_, l2.stderr_)), 4.0);
}

TEST(Estimators, GradientUnbiasedAgainstOracleDifferences) {
  // Oracle probability: the closed form for q = 2 generalised by 1-D quadrature
  // P(F_y <= max_{i!=y} F_i) = 1 - int phi(z) prod_{i!=y} Psi((M_y + s_y z - M_i)/s_i) dz.
  const ConditionalHead h{{0.3, -0.1, 0.2}, {0.8, 1.2, 0.5}};
  const ClassLabel y{1};
  auto prob = [&](const ConditionalHead& hh) {
    double acc = 0.0;
    const double dz = 1e-3;
    for (double z = -9.0; z <= 9.0; z += dz) {
      double prod = 1.0;
      for (std::size_t i = 1; i < 3; ++i) {
        prod *= std_normal_cdf((hh.mean[0] + std::sqrt(hh.var[0]) * z - hh.mean[i]) / std::sqrt(hh.var[i]));
      }
      acc += std_normal_pdf(z) * prod * dz;
    }
    return 1.0 - acc;
  };
  const std::size_t draws = 1000000;
  RngStream rng(77);
  const auto r = estimator_l1(h, y, rng, draws);
  for (std::size_t i = 0; i < 3; ++i) {
    for (int field = 0; field < 2; ++field) {
      auto up = h, dn = h;
      (field == 0 ? up.mean : up.var)[i] += 1e-3;
      (field == 0 ? dn.mean : dn.var)[i] -= 1e-3;
      const double fd = (prob(up) - prob(dn)) / 2e-3;
      const double an = field == 0 ? r.d_mean[i] : r.d_var[i];
      EXPECT_LT(std::abs(an - fd), std::max(0.02 * std::abs(fd), 4.0 * 0.5 / std::sqrt(double(draws))))
          << "i=" << i << " field=" << field << " an=" << an << " fd=" << fd;
    }
  }
}

TEST(Estimators, RejectsBadHeads) {
  RngStream rng(1);
  EXPECT_THROW(estimator_l1({{0, 0}, {0.0, 1.0}}, ClassLabel{1}, rng), std::domain_error);
  EXPECT_THROW(estimator_l2({{0, 0}, {0.0, 1.0}}, ClassLabel{1}, rng), std::domain_error);
  EXPECT_THROW(estimator_l1({{0}, {1.0}}, ClassLabel{1}, rng), std::invalid_argument);
  EXPECT_THROW(estimator_l1({{0, 0}, {1.0, 1.0}}, ClassLabel{3}, rng), std::out_of_range);
  EXPECT_THROW(estimator_l1({{0, 0}, {1.0, 1.0}}, ClassLabel{1}, rng, 0), std::invalid_argument);
}

TEST(Estimators, SameStreamSameValue) {
  const ConditionalHead h{{0.2, -0.4, 0.5}, {1.1, 0.6, 0.8}};
  RngStream a(9), b(9);
  const auto ra = estimator_l2(h, ClassLabel{3}, a, 10);
  const auto rb = estimator_l2(h, ClassLabel{3}, b, 10);
  EXPECT_EQ(ra.value, rb.value);
  EXPECT_EQ(ra.d_mean, rb.d_mean);
  EXPECT_EQ(ra.d_var, rb.d_var);
}

TEST(ConditionalMoments, DegenerateCases) {
  GaussianParamGroup g(3, 4);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> N;
  for (double& m : g.mean()) m = N(gen);
  g.set_sigma(0.0);
  for (std::size_t i = 0; i < 3; ++i) g.raw_dev()[12 + i] = rho_for_sigma(0.3);
  const std::vector<double> phi{0.5, 1.0, 0.0, 2.0};
  const auto head = conditional_moments(phi, g);
  for (std::size_t i = 0; i < 3; ++i) {
    double m = g.mean()[12 + i];
    for (std::size_t j = 0; j < 4; ++j) m += g.mean()[i * 4 + j] * phi[j];
    EXPECT_NEAR(head.mean[i], m, 1e-14);
    EXPECT_NEAR(head.var[i], 0.09, 1e-14);
  }
  const auto zero = conditional_moments(std::vector<double>(4, 0.0), g);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(zero.mean[i], g.mean()[12 + i]);
  EXPECT_THROW(conditional_moments(std::vector<double>(3, 0.0), g), std::invalid_argument);
}

TEST(ConditionalMoments, MatchSampledOutputs) {
  GaussianParamGroup g(3, 4);
  std::mt19937_64 gen(2);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U(0.05, 0.8);
  for (double& m : g.mean()) m = N(gen);
  for (double& r : g.raw_dev()) r = rho_for_sigma(U(gen));
  const std::vector<double> phi{0.3, 1.2, 0.0, 0.7};
  const auto head = conditional_moments(phi, g);
  const std::size_t n = 1000000;
  std::vector<double> s1(3, 0.0), s2(3, 0.0);
  RngStream rng(4);
  for (std::size_t k = 0; k < n; ++k) {
    const auto th = sample_gaussian(g, rng).theta;
    for (std::size_t i = 0; i < 3; ++i) {
      double f = th[12 + i];
      for (std::size_t j = 0; j < 4; ++j) f += th[i * 4 + j] * phi[j];
      s1[i] += f;
      s2[i] += f * f;
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double mean = s1[i] / n;
    const double var = s2[i] / n - mean * mean;
    EXPECT_LT(within_se(mean, head.mean[i], std::sqrt(head.var[i] / n)), 3.0);
    EXPECT_LT(within_se(var, head.var[i], head.var[i] * std::sqrt(2.0 / n)), 4.0);
  }
}

TEST(KlDiagGauss, Values) {
  GaussianParamGroup g(1, 0);
  g.set_sigma(1.0);
  g.freeze_prior();
  EXPECT_DOUBLE_EQ(kl_diag_gauss(std::span(&g, 1)), 0.0);
  g.mean()[0] = 1.0;
  EXPECT_NEAR(kl_diag_gauss(std::span(&g, 1)), 0.5, 1e-15);
}

TEST(KlDiagGauss, RandomCaseMatchesReference) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U(0.05, 2.0);
  std::vector<GaussianParamGroup> groups{GaussianParamGroup(6, 9), GaussianParamGroup(4, 6)};
  long double ref = 0.0L;
  std::vector<std::vector<double>> pm(2), ps(2);
  for (std::size_t k = 0; k < 2; ++k) {
    auto& g = groups[k];
    for (std::size_t i = 0; i < g.size(); ++i) {
      pm[k].push_back(N(gen));
      ps[k].push_back(U(gen));
    }
    g.set_prior(pm[k], ps[k]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.mean()[i] = N(gen);
      g.raw_dev()[i] = rho_for_sigma(U(gen));
      const long double s = g.sigma_at(i), p = ps[k][i], d = g.mean()[i] - pm[k][i];
      ref += 0.5L * (s * s - p * p) / (p * p) + 0.5L * d * d / (p * p) + std::log(p / s);
    }
  }
  const double kl = kl_diag_gauss(groups);
  EXPECT_GE(kl, 0.0);
  EXPECT_NEAR(kl, static_cast<double>(ref), 1e-10);
  EXPECT_NEAR(kl, kl_diag_gauss(std::span(groups).first(1)) + kl_diag_gauss(std::span(groups).last(1)), 1e-12);
}

TEST(KlDiagGauss, GradientMatchesFiniteDifferences) {
  std::vector<GaussianParamGroup> groups{GaussianParamGroup(2, 3)};
  auto& g = groups[0];
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> U(0.1, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) g.raw_dev()[i] = rho_for_sigma(U(gen));
  g.freeze_prior();
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.mean()[i] += U(gen) - 0.5;
    g.raw_dev()[i] = rho_for_sigma(U(gen));
  }
  const auto grad = kl_diag_gauss_grad(groups);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double m0 = g.mean()[i];
    g.mean()[i] = m0 + 1e-6;
    const double up = kl_diag_gauss(groups);
    g.mean()[i] = m0 - 1e-6;
    const double dn = kl_diag_gauss(groups);
    g.mean()[i] = m0;
    EXPECT_NEAR(grad[0].d_mean[i], (up - dn) / 2e-6, 1e-6);
    const double s0 = g.sigma_at(i);
    g.raw_dev()[i] = rho_for_sigma(s0 + 1e-6);
    const double su = kl_diag_gauss(groups);
    g.raw_dev()[i] = rho_for_sigma(s0 - 1e-6);
    const double sd = kl_diag_gauss(groups);
    g.raw_dev()[i] = rho_for_sigma(s0);
    EXPECT_NEAR(grad[0].d_sigma[i], (su - sd) / 2e-6, 1e-5);
  }
}

TEST(KlDiagGauss, RejectsZeroSigma) {
  GaussianParamGroup g(1, 1);
  g.set_sigma(1.0);
  g.freeze_prior();
  g.set_sigma(0.0);
  EXPECT_THROW(kl_diag_gauss(std::span(&g, 1)), std::domain_error);
}

TEST(SigmaOfRho, Parametrization) {
  auto a = sigma_of_rho(1.0);
  EXPECT_DOUBLE_EQ(a.sigma, 1.0);
  EXPECT_DOUBLE_EQ(a.dsigma_drho, 1.5);
  a = sigma_of_rho(4.0);
  EXPECT_DOUBLE_EQ(a.sigma, 8.0);
  EXPECT_DOUBLE_EQ(a.dsigma_drho, 3.0);
  a = sigma_of_rho(-1.0);
  EXPECT_DOUBLE_EQ(a.sigma, 1.0);
  EXPECT_DOUBLE_EQ(a.dsigma_drho, -1.5);
  EXPECT_DOUBLE_EQ(sigma_of_rho(0.0).dsigma_drho, 0.0);
  for (double s : {1e-4, 0.01, 0.3, 2.0}) EXPECT_NEAR(sigma_of_rho(rho_for_sigma(s)).sigma, s, 1e-15 * std::max(1.0, s));
}

TEST(SampleGaussian, DeterministicLimitAndMoments) {
  GaussianParamGroup g(1, 1);
  g.mean()[0] = 0.7;
  g.mean()[1] = -1.3;
  g.set_sigma(0.0);
  RngStream r0(1);
  const auto s = sample_gaussian(g, r0);
  EXPECT_EQ(s.theta[0], 0.7);
  EXPECT_EQ(s.theta[1], -1.3);

  g.set_sigma(0.4);
  RngStream a(3), b(3);
  EXPECT_EQ(sample_gaussian(g, a).theta, sample_gaussian(g, b).theta);

  const std::size_t n = 1000000;
  double s1 = 0.0, s2 = 0.0;
  RngStream rng(8);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = sample_gaussian(g, rng).theta[0];
    s1 += t;
    s2 += t * t;
  }
  const double mean = s1 / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_LT(within_se(mean, 0.7, 0.4 / std::sqrt(double(n))), 4.0);
  EXPECT_LT(within_se(sd, 0.4, 0.4 / std::sqrt(2.0 * n)), 4.0);
}

TEST(GaussianParamGroup, PriorFreezeAndShapes) {
  GaussianParamGroup g(2, 3);
  EXPECT_EQ(g.size(), 8u);
  EXPECT_EQ(g.weight_count(), 6u);
  g.set_sigma(0.01);
  g.freeze_prior();
  g.mean()[0] = 5.0;
  EXPECT_EQ(g.prior_mean()[0], 0.0);
  EXPECT_NEAR(g.prior_sigma()[3], 0.01, 1e-17);
  EXPECT_THROW(g.set_prior({1.0}, {1.0}), std::invalid_argument);
}
