#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "condgauss/certify.hpp"
#include "condgauss/network.hpp"

using namespace condgauss;

namespace {

std::vector<std::size_t> all_rows(const LabelledDataset& d) {
  std::vector<std::size_t> r(d.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

// Two separable classes on the first two coordinates.
LabelledDataset two_points() {
  LabelledDataset d;
  d.dim = 2;
  d.classes = 2;
  d.inputs = {1.0, 0.0, 0.0, 1.0, 0.9, 0.1, 0.2, 0.8};
  d.labels = {ClassLabel{1}, ClassLabel{2}, ClassLabel{1}, ClassLabel{2}};
  d.source_index = {0, 1, 2, 3};
  return d;
}

// 2-2-2 network computing the identity through the hidden layer with a large margin.
StochasticModel perfect_model(double sigma) {
  StochasticModel m(ModelSpec{{2, 2, 2}});
  auto& h = m.groups()[0];
  const double hw[] = {1, 0, 0, 1, 0, 0};
  std::copy(std::begin(hw), std::end(hw), h.mean().begin());
  auto& o = m.groups()[1];
  const double ow[] = {10, -10, -10, 10, 0, 0};
  std::copy(std::begin(ow), std::end(ow), o.mean().begin());
  h.set_sigma(sigma);
  o.set_sigma(sigma);
  m.freeze_prior();
  return m;
}

}  // namespace

TEST(ModelSpec, Validation) {
  EXPECT_THROW((ModelSpec{{4, 2}}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelSpec{{4, 0, 2}}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelSpec{{4, 3, 1}}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelSpec{{4, 3, 2}, Activation::kRelu, 1.0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((ModelSpec{{784, 200, 10}}.validate()));
}

TEST(StochasticModel, InitializationRangesAndPrior) {
  const auto m = StochasticModel::initialize(ModelSpec{{16, 9, 3}}, 0.01, RngStream(4));
  for (const auto& g : m.groups()) {
    const double bound = 1.0 / std::sqrt(double(g.in_dim()));
    for (double v : g.mean()) EXPECT_LE(std::abs(v), bound);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(g.sigma_at(k), 0.01, 1e-15);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(g.prior_mean()[k], g.mean()[k]);
  }
  EXPECT_EQ(m.kl(), 0.0);
  EXPECT_TRUE(m.provenance.data_free());
  const auto again = StochasticModel::initialize(ModelSpec{{16, 9, 3}}, 0.01, RngStream(4));
  EXPECT_EQ(m.flat_params(), again.flat_params());
}

TEST(StochasticModel, KlIsSumOverLayers) {
  auto m = StochasticModel::initialize(ModelSpec{{5, 4, 3, 2}}, 0.05, RngStream(1));
  auto flat = m.flat_params();
  for (std::size_t k = 0; k < flat.size(); k += 7) flat[k] += 0.01;
  m.set_flat_params(flat);
  double sum = 0.0;
  for (std::size_t l = 0; l < m.groups().size(); ++l) sum += kl_diag_gauss(std::span(m.groups()).subspan(l, 1));
  EXPECT_NEAR(m.kl(), sum, 1e-12);
  EXPECT_GT(m.kl(), 0.0);
}

TEST(StochasticModel, SnapshotRoundTrip) {
  auto m = StochasticModel::initialize(ModelSpec{{7, 5, 3}, Activation::kRelu, 0.1}, 0.003, RngStream(8));
  auto flat = m.flat_params();
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k] += 1e-3 * std::sin(double(k)) / 3.0;
  m.set_flat_params(flat);
  m.provenance = {0xdeadbeefcafe1234ULL, {1, 5, 9}};
  std::stringstream ss;
  m.save(ss);
  EXPECT_EQ(ss.str().rfind("CONDGAUSS-MODEL v1\n", 0), 0u);
  const auto back = StochasticModel::load(ss);
  EXPECT_EQ(back.spec().layer_widths, m.spec().layer_widths);
  EXPECT_EQ(back.spec().dropout_prob, m.spec().dropout_prob);
  const auto f2 = back.flat_params();
  for (std::size_t k = 0; k < flat.size(); ++k) EXPECT_NEAR(f2[k], flat[k], 1e-12 * std::max(1.0, std::abs(flat[k])));
  for (std::size_t l = 0; l < m.groups().size(); ++l) {
    for (std::size_t k = 0; k < m.groups()[l].size(); ++k) {
      EXPECT_EQ(back.groups()[l].prior_mean()[k], m.groups()[l].prior_mean()[k]);
      EXPECT_EQ(back.groups()[l].prior_sigma()[k], m.groups()[l].prior_sigma()[k]);
    }
  }
  EXPECT_EQ(back.provenance.source_hash, m.provenance.source_hash);
  EXPECT_EQ(back.provenance.indices, m.provenance.indices);
  EXPECT_NEAR(back.kl(), m.kl(), 1e-12);
}

TEST(StochasticModel, SnapshotRejectsDamage) {
  const auto m = StochasticModel::initialize(ModelSpec{{3, 2, 2}}, 0.01, RngStream(1));
  std::stringstream ss;
  m.save(ss);
  const std::string text = ss.str();
  std::stringstream bad_header("CONDGAUSS-MODEL v2\n" + text.substr(text.find('\n') + 1));
  EXPECT_THROW(StochasticModel::load(bad_header), std::runtime_error);
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(StochasticModel::load(truncated), std::runtime_error);
}

TEST(Forward, ZeroWeightsGiveZeroHidden) {
  const ModelSpec spec{{3, 4, 2}};
  const std::vector<std::vector<double>> th{std::vector<double>(16, 0.0)};
  const std::vector<double> x{0.2, 0.5, 0.9};
  for (double h : forward_hidden(x, th, spec)) EXPECT_EQ(h, 0.0);
}

TEST(Forward, HandComputedTwoByTwo) {
  const ModelSpec spec{{2, 2, 2}};
  // W = [[1, -2], [0.5, 3]], b = [0.1, -4]
  const std::vector<std::vector<double>> th{{1, -2, 0.5, 3, 0.1, -4}, {1, 1, -1, 2, 0, 0.5}};
  const std::vector<double> x{0.8, 0.1};
  const auto h = forward_hidden(x, std::span(th).first(1), spec);
  EXPECT_NEAR(h[0], 0.7, 1e-15);
  EXPECT_NEAR(h[1], -3.3, 1e-15);
  const auto phi = relu(h);
  EXPECT_NEAR(phi[0], 0.7, 1e-15);
  EXPECT_EQ(phi[1], 0.0);
  const auto f = forward_full(x, th, spec);
  EXPECT_NEAR(f[0], 0.7, 1e-15);
  EXPECT_NEAR(f[1], -0.2, 1e-15);
}

TEST(Forward, DropoutBehaviour) {
  const std::vector<double> h{1.0, 2.0, 3.0, 4.0};
  RngStream r(1);
  EXPECT_EQ(apply_dropout(h, 0.0, r), h);
  EXPECT_THROW(apply_dropout(h, 1.0, r), std::invalid_argument);
  std::vector<double> mean(4, 0.0);
  const std::size_t n = 100000;
  for (std::size_t k = 0; k < n; ++k) {
    const auto d = apply_dropout(h, 0.3, r);
    for (std::size_t i = 0; i < 4; ++i) mean[i] += d[i] / n;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double se = h[i] * std::sqrt(0.3 / 0.7 / n);
    EXPECT_LT(std::abs(mean[i] - h[i]), 4.0 * se);
  }
  std::size_t zeros = 0;
  for (int k = 0; k < 100; ++k) {
    for (double v : apply_dropout(h, 0.999, r)) zeros += v == 0.0 ? 1 : 0;
  }
  EXPECT_GT(zeros, 390u);
}

TEST(ExactMisclassification, PerfectModelAndTies) {
  const auto d = two_points();
  const auto m = perfect_model(0.0);
  std::vector<std::vector<double>> th;
  for (const auto& g : m.groups()) th.emplace_back(g.mean().begin(), g.mean().end());
  EXPECT_EQ(exact_misclassification(m, d, th), 0.0);
  // Constant outputs: every example is a tie, and ties count as errors.
  for (auto& t : th) std::fill(t.begin(), t.end(), 0.0);
  EXPECT_EQ(exact_misclassification(m, d, th), 1.0);
}

TEST(BatchErrorEstimate, PerfectDeterministicModel) {
  const auto d = two_points();
  const auto m = perfect_model(1e-6);
  const auto rows = all_rows(d);
  EXPECT_LT(batch_error_estimate(m, d, rows, RngStream(3), {}), 0.01);
}

TEST(BatchErrorEstimate, HugeOutputNoiseApproachesChance) {
  const auto d = synth_blobs(3, 10, 4, 1.0, 2);
  auto m = StochasticModel::initialize(ModelSpec{{4, 6, 3}}, 0.01, RngStream(2));
  auto& out = m.groups().back();
  std::fill(out.mean().begin(), out.mean().end(), 0.0);
  out.set_sigma(1e3);
  const double e = batch_error_estimate(m, d, all_rows(d), RngStream(5), {});
  EXPECT_NEAR(e, 2.0 / 3.0, 0.02);
}

TEST(BatchErrorEstimate, MoreRepeatsLessVariance) {
  const auto d = synth_blobs(3, 4, 4, 1.0, 3);
  auto m = StochasticModel::initialize(ModelSpec{{4, 6, 3}}, 0.3, RngStream(3));
  const auto rows = all_rows(d);
  auto stats = [&](std::size_t repeats) {
    double s = 0.0, s2 = 0.0;
    const int n = 1000;
    for (int k = 0; k < n; ++k) {
      const double e = batch_error_estimate(m, d, rows, RngStream(10000 + k), {repeats});
      s += e;
      s2 += e * e;
    }
    const double mean = s / n;
    return std::pair{mean, std::sqrt((s2 / n - mean * mean) / n)};
  };
  const auto one = stats(1);
  const auto many = stats(100);
  EXPECT_LT(std::abs(one.first - many.first), 4.0 * std::hypot(one.second, many.second));
  EXPECT_LT(many.second, one.second);
}

TEST(BatchErrorEstimate, AgreesWithFullSampling) {
  const auto d = synth_blobs(3, 6, 4, 1.0, 6);
  auto m = StochasticModel::initialize(ModelSpec{{4, 5, 3}}, 0.4, RngStream(6));
  const auto rows = all_rows(d);
  const int n = 4000;
  double sb = 0.0, sb2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double e = batch_error_estimate(m, d, rows, RngStream(k), {10});
    sb += e;
    sb2 += e * e;
  }
  double se = 0.0, se2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double e = exact_misclassification(m, d, sample_all(m, RngStream(50000 + k)));
    se += e;
    se2 += e * e;
  }
  const double mb = sb / n, me = se / n;
  const double err = std::sqrt((sb2 / n - mb * mb) / n + (se2 / n - me * me) / n);
  EXPECT_LT(std::abs(mb - me), 4.0 * err) << mb << " vs " << me;
}

TEST(BatchErrorEstimate, ClosedFormNeedsTwoClasses) {
  const auto d = synth_blobs(3, 2, 4, 1.0, 1);
  const auto m = StochasticModel::initialize(ModelSpec{{4, 5, 3}}, 0.1, RngStream(1));
  EXPECT_THROW(batch_error_estimate(m, d, all_rows(d), RngStream(1), {1, ErrorEstimator::kBinaryClosedForm}),
               std::invalid_argument);
}

TEST(BatchErrorEstimate, OutputLayerEnteredOnlyThroughMoments) {
  // With the closed form the estimate is exactly the conditional error
  // probability given the shared hidden sample; nothing in the output layer is drawn.
  const auto d = synth_blobs(2, 3, 4, 1.0, 4);
  const auto m = StochasticModel::initialize(ModelSpec{{4, 3, 2}}, 0.2, RngStream(4));
  const RngStream rng(2);
  const auto rows = all_rows(d);
  const double est = batch_error_estimate(m, d, rows, rng, {1, ErrorEstimator::kBinaryClosedForm});
  RngStream hr = rng.derive(StreamTag::kHiddenSample, {0});
  const std::vector<std::vector<double>> th{sample_gaussian(m.groups()[0], hr).theta};
  double expect = 0.0;
  for (std::size_t r : rows) {
    const auto phi = relu(forward_hidden(d.input(r), th, m.spec()));
    expect += binary_error_prob(conditional_moments(phi, m.groups().back()), d.labels[r]) / double(rows.size());
  }
  EXPECT_NEAR(est, expect, 1e-12);
}

TEST(BatchEstimate, ChunkedEvaluationMatchesSinglePass) {
  const auto data = synth_blobs(3, 400, 5, 3.0, 4);
  const auto model = StochasticModel::initialize(ModelSpec{{5, 7, 3}}, 0.2, RngStream(3));
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const BatchOptions opts{3, ErrorEstimator::kL1, 0.0};
  grad::Tape tape;
  const ModelVars vars = bind_model(tape, model);
  const double single = batch_error_estimate(tape, vars, model, data, rows, RngStream(8), opts).value;
  EXPECT_NEAR(batch_error_estimate(model, data, rows, RngStream(8), opts), single, 1e-14);
}
