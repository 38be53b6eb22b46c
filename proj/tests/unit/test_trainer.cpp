#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "condgauss/trainer.hpp"

using namespace condgauss;
namespace b = condgauss::bounds;

namespace {

LabelledDataset small_data(std::uint64_t seed = 1) { return synth_blobs(3, 30, 5, 6.0, seed); }

StochasticModel small_model(std::uint64_t seed = 1) {
  return StochasticModel::initialize(ModelSpec{{5, 16, 3}}, 0.05, RngStream(seed));
}

TrainConfig small_config() {
  TrainConfig c;
  c.schedule = {{3, 0.01}};
  c.batch_size = 30;
  c.repeats = 5;
  c.seed = 4;
  return c;
}

double grid_lambda(double e, double pen) {
  double best = 0.0, best_val = b::kInfinity;
  for (int k = 1; k < 100000; ++k) {
    const double lam = k / 100000.0;
    const double v = b::objective_value(e, pen, {b::BoundKind::kLambda, 1.0, 0.025, lam});
    if (v < best_val) {
      best_val = v;
      best = lam;
    }
  }
  return best;
}

}  // namespace

TEST(TrainConfig, ScheduleAndValidation) {
  TrainConfig c;
  c.schedule = {{2, 0.1}, {3, 0.01}};
  EXPECT_EQ(c.total_epochs(), 5u);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(1), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(2), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(3), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(5), 0.01);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.schedule[0].learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.objective.reset();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.phase = TrainPhase::kPrior;
  EXPECT_NO_THROW(bad.validate());
  bad = c;
  bad.dropout = 0.2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(MomentumSgd, HeavyBallRecursion) {
  MomentumSgd sgd(0.9);
  std::vector<double> x{1.0};
  double v = 0.0, ref = 1.0;
  for (int k = 0; k < 5; ++k) {
    const double g = 2.0 * x[0];
    v = 0.9 * v + g;
    ref -= 0.1 * v;
    sgd.step(x, std::vector<double>{g}, 0.1);
    EXPECT_DOUBLE_EQ(x[0], ref);
    EXPECT_DOUBLE_EQ(sgd.velocity()[0], v);
  }
  EXPECT_THROW(sgd.step(x, std::vector<double>{1.0, 2.0}, 0.1), std::invalid_argument);
}

TEST(LambdaStep, ConvergesToGridOptimum) {
  const double target = grid_lambda(0.1, 0.02);
  EXPECT_NEAR(target, 0.4633, 1e-3);
  LambdaState s = LambdaState::from_lambda(0.9);
  for (int k = 0; k < 3000; ++k) lambda_step(s, 0.1, 0.02, {b::BoundKind::kLambda}, 0.5, 0.9);
  EXPECT_NEAR(s.lambda(), target, 1e-3);
  EXPECT_THROW(LambdaState::from_lambda(1.0), std::domain_error);
}

TEST(Objective, LambdaDerivativeMatchesFiniteDifferences) {
  auto data = small_data();
  auto model = small_model();
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  const BatchOptions opts{4, ErrorEstimator::kL1, 0.0};
  auto eval = [&](double lam) {
    return condgauss_objective(model, data, rows, RngStream(2), b::BoundSpec{b::BoundKind::kLambda, 1.0, 0.025, lam},
                               data.size(), opts, false);
  };
  const double h = 1e-6;
  const double fd = (eval(0.3 + h).value - eval(0.3 - h).value) / (2 * h);
  EXPECT_NEAR(eval(0.3).d_lambda, fd, 1e-6 * std::abs(fd));
}

TEST(BoundedCrossEntropy, RangeGradientAndClamp) {
  const std::vector<double> f{0.3, -1.2, 2.0};
  std::vector<double> g;
  const double loss = bounded_cross_entropy(f, ClassLabel{2}, &g);
  EXPECT_GT(loss, 0.0);
  EXPECT_LE(loss, 1.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    auto up = f, dn = f;
    up[i] += h;
    dn[i] -= h;
    const double fd = (bounded_cross_entropy(up, ClassLabel{2}) - bounded_cross_entropy(dn, ClassLabel{2})) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
  EXPECT_DOUBLE_EQ(bounded_cross_entropy(std::vector<double>{0.0, 50.0}, ClassLabel{1}, &g), 1.0);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
  EXPECT_NEAR(bounded_cross_entropy(std::vector<double>{50.0, 0.0}, ClassLabel{1}), 0.0, 1e-12);
  EXPECT_THROW(bounded_cross_entropy(f, ClassLabel{4}), std::invalid_argument);
}

TEST(Training, ZeroEpochsLeavesModelUntouched) {
  auto model = small_model();
  auto c = small_config();
  c.schedule.clear();
  const auto r = train_condgauss(model, small_data(), c);
  EXPECT_TRUE(r.log.rows.empty());
  EXPECT_EQ(r.log.best_epoch, 0u);
  EXPECT_EQ(r.model.flat_params(), model.flat_params());
}

TEST(Training, BestEpochSnapshotAndLog) {
  auto c = small_config();
  c.schedule = {{6, 0.02}};
  const auto r = train_condgauss(small_model(), small_data(), c);
  ASSERT_EQ(r.log.rows.size(), 6u);
  std::size_t argmin = 0;
  for (std::size_t k = 0; k < r.log.rows.size(); ++k) {
    const auto& row = r.log.rows[k];
    EXPECT_EQ(row.epoch, k + 1);
    EXPECT_GE(row.emp_est, 0.0);
    EXPECT_LE(row.emp_est, 1.0);
    EXPECT_NEAR(row.bound_est, b::kl_inv(row.emp_est, row.pen), 1e-15);
    EXPECT_FALSE(row.lambda.has_value());
    if (row.bound_est < r.log.rows[argmin].bound_est) argmin = k;
  }
  EXPECT_EQ(r.log.best_epoch, argmin + 1);
  EXPECT_DOUBLE_EQ(r.model.kl(), r.log.rows[argmin].kl);

  std::ostringstream csv;
  r.log.write_csv(csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, TrainLog::kHeader);
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
    EXPECT_NE(line.find(",NA,"), std::string::npos);
  }
  EXPECT_EQ(n, 6);
}

TEST(Training, LearnsAndIsReproducible) {
  auto c = small_config();
  c.schedule = {{20, 0.05}};
  const auto a = train_condgauss(small_model(), small_data(), c);
  const auto again = train_condgauss(small_model(), small_data(), c);
  EXPECT_EQ(a.model.flat_params(), again.model.flat_params());
  EXPECT_LT(a.log.rows[a.log.best_epoch - 1].emp_est, a.log.rows.front().emp_est);
  c.seed = 5;
  EXPECT_NE(train_condgauss(small_model(), small_data(), c).model.flat_params(), a.model.flat_params());
}

TEST(Training, LargerKappaKeepsKlSmaller) {
  auto c = small_config();
  c.schedule = {{10, 0.05}};
  c.objective = b::BoundSpec{b::BoundKind::kMcAllester, 1.0};
  const auto loose = train_condgauss(small_model(), small_data(), c);
  c.objective->kappa = 50.0;
  const auto tight = train_condgauss(small_model(), small_data(), c);
  EXPECT_LT(tight.log.rows.back().kl, loose.log.rows.back().kl);
}

TEST(Training, LambdaAlternationLogsLambda) {
  auto c = small_config();
  c.objective = b::BoundSpec{b::BoundKind::kLambda, 1.0, 0.025, 0.8};
  const auto r = train_lambda_alternating(small_model(), small_data(), c);
  ASSERT_EQ(r.log.rows.size(), 6u);
  for (const auto& row : r.log.rows) ASSERT_TRUE(row.lambda.has_value());
  EXPECT_NE(*r.log.rows.front().lambda, 0.8);
  EXPECT_EQ(r.log.rows[0].kl, small_model().kl());
  ASSERT_TRUE(r.lambda.has_value());
  c.objective = b::BoundSpec{};
  EXPECT_THROW(train_lambda_alternating(small_model(), small_data(), c), std::invalid_argument);
}

TEST(Training, PriorIsFrozenWithProvenance) {
  const auto whole = synth_blobs(3, 40, 5, 6.0, 2);
  const auto split = split_prior_bound(whole, 0.5, 1);
  auto c = small_config();
  c.phase = TrainPhase::kPrior;
  c.objective.reset();
  c.dropout = 0.1;
  const auto r = train_prior(small_model(), split.prior, c);
  EXPECT_DOUBLE_EQ(r.model.kl(), 0.0);
  EXPECT_EQ(r.model.provenance.source_hash, whole.source_hash);
  auto idx = split.prior.source_index;
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(r.model.provenance.indices, idx);
  EXPECT_NE(r.model.flat_params(), small_model().flat_params());
  c.phase = TrainPhase::kPosterior;
  EXPECT_THROW(train_prior(small_model(), split.prior, c), std::invalid_argument);
}

TEST(Training, SurrogateBaselineRuns) {
  auto c = small_config();
  c.phase = TrainPhase::kBaseline;
  const auto r = train_surrogate_baseline(small_model(), small_data(), c);
  ASSERT_EQ(r.log.rows.size(), 3u);
  for (const auto& row : r.log.rows) {
    EXPECT_TRUE(std::isfinite(row.objective));
    EXPECT_GE(row.bound_est, row.emp_est);
  }
  c.phase = TrainPhase::kPosterior;
  EXPECT_THROW(train_surrogate_baseline(small_model(), small_data(), c), std::invalid_argument);
  c.phase = TrainPhase::kBaseline;
  EXPECT_THROW(train_condgauss(small_model(), small_data(), c), std::invalid_argument);
}

TEST(Training, ShapeMismatchRejected) {
  EXPECT_THROW(train_condgauss(small_model(), synth_blobs(3, 5, 4, 1.0, 1), small_config()), std::invalid_argument);
}
