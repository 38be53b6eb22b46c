#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "condgauss/bounds.hpp"
#include "condgauss/data.hpp"
#include "condgauss/network.hpp"

namespace condgauss {

enum class TrainPhase { kPrior, kPosterior, kBaseline };

struct Stage {
  std::size_t epochs = 0;
  double learning_rate = 0.0;
};

struct TrainConfig {
  /// Bound being minimised. Empty means ERM (bare error estimate), prior phase only.
  std::optional<bounds::BoundSpec> objective = bounds::BoundSpec{};
  std::vector<Stage> schedule;
  double momentum = 0.9;
  std::size_t batch_size = 250;
  std::size_t repeats = 100;
  std::uint64_t seed = 0;
  TrainPhase phase = TrainPhase::kPosterior;
  ErrorEstimator estimator = ErrorEstimator::kL1;
  /// Hidden dropout, prior phase only.
  double dropout = 0.0;
  /// Step size for the logistic lambda parameter (lbd objective only).
  double lambda_learning_rate = 0.5;

  [[nodiscard]] std::size_t total_epochs() const;
  /// Learning rate in force at 1-based epoch `epoch`.
  [[nodiscard]] double learning_rate_at(std::size_t epoch) const;
  void validate() const;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double objective = 0.0;
  double emp_est = 0.0;
  double kl = 0.0;
  double pen = 0.0;
  double bound_est = 0.0;
  std::optional<double> lambda;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  /// Epoch whose snapshot was returned; 0 when nothing ran.
  std::size_t best_epoch = 0;

  static constexpr const char* kHeader = "epoch,objective,emp_est,kl,pen,bound_est,lambda,seconds";
  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  StochasticModel model;
  TrainLog log;
  std::optional<double> lambda;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Objective above which training is aborted.
inline constexpr double kDivergenceThreshold = 10.0;

/// Heavy-ball SGD: v <- mu v + g, p <- p - lr v.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum) : momentum_(momentum) {}
  void step(std::span<double> params, std::span<const double> grad, double learning_rate);
  void reset() { velocity_.clear(); }
  [[nodiscard]] std::span<const double> velocity() const { return velocity_; }

 private:
  double momentum_;
  std::vector<double> velocity_;
};

/// One mini-batch objective together with its gradient w.r.t. every (mean, rho).
struct ObjectiveEvaluation {
  double value = 0.0;
  /// Loss fed into the bound: E_hat for Cond-Gauss, the surrogate for the baseline.
  double loss = 0.0;
  double emp_est = 0.0;
  double kl = 0.0;
  double pen = 0.0;
  double d_lambda = 0.0;
  std::vector<double> grad;  // aligned with StochasticModel::flat_params()
};

/// Cond-Gauss objective B(E_hat, Pen) on `rows`, with Pen computed for a bound
/// sample of size `m`. `objective` empty means the bare estimate.
ObjectiveEvaluation condgauss_objective(const StochasticModel& model, const LabelledDataset& data,
                                        std::span<const std::size_t> rows, const RngStream& rng,
                                        const std::optional<bounds::BoundSpec>& objective, std::size_t m,
                                        const BatchOptions& options, bool want_grad = true);

/// Bounded cross-entropy min(1, -log p'_y / log(1/p_min)) with softmax clamped at p_min.
inline constexpr double kSurrogatePmin = 1e-4;
double bounded_cross_entropy(std::span<const double> logits, ClassLabel y, std::vector<double>* d_logits = nullptr);

/// Baseline objective: every layer sampled once for the batch, surrogate loss in place of E_hat.
/// `emp_est` holds the sampled 0-1 error of the batch.
ObjectiveEvaluation surrogate_objective(const StochasticModel& model, const LabelledDataset& data,
                                        std::span<const std::size_t> rows, const RngStream& rng,
                                        const std::optional<bounds::BoundSpec>& objective, std::size_t m,
                                        bool want_grad = true);

/// One momentum step on the logistic parameter a (lambda = 1/(1+e^-a)) for fixed (E, Pen).
struct LambdaState {
  double logit = 0.0;
  double velocity = 0.0;
  [[nodiscard]] double lambda() const;
  static LambdaState from_lambda(double lambda);
};
void lambda_step(LambdaState& state, double emp_error, double pen, const bounds::BoundSpec& spec,
                 double learning_rate, double momentum);

TrainResult train_condgauss(StochasticModel model, const LabelledDataset& data, const TrainConfig& config);
TrainResult train_lambda_alternating(StochasticModel model, const LabelledDataset& data, const TrainConfig& config);
/// Trains every layer on the prior split, then freezes (mean, sigma) as the prior
/// and records which examples it saw.
TrainResult train_prior(StochasticModel model, const LabelledDataset& prior_data, const TrainConfig& config);
TrainResult train_surrogate_baseline(StochasticModel model, const LabelledDataset& data, const TrainConfig& config);

}  // namespace condgauss
