#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "condgauss/data.hpp"
#include "condgauss/gaussian.hpp"
#include "condgauss/grad.hpp"
#include "condgauss/rng.hpp"

namespace condgauss {

enum class Activation { kRelu };

struct ModelSpec {
  /// Input width, hidden widths..., class count.
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::kRelu;
  /// Dropout on hidden activations; used only while training a prior.
  double dropout_prob = 0.0;

  [[nodiscard]] std::size_t inputs() const { return layer_widths.front(); }
  [[nodiscard]] std::size_t classes() const { return layer_widths.back(); }
  [[nodiscard]] std::size_t layer_count() const { return layer_widths.size() - 1; }
  [[nodiscard]] std::size_t hidden_count() const { return layer_count() - 1; }
  void validate() const;
};

/// Which examples (by source index) the frozen prior was trained on.
struct PriorProvenance {
  std::uint64_t source_hash = 0;
  std::vector<std::size_t> indices;

  [[nodiscard]] bool data_free() const { return indices.empty(); }
};

/// One GaussianParamGroup per fully-connected layer; the last group is the
/// output layer whose parameters are never sampled during Cond-Gauss training.
class StochasticModel {
 public:
  explicit StochasticModel(ModelSpec spec);

  /// Prior means uniform on +-1/sqrt(fan_in), sigma = sigma0 everywhere, prior frozen.
  static StochasticModel initialize(ModelSpec spec, double sigma0, const RngStream& rng);

  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  std::vector<GaussianParamGroup>& groups() { return groups_; }
  [[nodiscard]] const std::vector<GaussianParamGroup>& groups() const { return groups_; }
  [[nodiscard]] std::vector<std::size_t> group_sizes() const;
  [[nodiscard]] double kl() const { return kl_diag_gauss(groups_); }

  void freeze_prior();

  /// Flat view: for each group, means then raw deviations.
  [[nodiscard]] std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);
  [[nodiscard]] static std::vector<double> flatten(const grad::ParamGrads& grads);

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static StochasticModel load(std::istream& in);
  static StochasticModel load(const std::filesystem::path& path);

  PriorProvenance provenance;

 private:
  ModelSpec spec_;
  std::vector<GaussianParamGroup> groups_;
};

/// Pre-activation H of the last hidden layer for one input, given sampled
/// hidden parameters (one theta vector per hidden layer).
std::vector<double> forward_hidden(std::span<const double> x, std::span<const std::vector<double>> hidden_theta,
                                   const ModelSpec& spec);

/// Full network output F for one input given parameters for every layer.
std::vector<double> forward_full(std::span<const double> x, std::span<const std::vector<double>> theta,
                                 const ModelSpec& spec);

std::vector<double> relu(std::span<const double> h);

/// Zeroes each unit with probability `prob`, scales survivors by 1/(1-prob).
std::vector<double> apply_dropout(std::span<const double> h, double prob, RngStream& rng);

/// Draws every layer (hidden and output) from the posterior.
std::vector<std::vector<double>> sample_all(const StochasticModel& model, const RngStream& rng);

/// Fraction of examples with F_y <= max_{i != y} F_i under fully sampled parameters.
double exact_misclassification(const StochasticModel& model, const LabelledDataset& data,
                               std::span<const std::vector<double>> theta);

enum class ErrorEstimator { kL1, kL2, kBinaryClosedForm };

struct BatchOptions {
  std::size_t repeats = 100;
  ErrorEstimator estimator = ErrorEstimator::kL1;
  /// Hidden dropout; zero outside prior training.
  double dropout = 0.0;
};

/// Tape handles for every group's (mean, rho) leaves and derived sigma.
struct ModelVars {
  std::vector<grad::Var> mean;
  std::vector<grad::Var> rho;
  std::vector<grad::Var> sigma;
};
ModelVars bind_model(grad::Tape& tape, const StochasticModel& model);

/// Hidden forward pass on the tape with one hidden sample shared by the batch.
/// Returns the (batch x width) last hidden activations phi(H), dropout applied.
grad::Var record_hidden(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model,
                        const LabelledDataset& data, std::span<const std::size_t> rows, const RngStream& rng,
                        double dropout);

/// Conditional output moments for a batch: node holds M (batch x q) then V (batch x q).
grad::Var record_conditional_moments(grad::Tape& tape, grad::Var phi, grad::Var out_mean, grad::Var out_sigma,
                                     std::size_t batch, std::size_t width, std::size_t classes);

struct BatchEstimate {
  double value = 0.0;
  grad::Var var;
};

/// Cond-Gauss estimate of the empirical error on `rows`: one hidden sample for
/// the batch, exact conditional moments, then the chosen unbiased estimator
/// averaged over `repeats` draws per input and over the batch.
BatchEstimate batch_error_estimate(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model,
                                   const LabelledDataset& data, std::span<const std::size_t> rows,
                                   const RngStream& rng, const BatchOptions& options);

/// Same estimate without gradients.
double batch_error_estimate(const StochasticModel& model, const LabelledDataset& data,
                            std::span<const std::size_t> rows, const RngStream& rng, const BatchOptions& options);

/// Tape node for KL(Q||P) over every group.
grad::Var record_kl(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model);

}  // namespace condgauss
