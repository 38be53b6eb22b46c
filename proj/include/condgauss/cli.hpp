#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "condgauss/bounds.hpp"
#include "condgauss/data.hpp"
#include "condgauss/trainer.hpp"

namespace condgauss::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synth";  // synth | mnist
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  std::size_t classes = 4;
  std::size_t per_class = 1000;
  std::size_t heldout_per_class = 1000;
  std::size_t dim = 20;
  double separation = 8.0;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  /// Share of the data used to train the prior; 0 for a data-free prior.
  double prior_fraction = 0.0;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{32};
  double sigma0 = 0.01;
};

struct PhaseConfig {
  /// prior: none | erm | invkl. posterior: condgauss | baseline.
  std::string method;
  std::string objective = "invkl";
  double kappa = 1.0;
  double delta = 0.025;
  std::optional<double> lambda = std::nullopt;
  std::vector<Stage> schedule = {};
  double momentum = 0.9;
  std::size_t batch_size = 250;
  std::size_t repeats = 100;
  std::string estimator = "l1";
  double dropout = 0.0;
  double lambda_learning_rate = 0.5;
};

struct CertifyConfig {
  std::size_t n_draws = 1000;
  double delta = 0.025;
  double delta_prime = 0.01;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  PhaseConfig prior{.method = "none"};
  PhaseConfig posterior{.method = "condgauss"};
  CertifyConfig certify;
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  /// Throws ConfigError. Checks paths when `check_paths`.
  void validate(bool check_paths = true) const;
  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);
  /// Fully resolved config in the same INI format.
  void write(std::ostream& out) const;
};

/// "200:0.01, 50:0.0002" -> stages.
std::vector<Stage> parse_schedule(const std::string& text);

TrainConfig prior_train_config(const RunConfig& cfg);
TrainConfig posterior_train_config(const RunConfig& cfg);

struct PreparedData {
  LabelledDataset whole;
  LabelledDataset prior;  // empty for a data-free prior
  LabelledDataset bound;
  LabelledDataset heldout;
  std::uint64_t split_hash = 0;
};
PreparedData prepare_data(const RunConfig& cfg);

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err);

struct CertifyArgs {
  std::string config_path;
  std::string model_path;
  std::optional<std::size_t> n_draws;
  std::optional<double> delta;
  std::optional<double> delta_prime;
  std::optional<std::uint64_t> seed;
  std::string out_path;  // defaults to <output_dir>/certificate.txt
};
int cmd_certify(const CertifyArgs& args, std::ostream& out, std::ostream& err);

int cmd_eval(const std::string& config_path, const std::string& model_path, std::size_t n_draws, std::ostream& out,
             std::ostream& err);

int cmd_check(bool corrupt_psi, std::ostream& out, std::ostream& err);

}  // namespace condgauss::cli
