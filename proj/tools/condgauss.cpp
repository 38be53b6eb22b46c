#include <CLI11.hpp>
#include <iostream>

#include "condgauss/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Train stochastic Gaussian classifiers by minimising PAC-Bayes bounds and certify them"};
  app.require_subcommand(1);

  std::string config;
  std::string model;
  auto* train = app.add_subcommand("train", "Train prior and posterior, then certify");
  train->add_option("config", config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);

  condgauss::cli::CertifyArgs cert;
  std::size_t n_draws = 0;
  double delta = 0.0;
  double delta_prime = 0.0;
  std::uint64_t seed = 0;
  auto* certify = app.add_subcommand("certify", "Certify a posterior snapshot on the bound split");
  certify->add_option("--config", cert.config_path, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  certify->add_option("--model", cert.model_path, "Posterior snapshot")->required()->check(CLI::ExistingFile);
  auto* n_opt = certify->add_option("-N,--n-draws", n_draws, "Monte-Carlo parameter draws");
  auto* d_opt = certify->add_option("--delta", delta, "PAC-Bayes confidence parameter");
  auto* dp_opt = certify->add_option("--delta-prime", delta_prime, "Monte-Carlo confidence parameter");
  auto* s_opt = certify->add_option("--seed", seed, "Seed for the parameter draws");
  certify->add_option("-o,--out", cert.out_path, "Where to write the certificate");

  std::size_t eval_draws = 100;
  auto* eval = app.add_subcommand("eval", "Held-out error of a snapshot");
  eval->add_option("--config", config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", model, "Snapshot")->required()->check(CLI::ExistingFile);
  eval->add_option("-N,--n-draws", eval_draws, "Monte-Carlo parameter draws")->check(CLI::PositiveNumber);

  bool corrupt = false;
  auto* check = app.add_subcommand("check", "Run the built-in validator battery");
  check->add_flag("--corrupt-psi", corrupt, "Use a biased normal CDF (negative control)");

  CLI11_PARSE(app, argc, argv);

  if (*train) return condgauss::cli::cmd_train(config, std::cout, std::cerr);
  if (*certify) {
    if (*n_opt) cert.n_draws = n_draws;
    if (*d_opt) cert.delta = delta;
    if (*dp_opt) cert.delta_prime = delta_prime;
    if (*s_opt) cert.seed = seed;
    return condgauss::cli::cmd_certify(cert, std::cout, std::cerr);
  }
  if (*eval) return condgauss::cli::cmd_eval(config, model, eval_draws, std::cout, std::cerr);
  if (*check) return condgauss::cli::cmd_check(corrupt, std::cout, std::cerr);
  return 1;
}
