#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "condgauss/bounds.hpp"
#include "condgauss/certify.hpp"
#include "condgauss/cli.hpp"
#include "condgauss/data.hpp"
#include "condgauss/gaussian.hpp"
#include "condgauss/validators.hpp"

namespace py = pybind11;
namespace b = condgauss::bounds;
using namespace condgauss;

namespace {

b::BoundSpec make_spec(const std::string& kind, double kappa, double delta, std::optional<double> lambda) {
  b::BoundSpec s{b::parse_bound_kind(kind), kappa, delta, lambda};
  s.validate();
  return s;
}

py::tuple dataset_arrays(const LabelledDataset& d) {
  py::array_t<double> x({d.size(), d.dim});
  std::copy(d.inputs.begin(), d.inputs.end(), x.mutable_data());
  std::vector<int> labels(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) labels[k] = d.labels[k].value;
  return py::make_tuple(x, py::array_t<int>(static_cast<py::ssize_t>(labels.size()), labels.data()));
}

// Runs a command and turns a non-zero exit into RuntimeError carrying stderr.
std::string run_command(const std::function<int(std::ostream&, std::ostream&)>& fn) {
  std::ostringstream out, err;
  int rc = 0;
  {
    py::gil_scoped_release release;
    rc = fn(out, err);
  }
  if (rc != 0) throw std::runtime_error(err.str());
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "PAC-Bayes bounds, certificates and training runs for stochastic Gaussian classifiers";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CertificationRefused>(m, "CertificationRefused", PyExc_RuntimeError);
  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("kl_bernoulli", &b::kl_bernoulli, py::arg("u"), py::arg("v"));
  m.def("kl_inv", &b::kl_inv, py::arg("u"), py::arg("c"), "Largest v with kl(u||v) <= c.");
  m.def(
      "kl_inv_grad",
      [](double u, double c) {
        const auto g = b::kl_inv_grad(u, c);
        return py::make_tuple(g.du, g.dc);
      },
      py::arg("u"), py::arg("c"), "Partial derivatives (d/du, d/dc) of kl_inv.");
  m.def(
      "penalty", [](double kl, std::size_t m_, double delta, double kappa) { return b::penalty({kl, m_, delta, kappa}); },
      py::arg("kl"), py::arg("m"), py::arg("delta") = 0.025, py::arg("kappa") = 1.0);
  m.def(
      "bound",
      [](double emp_error, double pen, const std::string& kind, std::optional<double> lambda) {
        return b::objective_value(emp_error, pen, make_spec(kind, 1.0, 0.025, lambda));
      },
      py::arg("emp_error"), py::arg("pen"), py::arg("kind") = "invkl", py::arg("lam") = py::none(),
      "Bound value for kind in {invkl, mcall, quad, lbd}.");

  m.def("std_normal_cdf", &std_normal_cdf, py::arg("t"));
  m.def(
      "binary_error_prob",
      [](std::vector<double> mean, std::vector<double> var, int y) {
        return binary_error_prob(ConditionalHead{std::move(mean), std::move(var)}, ClassLabel{y});
      },
      py::arg("mean"), py::arg("var"), py::arg("y"), "Exact misclassification probability of a two-class head.");

  m.def("inner_bound", &inner_bound, py::arg("tilde_e"), py::arg("n_draws"), py::arg("delta_prime"));
  m.def(
      "certificate",
      [](double tilde_e, std::size_t n_draws, double delta_prime, double kl, std::size_t m_, double delta) {
        const Certificate c = certificate_from_values(tilde_e, n_draws, delta_prime, kl, m_, delta);
        py::dict d;
        d["tilde_e"] = c.tilde_e;
        d["inner_bound"] = c.inner_bound;
        d["pen"] = c.pen;
        d["final_bound"] = c.final_bound;
        d["confidence"] = c.confidence;
        d["saturated"] = c.saturated;
        return d;
      },
      py::arg("tilde_e"), py::arg("n_draws"), py::arg("delta_prime"), py::arg("kl"), py::arg("m"),
      py::arg("delta") = 0.025);

  m.def(
      "synth_blobs",
      [](std::size_t classes, std::size_t per_class, std::size_t dim, double separation, std::uint64_t seed) {
        return dataset_arrays(synth_blobs(classes, per_class, dim, separation, seed));
      },
      py::arg("classes"), py::arg("per_class"), py::arg("dim"), py::arg("separation"), py::arg("seed"),
      "Returns (inputs[n, dim], labels[n]) with labels in 1..classes.");
  m.def(
      "load_mnist_idx",
      [](const std::string& images, const std::string& labels) {
        return dataset_arrays(load_mnist_idx(images, labels));
      },
      py::arg("images"), py::arg("labels"));

  m.def(
      "train", [](const std::string& config) { return run_command([&](auto& o, auto& e) { return cli::cmd_train(config, o, e); }); },
      py::arg("config"), "Runs a training configuration; returns the progress log.");
  m.def(
      "certify",
      [](const std::string& config, const std::string& model, std::optional<std::size_t> n_draws,
         const std::string& out_path) {
        cli::CertifyArgs args;
        args.config_path = config;
        args.model_path = model;
        args.n_draws = n_draws;
        args.out_path = out_path;
        return run_command([&](auto& o, auto& e) { return cli::cmd_certify(args, o, e); });
      },
      py::arg("config"), py::arg("model"), py::arg("n_draws") = py::none(), py::arg("out") = "");
  m.def(
      "run_checks",
      []() {
        std::vector<std::pair<std::string, bool>> out;
        for (const auto& r : condgauss::run_checks()) out.emplace_back(r.name, r.passed);
        return out;
      },
      "Validator battery as (name, passed) pairs.");
}
