"""PAC-Bayes bounds and certified training for stochastic Gaussian classifiers."""

from ._core import (
    CertificationRefused,
    ConfigError,
    DataError,
    binary_error_prob,
    bound,
    certificate,
    certify,
    inner_bound,
    kl_bernoulli,
    kl_inv,
    kl_inv_grad,
    load_mnist_idx,
    penalty,
    run_checks,
    std_normal_cdf,
    synth_blobs,
    train,
)

__all__ = [
    "CertificationRefused",
    "ConfigError",
    "DataError",
    "binary_error_prob",
    "bound",
    "certificate",
    "certify",
    "inner_bound",
    "kl_bernoulli",
    "kl_inv",
    "kl_inv_grad",
    "load_mnist_idx",
    "penalty",
    "run_checks",
    "std_normal_cdf",
    "synth_blobs",
    "train",
]
