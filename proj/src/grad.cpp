#include "condgauss/grad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "condgauss/gaussian.hpp"

namespace condgauss::grad {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
}  // namespace

Var Tape::constant(std::vector<double> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false, 0, LeafField::kMean});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(std::vector<double> value, std::size_t group, LeafField field) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true, group, field});
  return Var{nodes_.size() - 1};
}

Var Tape::record(std::vector<double> value, std::span<const Var> inputs, Backward backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return nodes_[v.id].requires_grad; });
  Node node{std::move(value), {}, {}, needs, false, 0, LeafField::kMean};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

double Tape::scalar(Var v) const {
  if (nodes_[v.id].value.size() != 1) throw std::logic_error("tape node is not scalar");
  return nodes_[v.id].value[0];
}

void Tape::backward(Var out, double seed) {
  if (nodes_.at(out.id).value.size() != 1) throw std::logic_error("backward needs a scalar output");
  if (swept_) throw std::logic_error("tape already swept");
  swept_ = true;
  for (std::size_t i = 0; i <= out.id; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.adjoint.assign(n.value.size(), 0.0);
  }
  if (!nodes_[out.id].requires_grad) return;
  nodes_[out.id].adjoint[0] = seed;
  // Creation order is a topological order, so the reverse visits every node once
  // after all of its consumers.
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    n.backward(*this, n.adjoint);
  }
}

ParamGrads Tape::leaf_gradients(std::span<const std::size_t> group_sizes) const {
  ParamGrads out(group_sizes.size());
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    out[g].d_mean.assign(group_sizes[g], 0.0);
    out[g].d_raw_dev.assign(group_sizes[g], 0.0);
  }
  for (const Node& n : nodes_) {
    if (!n.is_leaf || n.adjoint.empty()) continue;
    if (n.group >= out.size()) throw std::logic_error("leaf group outside the parameter set");
    auto& dst = n.field == LeafField::kMean ? out[n.group].d_mean : out[n.group].d_raw_dev;
    if (dst.size() != n.adjoint.size()) throw std::logic_error("leaf size does not match its group");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.adjoint[k];
  }
  return out;
}

ParamGrads backward(Tape& tape, Var out, double seed, std::span<const std::size_t> group_sizes) {
  tape.backward(out, seed);
  return tape.leaf_gradients(group_sizes);
}

Var sigma_of_rho(Tape& tape, Var rho) {
  const auto r = tape.value(rho);
  std::vector<double> s(r.size());
  std::vector<double> ds(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    const SigmaOfRho v = condgauss::sigma_of_rho(r[k]);
    s[k] = v.sigma;
    ds[k] = v.dsigma_drho;
  }
  return tape.record(std::move(s), {rho}, [rho, ds = std::move(ds)](Tape& t, std::span<const double> g) {
    auto dr = t.adjoint(rho);
    for (std::size_t k = 0; k < g.size(); ++k) dr[k] += g[k] * ds[k];
  });
}

Var reparam(Tape& tape, Var mean, Var sigma, std::vector<double> zeta) {
  const auto m = tape.value(mean);
  const auto s = tape.value(sigma);
  if (m.size() != s.size() || m.size() != zeta.size()) throw std::invalid_argument("reparam: size mismatch");
  std::vector<double> theta(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) theta[k] = m[k] + s[k] * zeta[k];
  return tape.record(std::move(theta), {mean, sigma}, [mean, sigma, zeta = std::move(zeta)](Tape& t, std::span<const double> g) {
    if (t.requires_grad(mean)) {
      auto dm = t.adjoint(mean);
      for (std::size_t k = 0; k < g.size(); ++k) dm[k] += g[k];
    }
    if (t.requires_grad(sigma)) {
      auto ds = t.adjoint(sigma);
      for (std::size_t k = 0; k < g.size(); ++k) ds[k] += g[k] * zeta[k];
    }
  });
}

Var affine(Tape& tape, Var params, Var x, std::size_t batch, std::size_t in, std::size_t out) {
  const auto p = tape.value(params);
  const auto xv = tape.value(x);
  if (p.size() != out * in + out || xv.size() != batch * in) throw std::invalid_argument("affine: shape mismatch");
  const auto B = static_cast<Eigen::Index>(batch);
  const auto I = static_cast<Eigen::Index>(in);
  const auto O = static_cast<Eigen::Index>(out);
  std::vector<double> y(batch * out);
  {
    MatMap ym(y.data(), B, O);
    ym.noalias() = ConstMatMap(xv.data(), B, I) * ConstMatMap(p.data(), O, I).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.data() + out * in, O);
  }
  return tape.record(std::move(y), {params, x}, [params, x, B, I, O](Tape& t, std::span<const double> g) {
    const ConstMatMap gm(g.data(), B, O);
    if (t.requires_grad(params)) {
      auto dp = t.adjoint(params);
      MatMap(dp.data(), O, I).noalias() += gm.transpose() * ConstMatMap(t.value(x).data(), B, I);
      Eigen::Map<Eigen::RowVectorXd>(dp.data() + O * I, O) += gm.colwise().sum();
    }
    if (t.requires_grad(x)) {
      auto dx = t.adjoint(x);
      MatMap(dx.data(), B, I).noalias() += gm * ConstMatMap(t.value(params).data(), O, I);
    }
  });
}

Var relu(Tape& tape, Var x) {
  const auto xv = tape.value(x);
  std::vector<double> y(xv.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = xv[k] > 0.0 ? xv[k] : 0.0;
  return tape.record(std::move(y), {x}, [x](Tape& t, std::span<const double> g) {
    const auto xv2 = t.value(x);
    auto dx = t.adjoint(x);
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (xv2[k] > 0.0) dx[k] += g[k];
    }
  });
}

Var scale(Tape& tape, Var x, std::vector<double> factors) {
  const auto xv = tape.value(x);
  if (xv.size() != factors.size()) throw std::invalid_argument("scale: size mismatch");
  std::vector<double> y(xv.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = xv[k] * factors[k];
  return tape.record(std::move(y), {x}, [x, factors = std::move(factors)](Tape& t, std::span<const double> g) {
    auto dx = t.adjoint(x);
    for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k] * factors[k];
  });
}

Var scalar_map(Tape& tape, Var x, double value, double derivative) {
  return tape.record({value}, {x}, [x, derivative](Tape& t, std::span<const double> g) {
    t.adjoint(x)[0] += g[0] * derivative;
  });
}

Var scalar_map2(Tape& tape, Var a, Var b, double value, double da, double db) {
  return tape.record({value}, {a, b}, [a, b, da, db](Tape& t, std::span<const double> g) {
    if (t.requires_grad(a)) t.adjoint(a)[0] += g[0] * da;
    if (t.requires_grad(b)) t.adjoint(b)[0] += g[0] * db;
  });
}

FdCheckResult fd_check(const ScalarFn& fn, std::span<const double> point, std::span<const double> analytic,
                       double step, std::span<const std::size_t> coordinates, double abs_floor) {
  if (analytic.size() != point.size()) throw std::invalid_argument("fd_check: gradient size mismatch");
  std::vector<double> x(point.begin(), point.end());
  FdCheckResult worst;
  auto check_one = [&](std::size_t k) {
    const double orig = x[k];
    x[k] = orig + step;
    const double up = fn(x);
    x[k] = orig - step;
    const double down = fn(x);
    x[k] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), abs_floor});
    const double rel = std::abs(numeric - analytic[k]) / denom;
    if (rel >= worst.max_rel_error) worst = FdCheckResult{rel, k, analytic[k], numeric};
  };
  if (coordinates.empty()) {
    for (std::size_t k = 0; k < x.size(); ++k) check_one(k);
  } else {
    for (std::size_t k : coordinates) check_one(k);
  }
  return worst;
}

}  // namespace condgauss::grad
