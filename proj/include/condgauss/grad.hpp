#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

// Minimal reverse-mode gradient engine over the (mean, rho) hyper-parameters
// of every GaussianParamGroup, plus a finite-difference harness.

namespace condgauss::grad {

struct Var {
  std::size_t id = 0;
};

enum class LeafField { kMean, kRawDev };

struct GroupGrad {
  std::vector<double> d_mean;
  std::vector<double> d_raw_dev;
};

/// One entry per parameter group, in group order.
using ParamGrads = std::vector<GroupGrad>;

class Tape {
 public:
  /// Receives the tape after this node's adjoint is complete; must add into
  /// the adjoints of the node's inputs.
  using Backward = std::function<void(Tape&, std::span<const double> out_adjoint)>;

  Var constant(std::vector<double> value);
  Var leaf(std::vector<double> value, std::size_t group, LeafField field);
  /// Records a node computed from `inputs`. `backward` may be empty when no
  /// input needs a gradient.
  Var record(std::vector<double> value, std::span<const Var> inputs, Backward backward);
  Var record(std::vector<double> value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  [[nodiscard]] std::span<const double> value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] double scalar(Var v) const;
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Adjoint buffer of `v`; only valid during backward() for nodes that require grad.
  std::span<double> adjoint(Var v) { return nodes_[v.id].adjoint; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output. Throws if `out` is not scalar.
  void backward(Var out, double seed = 1.0);

  /// Leaf adjoints gathered per group (zeros for groups without leaves on the tape).
  [[nodiscard]] ParamGrads leaf_gradients(std::span<const std::size_t> group_sizes) const;

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> adjoint;
    Backward backward;
    bool requires_grad = false;
    bool is_leaf = false;
    std::size_t group = 0;
    LeafField field = LeafField::kMean;
  };
  std::vector<Node> nodes_;
  bool swept_ = false;
};

/// Runs tape.backward(out, seed) and returns the gradient for every group.
ParamGrads backward(Tape& tape, Var out, double seed, std::span<const std::size_t> group_sizes);

// ---- primitive operations ----

/// sigma = |rho|^{3/2} elementwise.
Var sigma_of_rho(Tape& tape, Var rho);
/// theta = mean + sigma * zeta with zeta recorded (pathwise gradient).
Var reparam(Tape& tape, Var mean, Var sigma, std::vector<double> zeta);
/// Batched affine map: params laid out as W (out x in, row-major) then b (out);
/// x is (batch x in). Output is (batch x out).
Var affine(Tape& tape, Var params, Var x, std::size_t batch, std::size_t in, std::size_t out);
Var relu(Tape& tape, Var x);
/// Elementwise product with a constant mask (dropout).
Var scale(Tape& tape, Var x, std::vector<double> factors);
/// Scalar map y = f(x) with known derivative value.
Var scalar_map(Tape& tape, Var x, double value, double derivative);
/// Scalar binary map y = f(a, b) with known partials.
Var scalar_map2(Tape& tape, Var a, Var b, double value, double da, double db);

// ---- finite-difference harness ----

struct FdCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// Compares `analytic` (gradient at `point`) against central differences of
/// `fn`. Relative error uses max(|a|, |n|, abs_floor) as the denominator.
/// Only `coordinates` are checked when non-empty.
FdCheckResult fd_check(const ScalarFn& fn, std::span<const double> point, std::span<const double> analytic,
                       double step, std::span<const std::size_t> coordinates = {}, double abs_floor = 1e-9);

}  // namespace condgauss::grad
