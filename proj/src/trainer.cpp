#include "condgauss/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace condgauss {

std::size_t TrainConfig::total_epochs() const {
  std::size_t n = 0;
  for (const Stage& s : schedule) n += s.epochs;
  return n;
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  std::size_t seen = 0;
  for (const Stage& s : schedule) {
    seen += s.epochs;
    if (epoch <= seen) return s.learning_rate;
  }
  return schedule.empty() ? 0.0 : schedule.back().learning_rate;
}

void TrainConfig::validate() const {
  for (const Stage& s : schedule) {
    if (s.epochs < 1) throw std::invalid_argument("every schedule stage needs >= 1 epoch");
    if (!(s.learning_rate > 0.0)) throw std::invalid_argument("learning rates must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (repeats == 0) throw std::invalid_argument("repeats must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0,1)");
  if (dropout > 0.0 && phase != TrainPhase::kPrior) throw std::invalid_argument("dropout is only used for priors");
  if (!objective && phase != TrainPhase::kPrior) throw std::invalid_argument("ERM objective is only used for priors");
  if (objective) {
    objective->validate();
    if (objective->kind == bounds::BoundKind::kLambda && !(lambda_learning_rate > 0.0)) {
      throw std::invalid_argument("lambda learning rate must be positive");
    }
  }
}

void TrainLog::write_csv(std::ostream& out) const {
  out << kHeader << '\n';
  out << std::setprecision(17);
  for (const TrainLogRow& r : rows) {
    out << r.epoch << ',' << r.objective << ',' << r.emp_est << ',' << r.kl << ',' << r.pen << ',' << r.bound_est
        << ',';
    if (r.lambda) {
      out << *r.lambda;
    } else {
      out << "NA";
    }
    out << ',' << std::setprecision(6) << r.seconds << std::setprecision(17) << '\n';
  }
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv(out);
}

void MomentumSgd::step(std::span<double> params, std::span<const double> grad, double learning_rate) {
  if (params.size() != grad.size()) throw std::invalid_argument("gradient size does not match parameters");
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    velocity_[k] = momentum_ * velocity_[k] + grad[k];
    params[k] -= learning_rate * velocity_[k];
  }
}

namespace {

bounds::BoundSpec with_lambda(const bounds::BoundSpec& spec, std::optional<double> lambda) {
  bounds::BoundSpec s = spec;
  if (s.kind == bounds::BoundKind::kLambda) s.lambda = lambda;
  return s;
}

// Adds Pen and B(loss, Pen) on top of a recorded loss node.
grad::Var finish_objective(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model, grad::Var loss,
                           const std::optional<bounds::BoundSpec>& objective, std::size_t m,
                           ObjectiveEvaluation& ev) {
  ev.kl = model.kl();
  if (!objective) {
    ev.value = ev.loss;
    return loss;
  }
  const bounds::PenaltyInputs pin{ev.kl, m, objective->delta, objective->kappa};
  ev.pen = bounds::penalty(pin);
  const grad::Var kl_var = record_kl(tape, vars, model);
  const grad::Var pen_var = grad::scalar_map(tape, kl_var, ev.pen, bounds::penalty_slope(pin));
  const auto parts = bounds::objective_partials(std::clamp(ev.loss, 0.0, 1.0), ev.pen, *objective);
  ev.value = parts.value;
  ev.d_lambda = parts.d_lambda;
  return grad::scalar_map2(tape, loss, pen_var, parts.value, parts.d_error, parts.d_pen);
}

}  // namespace

ObjectiveEvaluation condgauss_objective(const StochasticModel& model, const LabelledDataset& data,
                                        std::span<const std::size_t> rows, const RngStream& rng,
                                        const std::optional<bounds::BoundSpec>& objective, std::size_t m,
                                        const BatchOptions& options, bool want_grad) {
  grad::Tape tape;
  const ModelVars vars = bind_model(tape, model);
  const BatchEstimate est = batch_error_estimate(tape, vars, model, data, rows, rng, options);
  ObjectiveEvaluation ev;
  ev.loss = est.value;
  ev.emp_est = est.value;
  const grad::Var out = finish_objective(tape, vars, model, est.var, objective, m, ev);
  if (want_grad) ev.grad = StochasticModel::flatten(grad::backward(tape, out, 1.0, model.group_sizes()));
  return ev;
}

double bounded_cross_entropy(std::span<const double> logits, ClassLabel y, std::vector<double>* d_logits) {
  const std::size_t q = logits.size();
  const std::size_t iy = y.index();
  if (iy >= q) throw std::invalid_argument("label outside the logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(q);
  long double total = 0.0L;
  for (std::size_t i = 0; i < q; ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& v : p) v = static_cast<double>(v / total);
  const double norm = std::log(1.0 / kSurrogatePmin);
  const bool clamped = p[iy] < kSurrogatePmin;
  const double loss = std::min(1.0, -std::log(std::max(p[iy], kSurrogatePmin)) / norm);
  if (d_logits != nullptr) {
    d_logits->assign(q, 0.0);
    if (!clamped) {
      for (std::size_t i = 0; i < q; ++i) (*d_logits)[i] = (p[i] - (i == iy ? 1.0 : 0.0)) / norm;
    }
  }
  return loss;
}

ObjectiveEvaluation surrogate_objective(const StochasticModel& model, const LabelledDataset& data,
                                        std::span<const std::size_t> rows, const RngStream& rng,
                                        const std::optional<bounds::BoundSpec>& objective, std::size_t m,
                                        bool want_grad) {
  if (rows.empty()) throw std::invalid_argument("empty batch");
  const ModelSpec& spec = model.spec();
  const std::size_t batch = rows.size();
  const std::size_t q = spec.classes();
  const std::size_t last = spec.layer_count() - 1;
  const auto& out_group = model.groups()[last];

  grad::Tape tape;
  const ModelVars vars = bind_model(tape, model);
  const grad::Var phi = record_hidden(tape, vars, model, data, rows, rng, 0.0);
  RngStream out_rng = rng.derive(StreamTag::kFullSample, {last});
  std::vector<double> zeta(out_group.size());
  for (double& z : zeta) z = out_rng.normal();
  const grad::Var theta = grad::reparam(tape, vars.mean[last], vars.sigma[last], std::move(zeta));
  const grad::Var logits = grad::affine(tape, theta, phi, batch, out_group.in_dim(), q);
  const auto lv = tape.value(logits);

  std::vector<double> d_logits(batch * q);
  long double loss_total = 0.0L;
  std::size_t errors = 0;
  std::vector<double> d_one;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::span<const double> f = lv.subspan(b * q, q);
    const ClassLabel y = data.labels[rows[b]];
    loss_total += bounded_cross_entropy(f, y, &d_one);
    std::copy(d_one.begin(), d_one.end(), d_logits.begin() + static_cast<std::ptrdiff_t>(b * q));
    bool wrong = false;
    for (std::size_t i = 0; i < q && !wrong; ++i) wrong = i != y.index() && f[i] >= f[y.index()];
    errors += wrong ? 1 : 0;
  }
  const double inv = 1.0 / static_cast<double>(batch);
  ObjectiveEvaluation ev;
  ev.loss = static_cast<double>(loss_total) * inv;
  ev.emp_est = static_cast<double>(errors) * inv;
  const grad::Var loss = tape.record({ev.loss}, {logits}, [logits, inv, d_logits = std::move(d_logits)](grad::Tape& t, std::span<const double> g) {
    auto a = t.adjoint(logits);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += g[0] * inv * d_logits[k];
  });
  const grad::Var out = finish_objective(tape, vars, model, loss, objective, m, ev);
  if (want_grad) ev.grad = StochasticModel::flatten(grad::backward(tape, out, 1.0, model.group_sizes()));
  return ev;
}

double LambdaState::lambda() const { return 1.0 / (1.0 + std::exp(-logit)); }

LambdaState LambdaState::from_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::domain_error("lambda must lie in (0,1)");
  return LambdaState{std::log(lambda / (1.0 - lambda)), 0.0};
}

void lambda_step(LambdaState& state, double emp_error, double pen, const bounds::BoundSpec& spec,
                 double learning_rate, double momentum) {
  const double lam = state.lambda();
  const auto parts = bounds::objective_partials(emp_error, pen, with_lambda(spec, lam));
  const double g = parts.d_lambda * lam * (1.0 - lam);
  state.velocity = momentum * state.velocity + g;
  state.logit -= learning_rate * state.velocity;
}

namespace {

using BatchFn = std::function<ObjectiveEvaluation(const StochasticModel&, std::span<const std::size_t>,
                                                  const RngStream&, const std::optional<bounds::BoundSpec>&, bool)>;

TrainResult run_training(StochasticModel model, const LabelledDataset& data, const TrainConfig& config,
                         const BatchFn& batch_fn) {
  config.validate();
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("training set is empty");
  if (data.dim != model.spec().inputs() || data.classes != model.spec().classes()) {
    throw std::invalid_argument("dataset shape does not match the model");
  }
  const bool alternate = config.objective && config.objective->kind == bounds::BoundKind::kLambda;
  const std::size_t epochs = config.total_epochs() * (alternate ? 2 : 1);
  const double delta = config.objective ? config.objective->delta : bounds::BoundSpec{}.delta;
  const std::size_t batch = std::min(config.batch_size, n);

  LambdaState lam;
  if (alternate) lam = LambdaState::from_lambda(config.objective->lambda.value_or(0.5));

  TrainResult result{model, {}, std::nullopt};
  if (alternate) result.lambda = lam.lambda();
  double best_bound = bounds::kInfinity;

  const RngStream root(config.seed);
  MomentumSgd sgd(config.momentum);
  std::vector<std::size_t> perm(n);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const bool lambda_epoch = alternate && epoch % 2 == 1;
    const double lr = config.learning_rate_at(alternate ? (epoch + 1) / 2 : epoch);
    if (lambda_epoch) lam.velocity = 0.0;

    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream shuffle_rng = root.derive(StreamTag::kShuffle, {epoch});
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    long double obj_sum = 0.0L;
    long double est_sum = 0.0L;
    for (std::size_t b = 0, begin = 0; begin < n; ++b, begin += batch) {
      const std::size_t count = std::min(batch, n - begin);
      const std::span<const std::size_t> rows(perm.data() + begin, count);
      const RngStream batch_rng = root.derive({epoch, b});
      std::optional<bounds::BoundSpec> objective = config.objective;
      if (objective) objective = with_lambda(*objective, lam.lambda());

      const ObjectiveEvaluation ev = batch_fn(model, rows, batch_rng, objective, !lambda_epoch);
      if (!std::isfinite(ev.value) || ev.value > kDivergenceThreshold) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " batch " << b << ": objective " << ev.value;
        throw TrainingDiverged(msg.str());
      }
      if (lambda_epoch) {
        lambda_step(lam, std::clamp(ev.loss, 0.0, 1.0), ev.pen, *objective, config.lambda_learning_rate,
                    config.momentum);
      } else {
        if (!std::all_of(ev.grad.begin(), ev.grad.end(), [](double g) { return std::isfinite(g); })) {
          throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch));
        }
        std::vector<double> params = model.flat_params();
        sgd.step(params, ev.grad, lr);
        model.set_flat_params(params);
      }
      obj_sum += static_cast<long double>(ev.value) * count;
      est_sum += static_cast<long double>(ev.emp_est) * count;
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.objective = static_cast<double>(obj_sum / n);
    row.emp_est = std::clamp(static_cast<double>(est_sum / n), 0.0, 1.0);
    row.kl = model.kl();
    row.pen = bounds::penalty({row.kl, n, delta, 1.0});
    row.bound_est = bounds::kl_inv(row.emp_est, row.pen);
    if (alternate) row.lambda = lam.lambda();
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.rows.push_back(row);

    if (row.bound_est < best_bound) {
      best_bound = row.bound_est;
      result.model = model;
      result.log.best_epoch = epoch;
      if (alternate) result.lambda = lam.lambda();
    }
  }
  return result;
}

}  // namespace

TrainResult train_condgauss(StochasticModel model, const LabelledDataset& data, const TrainConfig& config) {
  if (config.phase == TrainPhase::kBaseline) throw std::invalid_argument("baseline phase uses train_surrogate_baseline");
  const BatchOptions options{config.repeats, config.estimator,
                             config.phase == TrainPhase::kPrior ? config.dropout : 0.0};
  const std::size_t m = data.size();
  return run_training(std::move(model), data, config,
                      [&](const StochasticModel& mdl, std::span<const std::size_t> rows, const RngStream& rng,
                          const std::optional<bounds::BoundSpec>& objective, bool want_grad) {
                        return condgauss_objective(mdl, data, rows, rng, objective, m, options, want_grad);
                      });
}

TrainResult train_lambda_alternating(StochasticModel model, const LabelledDataset& data, const TrainConfig& config) {
  if (!config.objective || config.objective->kind != bounds::BoundKind::kLambda) {
    throw std::invalid_argument("lambda alternation needs the lbd objective");
  }
  return train_condgauss(std::move(model), data, config);
}

TrainResult train_prior(StochasticModel model, const LabelledDataset& prior_data, const TrainConfig& config) {
  if (config.phase != TrainPhase::kPrior) throw std::invalid_argument("train_prior needs phase = prior");
  if (config.objective && config.objective->kind != bounds::BoundKind::kInvKl) {
    throw std::invalid_argument("prior objective must be ERM or invKL");
  }
  TrainResult r = train_condgauss(std::move(model), prior_data, config);
  r.model.freeze_prior();
  r.model.provenance.source_hash = prior_data.source_hash;
  r.model.provenance.indices = prior_data.source_index;
  std::sort(r.model.provenance.indices.begin(), r.model.provenance.indices.end());
  return r;
}

TrainResult train_surrogate_baseline(StochasticModel model, const LabelledDataset& data, const TrainConfig& config) {
  if (config.phase != TrainPhase::kBaseline) throw std::invalid_argument("train_surrogate_baseline needs phase = baseline");
  const std::size_t m = data.size();
  return run_training(std::move(model), data, config,
                      [&](const StochasticModel& mdl, std::span<const std::size_t> rows, const RngStream& rng,
                          const std::optional<bounds::BoundSpec>& objective, bool want_grad) {
                        return surrogate_objective(mdl, data, rows, rng, objective, m, want_grad);
                      });
}

}  // namespace condgauss
