#include "condgauss/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "condgauss/parallel.hpp"

namespace condgauss {

namespace {

constexpr const char* kSnapshotHeader = "CONDGAUSS-MODEL v1";

// y = W x + b for one layer laid out as W (out x in, row-major) then b.
void affine_into(std::span<const double> theta, std::span<const double> x, std::size_t in, std::size_t out,
                 std::vector<double>& y) {
  y.resize(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double* w = theta.data() + i * in;
    double acc = theta[out * in + i];
    for (std::size_t j = 0; j < in; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace

void ModelSpec::validate() const {
  if (layer_widths.size() < 3) throw std::invalid_argument("model needs an input width, >= 1 hidden layer and q");
  if (std::any_of(layer_widths.begin(), layer_widths.end(), [](std::size_t w) { return w == 0; })) {
    throw std::invalid_argument("layer widths must be positive");
  }
  if (classes() < 2) throw std::invalid_argument("model needs q >= 2 classes");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw std::invalid_argument("dropout must lie in [0,1)");
}

StochasticModel::StochasticModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    groups_.emplace_back(spec_.layer_widths[l + 1], spec_.layer_widths[l]);
  }
}

StochasticModel StochasticModel::initialize(ModelSpec spec, double sigma0, const RngStream& rng) {
  if (!(sigma0 > 0.0)) throw std::invalid_argument("initial sigma must be positive");
  StochasticModel model(std::move(spec));
  for (std::size_t l = 0; l < model.groups_.size(); ++l) {
    GaussianParamGroup& g = model.groups_[l];
    RngStream r = rng.derive(StreamTag::kInit, {l});
    const double bound = 1.0 / std::sqrt(static_cast<double>(g.in_dim()));
    for (double& m : g.mean()) m = bound * (2.0 * r.uniform() - 1.0);
    g.set_sigma(sigma0);
  }
  model.freeze_prior();
  return model;
}

std::vector<std::size_t> StochasticModel::group_sizes() const {
  std::vector<std::size_t> out;
  for (const auto& g : groups_) out.push_back(g.size());
  return out;
}

void StochasticModel::freeze_prior() {
  for (auto& g : groups_) g.freeze_prior();
}

std::vector<double> StochasticModel::flat_params() const {
  std::vector<double> out;
  for (const auto& g : groups_) {
    out.insert(out.end(), g.mean().begin(), g.mean().end());
    out.insert(out.end(), g.raw_dev().begin(), g.raw_dev().end());
  }
  return out;
}

void StochasticModel::set_flat_params(std::span<const double> flat) {
  std::size_t pos = 0;
  for (auto& g : groups_) {
    if (pos + 2 * g.size() > flat.size()) throw std::invalid_argument("flat parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), g.size(), g.mean().begin());
    pos += g.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), g.size(), g.raw_dev().begin());
    pos += g.size();
  }
  if (pos != flat.size()) throw std::invalid_argument("flat parameter vector too long");
}

std::vector<double> StochasticModel::flatten(const grad::ParamGrads& grads) {
  std::vector<double> out;
  for (const auto& g : grads) {
    out.insert(out.end(), g.d_mean.begin(), g.d_mean.end());
    out.insert(out.end(), g.d_raw_dev.begin(), g.d_raw_dev.end());
  }
  return out;
}

void StochasticModel::save(std::ostream& out) const {
  out << kSnapshotHeader << '\n';
  out << "spec widths=";
  for (std::size_t i = 0; i < spec_.layer_widths.size(); ++i) out << (i ? "," : "") << spec_.layer_widths[i];
  out << " activation=relu dropout=" << std::setprecision(17) << spec_.dropout_prob << '\n';
  auto write_array = [&out](const char* name, std::span<const double> v) {
    out << name << ' ' << v.size();
    for (double x : v) out << ' ' << x;
    out << '\n';
  };
  out << std::setprecision(17);
  for (std::size_t l = 0; l < groups_.size(); ++l) {
    const auto& g = groups_[l];
    out << "layer " << l << " out=" << g.out_dim() << " in=" << g.in_dim() << '\n';
    write_array("mean", g.mean());
    write_array("rho", g.raw_dev());
    write_array("prior_mean", g.prior_mean());
    write_array("prior_sigma", g.prior_sigma());
  }
  if (provenance.data_free()) {
    out << "provenance none\n";
  } else {
    out << "provenance " << std::hex << provenance.source_hash << std::dec << ' ' << provenance.indices.size();
    for (std::size_t k : provenance.indices) out << ' ' << k;
    out << '\n';
  }
}

void StochasticModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model snapshot " + path.string());
  save(out);
  if (!out) throw std::runtime_error("failed writing model snapshot " + path.string());
}

StochasticModel StochasticModel::load(std::istream& in) {
  auto fail = [](const std::string& why) -> std::runtime_error {
    return std::runtime_error("model snapshot: " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != kSnapshotHeader) throw fail("missing header");
  if (!std::getline(in, line)) throw fail("missing spec line");
  ModelSpec spec;
  {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word != "spec") throw fail("malformed spec line");
    while (ss >> word) {
      const auto eq = word.find('=');
      if (eq == std::string::npos) throw fail("malformed spec entry '" + word + "'");
      const std::string key = word.substr(0, eq);
      const std::string val = word.substr(eq + 1);
      if (key == "widths") {
        std::istringstream ws(val);
        std::string tok;
        while (std::getline(ws, tok, ',')) spec.layer_widths.push_back(std::stoul(tok));
      } else if (key == "activation") {
        if (val != "relu") throw fail("unsupported activation " + val);
      } else if (key == "dropout") {
        spec.dropout_prob = std::stod(val);
      }
    }
  }
  StochasticModel model(spec);
  auto read_array = [&](const char* name, std::size_t expected) {
    std::string tag;
    std::size_t n = 0;
    if (!(in >> tag >> n) || tag != name || n != expected) throw fail(std::string("bad array ") + name);
    std::vector<double> v(n);
    for (double& x : v) {
      if (!(in >> x)) throw fail(std::string("truncated array ") + name);
    }
    return v;
  };
  for (std::size_t l = 0; l < model.groups_.size(); ++l) {
    auto& g = model.groups_[l];
    std::string tag, out_s, in_s;
    std::size_t idx = 0;
    if (!(in >> tag >> idx >> out_s >> in_s) || tag != "layer" || idx != l) throw fail("bad layer header");
    if (out_s != "out=" + std::to_string(g.out_dim()) || in_s != "in=" + std::to_string(g.in_dim())) {
      throw fail("layer shape disagrees with spec");
    }
    auto mean = read_array("mean", g.size());
    auto rho = read_array("rho", g.size());
    std::copy(mean.begin(), mean.end(), g.mean().begin());
    std::copy(rho.begin(), rho.end(), g.raw_dev().begin());
    auto pm = read_array("prior_mean", g.size());
    auto ps = read_array("prior_sigma", g.size());
    g.set_prior(std::move(pm), std::move(ps));
  }
  std::string tag, first;
  if (!(in >> tag >> first) || tag != "provenance") throw fail("missing provenance line");
  if (first != "none") {
    model.provenance.source_hash = std::stoull(first, nullptr, 16);
    std::size_t n = 0;
    if (!(in >> n)) throw fail("bad provenance count");
    model.provenance.indices.resize(n);
    for (auto& k : model.provenance.indices) {
      if (!(in >> k)) throw fail("truncated provenance");
    }
  }
  return model;
}

StochasticModel StochasticModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model snapshot " + path.string());
  return load(in);
}

std::vector<double> forward_hidden(std::span<const double> x, std::span<const std::vector<double>> hidden_theta,
                                   const ModelSpec& spec) {
  if (x.size() != spec.inputs()) throw std::invalid_argument("input width does not match the model");
  if (hidden_theta.size() != spec.hidden_count()) throw std::invalid_argument("need one theta per hidden layer");
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < hidden_theta.size(); ++l) {
    const std::size_t in = spec.layer_widths[l];
    const std::size_t out = spec.layer_widths[l + 1];
    if (hidden_theta[l].size() != out * in + out) throw std::invalid_argument("hidden theta shape mismatch");
    if (l > 0) relu_inplace(cur);
    affine_into(hidden_theta[l], cur, in, out, next);
    std::swap(cur, next);
  }
  return cur;
}

std::vector<double> forward_full(std::span<const double> x, std::span<const std::vector<double>> theta,
                                 const ModelSpec& spec) {
  if (theta.size() != spec.layer_count()) throw std::invalid_argument("need one theta per layer");
  std::vector<double> h = forward_hidden(x, theta.first(spec.hidden_count()), spec);
  relu_inplace(h);
  std::vector<double> f;
  affine_into(theta.back(), h, spec.layer_widths[spec.layer_count() - 1], spec.classes(), f);
  return f;
}

std::vector<double> relu(std::span<const double> h) {
  std::vector<double> out(h.begin(), h.end());
  relu_inplace(out);
  return out;
}

std::vector<double> apply_dropout(std::span<const double> h, double prob, RngStream& rng) {
  if (!(prob >= 0.0 && prob < 1.0)) throw std::invalid_argument("dropout probability must lie in [0,1)");
  std::vector<double> out(h.begin(), h.end());
  if (prob == 0.0) return out;
  const double keep_scale = 1.0 / (1.0 - prob);
  for (double& x : out) x = rng.uniform() < prob ? 0.0 : x * keep_scale;
  return out;
}

std::vector<std::vector<double>> sample_all(const StochasticModel& model, const RngStream& rng) {
  std::vector<std::vector<double>> theta;
  for (std::size_t l = 0; l < model.groups().size(); ++l) {
    RngStream r = rng.derive(StreamTag::kFullSample, {l});
    theta.push_back(sample_gaussian(model.groups()[l], r).theta);
  }
  return theta;
}

double exact_misclassification(const StochasticModel& model, const LabelledDataset& data,
                               std::span<const std::vector<double>> theta) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const ModelSpec& spec = model.spec();
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  if (theta.size() != spec.layer_count()) throw std::invalid_argument("theta does not match the model");
  RowMatrix act = Eigen::Map<const RowMatrix>(data.inputs.data(), static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(spec.inputs()));
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.layer_widths[l]);
    const auto out = static_cast<Eigen::Index>(spec.layer_widths[l + 1]);
    if (theta[l].size() != static_cast<std::size_t>(out * in + out)) throw std::invalid_argument("theta size mismatch");
    const Eigen::Map<const RowMatrix> w(theta[l].data(), out, in);
    const Eigen::Map<const Eigen::RowVectorXd> b(theta[l].data() + out * in, out);
    RowMatrix next = act * w.transpose();
    next.rowwise() += b;
    if (l + 1 < spec.layer_count()) next = next.cwiseMax(0.0);
    act = std::move(next);
  }
  std::size_t errors = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t y = data.labels[k].index();
    const auto row = act.row(static_cast<Eigen::Index>(k));
    bool wrong = false;
    for (Eigen::Index i = 0; i < row.size() && !wrong; ++i) wrong = static_cast<std::size_t>(i) != y && row(i) >= row(y);
    errors += wrong ? 1 : 0;
  }
  return static_cast<double>(errors) / static_cast<double>(n);
}

ModelVars bind_model(grad::Tape& tape, const StochasticModel& model) {
  ModelVars vars;
  const auto& groups = model.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto m = groups[g].mean();
    const auto r = groups[g].raw_dev();
    vars.mean.push_back(tape.leaf({m.begin(), m.end()}, g, grad::LeafField::kMean));
    vars.rho.push_back(tape.leaf({r.begin(), r.end()}, g, grad::LeafField::kRawDev));
    vars.sigma.push_back(grad::sigma_of_rho(tape, vars.rho.back()));
  }
  return vars;
}

grad::Var record_hidden(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model,
                        const LabelledDataset& data, std::span<const std::size_t> rows, const RngStream& rng,
                        double dropout) {
  const ModelSpec& spec = model.spec();
  if (data.dim != spec.inputs()) throw std::invalid_argument("dataset width does not match the model");
  const std::size_t batch = rows.size();
  std::vector<double> x;
  x.reserve(batch * data.dim);
  for (std::size_t r : rows) {
    const auto xi = data.input(r);
    x.insert(x.end(), xi.begin(), xi.end());
  }
  grad::Var cur = tape.constant(std::move(x));
  for (std::size_t l = 0; l < spec.hidden_count(); ++l) {
    const auto& group = model.groups()[l];
    RngStream sample_rng = rng.derive(StreamTag::kHiddenSample, {l});
    std::vector<double> zeta(group.size());
    for (double& z : zeta) z = sample_rng.normal();
    const grad::Var theta = grad::reparam(tape, vars.mean[l], vars.sigma[l], std::move(zeta));
    const grad::Var pre = grad::affine(tape, theta, cur, batch, group.in_dim(), group.out_dim());
    cur = grad::relu(tape, pre);
    if (dropout > 0.0) {
      RngStream drop_rng = rng.derive(StreamTag::kDropout, {l});
      std::vector<double> ones(batch * group.out_dim(), 1.0);
      cur = grad::scale(tape, cur, apply_dropout(ones, dropout, drop_rng));
    }
  }
  return cur;
}

grad::Var record_conditional_moments(grad::Tape& tape, grad::Var phi, grad::Var out_mean, grad::Var out_sigma,
                                     std::size_t batch, std::size_t width, std::size_t classes) {
  const auto ph = tape.value(phi);
  const auto mean = tape.value(out_mean);
  const auto sigma = tape.value(out_sigma);
  const std::size_t nw = classes * width;
  if (ph.size() != batch * width || mean.size() != nw + classes || sigma.size() != nw + classes) {
    throw std::invalid_argument("conditional moments: shape mismatch");
  }
  std::vector<double> mv(2 * batch * classes);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = ph.data() + b * width;
    for (std::size_t i = 0; i < classes; ++i) {
      double m = mean[nw + i];
      double v = sigma[nw + i] * sigma[nw + i];
      for (std::size_t j = 0; j < width; ++j) {
        m += mean[i * width + j] * p[j];
        const double s = sigma[i * width + j] * p[j];
        v += s * s;
      }
      mv[b * classes + i] = m;
      mv[batch * classes + b * classes + i] = v;
    }
  }
  return tape.record(std::move(mv), {phi, out_mean, out_sigma},
                     [=](grad::Tape& t, std::span<const double> g) {
                       const auto ph2 = t.value(phi);
                       const auto mean2 = t.value(out_mean);
                       const auto sigma2 = t.value(out_sigma);
                       const double* gm = g.data();
                       const double* gv = g.data() + batch * classes;
                       if (t.requires_grad(out_mean)) {
                         auto dm = t.adjoint(out_mean);
                         for (std::size_t b = 0; b < batch; ++b) {
                           const double* p = ph2.data() + b * width;
                           for (std::size_t i = 0; i < classes; ++i) {
                             const double gi = gm[b * classes + i];
                             for (std::size_t j = 0; j < width; ++j) dm[i * width + j] += gi * p[j];
                             dm[nw + i] += gi;
                           }
                         }
                       }
                       if (t.requires_grad(out_sigma)) {
                         auto ds = t.adjoint(out_sigma);
                         for (std::size_t b = 0; b < batch; ++b) {
                           const double* p = ph2.data() + b * width;
                           for (std::size_t i = 0; i < classes; ++i) {
                             const double gi = 2.0 * gv[b * classes + i];
                             for (std::size_t j = 0; j < width; ++j) {
                               ds[i * width + j] += gi * sigma2[i * width + j] * p[j] * p[j];
                             }
                             ds[nw + i] += gi * sigma2[nw + i];
                           }
                         }
                       }
                       if (t.requires_grad(phi)) {
                         auto dp = t.adjoint(phi);
                         for (std::size_t b = 0; b < batch; ++b) {
                           const double* p = ph2.data() + b * width;
                           for (std::size_t i = 0; i < classes; ++i) {
                             const double gmi = gm[b * classes + i];
                             const double gvi = 2.0 * gv[b * classes + i];
                             for (std::size_t j = 0; j < width; ++j) {
                               const double s = sigma2[i * width + j];
                               dp[b * width + j] += gmi * mean2[i * width + j] + gvi * s * s * p[j];
                             }
                           }
                         }
                       }
                     });
}

namespace {

EstimatorResult binary_closed_form(const ConditionalHead& head, ClassLabel y) {
  EstimatorResult r;
  const std::size_t self = y.index();
  const std::size_t other = 1 - self;
  const double total = head.var[0] + head.var[1];
  const bool active = total > kVarianceFloor;
  const double s = std::sqrt(active ? total : kVarianceFloor);
  const double z = (head.mean[other] - head.mean[self]) / s;
  r.value = std_normal_cdf(z);
  r.second_moment = r.value * r.value;
  r.d_mean.assign(2, 0.0);
  r.d_var.assign(2, 0.0);
  const double pdf = std_normal_pdf(z);
  r.d_mean[other] = pdf / s;
  r.d_mean[self] = -pdf / s;
  if (active) {
    r.d_var[0] = r.d_var[1] = -pdf * z / (2.0 * total);
  }
  return r;
}

}  // namespace

BatchEstimate batch_error_estimate(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model,
                                   const LabelledDataset& data, std::span<const std::size_t> rows,
                                   const RngStream& rng, const BatchOptions& options) {
  if (rows.empty()) throw std::invalid_argument("empty batch");
  if (options.repeats == 0) throw std::invalid_argument("repeats must be >= 1");
  const ModelSpec& spec = model.spec();
  const std::size_t batch = rows.size();
  const std::size_t q = spec.classes();
  const std::size_t width = spec.layer_widths[spec.layer_count() - 1];
  const std::size_t last = spec.layer_count() - 1;
  if (options.estimator == ErrorEstimator::kBinaryClosedForm && q != 2) {
    throw std::invalid_argument("closed-form estimator needs q = 2");
  }

  const grad::Var phi = record_hidden(tape, vars, model, data, rows, rng, options.dropout);
  const grad::Var mv = record_conditional_moments(tape, phi, vars.mean[last], vars.sigma[last], batch, width, q);
  const auto mvv = tape.value(mv);

  std::vector<double> values(batch);
  std::vector<double> d_mv(2 * batch * q);
  parallel_for(batch, [&](std::size_t b) {
    ConditionalHead head;
    head.mean.assign(mvv.begin() + static_cast<std::ptrdiff_t>(b * q),
                     mvv.begin() + static_cast<std::ptrdiff_t>((b + 1) * q));
    head.var.assign(mvv.begin() + static_cast<std::ptrdiff_t>((batch + b) * q),
                    mvv.begin() + static_cast<std::ptrdiff_t>((batch + b + 1) * q));
    const ClassLabel y = data.labels[rows[b]];
    EstimatorResult r;
    if (options.estimator == ErrorEstimator::kBinaryClosedForm) {
      r = binary_closed_form(head, y);
    } else {
      r.d_mean.assign(q, 0.0);
      r.d_var.assign(q, 0.0);
      for (std::size_t rep = 0; rep < options.repeats; ++rep) {
        RngStream est_rng = rng.derive(StreamTag::kEstimator, {rows[b], rep});
        const EstimatorResult one = options.estimator == ErrorEstimator::kL1 ? estimator_l1(head, y, est_rng)
                                                                             : estimator_l2(head, y, est_rng);
        r.value += one.value;
        for (std::size_t i = 0; i < q; ++i) {
          r.d_mean[i] += one.d_mean[i];
          r.d_var[i] += one.d_var[i];
        }
      }
      const double inv_rep = 1.0 / static_cast<double>(options.repeats);
      r.value *= inv_rep;
      for (std::size_t i = 0; i < q; ++i) {
        r.d_mean[i] *= inv_rep;
        r.d_var[i] *= inv_rep;
      }
    }
    values[b] = r.value;
    std::copy(r.d_mean.begin(), r.d_mean.end(), d_mv.begin() + static_cast<std::ptrdiff_t>(b * q));
    std::copy(r.d_var.begin(), r.d_var.end(), d_mv.begin() + static_cast<std::ptrdiff_t>((batch + b) * q));
  });
  long double total = 0.0L;
  for (double v : values) total += v;
  const double inv = 1.0 / static_cast<double>(batch);
  const double value = static_cast<double>(total) * inv;

  const grad::Var out = tape.record({value}, {mv}, [mv, inv, d_mv = std::move(d_mv)](grad::Tape& t, std::span<const double> g) {
    auto a = t.adjoint(mv);
    const double scale = g[0] * inv;
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * d_mv[k];
  });
  return {value, out};
}

double batch_error_estimate(const StochasticModel& model, const LabelledDataset& data,
                            std::span<const std::size_t> rows, const RngStream& rng, const BatchOptions& options) {
  // Without dropout every random draw is keyed by layer or row id, so chunks
  // reproduce the single-pass value while bounding the tape's memory.
  if (rows.empty()) throw std::invalid_argument("empty batch");
  constexpr std::size_t kChunk = 512;
  const std::size_t chunk = options.dropout > 0.0 ? rows.size() : kChunk;
  long double total = 0.0L;
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const auto part = rows.subspan(begin, std::min(chunk, rows.size() - begin));
    grad::Tape tape;
    const ModelVars vars = bind_model(tape, model);
    total += static_cast<long double>(batch_error_estimate(tape, vars, model, data, part, rng, options).value) *
             static_cast<long double>(part.size());
  }
  return static_cast<double>(total / static_cast<long double>(rows.size()));
}

grad::Var record_kl(grad::Tape& tape, const ModelVars& vars, const StochasticModel& model) {
  const double value = model.kl();
  auto grads = kl_diag_gauss_grad(model.groups());
  std::vector<grad::Var> inputs;
  inputs.insert(inputs.end(), vars.mean.begin(), vars.mean.end());
  inputs.insert(inputs.end(), vars.sigma.begin(), vars.sigma.end());
  return tape.record({value}, inputs, [vars, grads = std::move(grads)](grad::Tape& t, std::span<const double> g) {
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto dm = t.adjoint(vars.mean[k]);
      auto ds = t.adjoint(vars.sigma[k]);
      for (std::size_t i = 0; i < dm.size(); ++i) {
        dm[i] += g[0] * grads[k].d_mean[i];
        ds[i] += g[0] * grads[k].d_sigma[i];
      }
    }
  });
}

}  // namespace condgauss
