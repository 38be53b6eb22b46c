#include "condgauss/cli.hpp"

#include <algorithm>
#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "condgauss/certify.hpp"
#include "condgauss/network.hpp"
#include "condgauss/parallel.hpp"
#include "condgauss/validators.hpp"

namespace condgauss::cli {

namespace pt = boost::property_tree;

namespace {

std::string lower(std::string s) {
  boost::algorithm::to_lower(s);
  boost::algorithm::trim(s);
  return s;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& value) {
  if (const auto v = tree.get_optional<std::string>(key)) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        value = boost::algorithm::trim_copy(*v);
      } else {
        value = tree.get<T>(key);
      }
    } catch (const pt::ptree_error&) {
      throw ConfigError("bad value for " + key + ": '" + *v + "'");
    }
  }
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, std::optional<T>& value) {
  if (tree.get_optional<std::string>(key)) {
    T v{};
    read(tree, key, v);
    value = v;
  }
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::is_any_of(","));
  std::vector<std::size_t> out;
  for (auto& p : parts) {
    boost::algorithm::trim(p);
    if (p.empty()) continue;
    try {
      out.push_back(std::stoul(p));
    } catch (const std::exception&) {
      throw ConfigError("bad hidden width '" + p + "'");
    }
  }
  return out;
}

void read_phase(const pt::ptree& tree, const std::string& section, PhaseConfig& p) {
  const auto child = tree.get_child_optional(section);
  if (!child) return;
  const pt::ptree& t = *child;
  read(t, "method", p.method);
  read(t, "objective", p.objective);
  p.method = lower(p.method);
  p.objective = lower(p.objective);
  read(t, "kappa", p.kappa);
  read(t, "delta", p.delta);
  read(t, "lambda", p.lambda);
  std::string schedule;
  read(t, "schedule", schedule);
  if (!schedule.empty()) p.schedule = parse_schedule(schedule);
  read(t, "momentum", p.momentum);
  read(t, "batch_size", p.batch_size);
  read(t, "repeats", p.repeats);
  read(t, "estimator", p.estimator);
  p.estimator = lower(p.estimator);
  read(t, "dropout", p.dropout);
  read(t, "lambda_learning_rate", p.lambda_learning_rate);
}

void write_phase(std::ostream& out, const std::string& section, const PhaseConfig& p) {
  out << '[' << section << "]\n"
      << "method = " << p.method << '\n'
      << "objective = " << p.objective << '\n'
      << "kappa = " << p.kappa << '\n'
      << "delta = " << p.delta << '\n';
  if (p.lambda) out << "lambda = " << *p.lambda << '\n';
  out << "schedule = ";
  for (std::size_t k = 0; k < p.schedule.size(); ++k) {
    out << (k ? ", " : "") << p.schedule[k].epochs << ':' << p.schedule[k].learning_rate;
  }
  out << '\n'
      << "momentum = " << p.momentum << '\n'
      << "batch_size = " << p.batch_size << '\n'
      << "repeats = " << p.repeats << '\n'
      << "estimator = " << p.estimator << '\n'
      << "dropout = " << p.dropout << '\n'
      << "lambda_learning_rate = " << p.lambda_learning_rate << "\n\n";
}

ErrorEstimator parse_estimator(const std::string& name) {
  if (name == "l1") return ErrorEstimator::kL1;
  if (name == "l2") return ErrorEstimator::kL2;
  if (name == "binary") return ErrorEstimator::kBinaryClosedForm;
  throw ConfigError("unknown estimator '" + name + "' (expected l1, l2 or binary)");
}

bounds::BoundSpec phase_bound(const PhaseConfig& p) {
  bounds::BoundSpec spec;
  try {
    spec.kind = bounds::parse_bound_kind(p.objective);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  spec.kappa = p.kappa;
  spec.delta = p.delta;
  spec.lambda = p.lambda;
  if (spec.kind == bounds::BoundKind::kLambda && !spec.lambda) spec.lambda = 0.5;
  return spec;
}

TrainConfig phase_train_config(const PhaseConfig& p, std::uint64_t seed) {
  TrainConfig c;
  c.schedule = p.schedule;
  c.momentum = p.momentum;
  c.batch_size = p.batch_size;
  c.repeats = p.repeats;
  c.seed = seed;
  c.estimator = parse_estimator(p.estimator);
  c.lambda_learning_rate = p.lambda_learning_rate;
  return c;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!std::filesystem::exists(path)) throw ConfigError(what + " not found: " + path);
}

ModelSpec model_spec(const RunConfig& cfg, const LabelledDataset& data) {
  ModelSpec spec;
  spec.layer_widths.push_back(data.dim);
  spec.layer_widths.insert(spec.layer_widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  spec.layer_widths.push_back(data.classes);
  spec.dropout_prob = cfg.prior.dropout;
  return spec;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t purpose) {
  RngStream r = RngStream(seed).derive({purpose});
  return r();
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<Stage> parse_schedule(const std::string& text) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::is_any_of(","));
  std::vector<Stage> out;
  for (auto& part : parts) {
    boost::algorithm::trim(part);
    if (part.empty()) continue;
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule entry '" + part + "' must be epochs:learning_rate");
    try {
      std::size_t used = 0;
      Stage s;
      const std::string epochs = boost::algorithm::trim_copy(part.substr(0, colon));
      const std::string rate = boost::algorithm::trim_copy(part.substr(colon + 1));
      s.epochs = std::stoul(epochs, &used);
      if (used != epochs.size()) throw std::invalid_argument(epochs);
      s.learning_rate = std::stod(rate, &used);
      if (used != rate.size()) throw std::invalid_argument(rate);
      out.push_back(s);
    } catch (const std::exception&) {
      throw ConfigError("bad schedule entry '" + part + "'");
    }
  }
  return out;
}

RunConfig RunConfig::parse(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  if (const auto d = tree.get_child_optional("data")) {
    read(*d, "source", cfg.data.source);
    cfg.data.source = lower(cfg.data.source);
    read(*d, "images", cfg.data.images);
    read(*d, "labels", cfg.data.labels);
    read(*d, "test_images", cfg.data.test_images);
    read(*d, "test_labels", cfg.data.test_labels);
    read(*d, "classes", cfg.data.classes);
    read(*d, "per_class", cfg.data.per_class);
    read(*d, "heldout_per_class", cfg.data.heldout_per_class);
    read(*d, "dim", cfg.data.dim);
    read(*d, "separation", cfg.data.separation);
    read(*d, "seed", cfg.data.seed);
    read(*d, "prior_fraction", cfg.data.prior_fraction);
  }
  if (const auto m = tree.get_child_optional("model")) {
    std::string hidden;
    read(*m, "hidden", hidden);
    if (!hidden.empty()) cfg.model.hidden = parse_widths(hidden);
    read(*m, "sigma0", cfg.model.sigma0);
  }
  read_phase(tree, "prior", cfg.prior);
  read_phase(tree, "posterior", cfg.posterior);
  if (const auto c = tree.get_child_optional("certify")) {
    read(*c, "n_draws", cfg.certify.n_draws);
    read(*c, "delta", cfg.certify.delta);
    read(*c, "delta_prime", cfg.certify.delta_prime);
  }
  if (const auto r = tree.get_child_optional("run")) {
    read(*r, "seed", cfg.seed);
    read(*r, "output_dir", cfg.output_dir);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in);
}

void RunConfig::validate(bool check_paths) const {
  if (data.source == "mnist") {
    if (check_paths) {
      require_file(data.images, "training images");
      require_file(data.labels, "training labels");
      if (!data.test_images.empty() || !data.test_labels.empty()) {
        require_file(data.test_images, "test images");
        require_file(data.test_labels, "test labels");
      }
    }
  } else if (data.source == "synth") {
    if (data.classes < 2) throw ConfigError("synthetic data needs classes >= 2");
    if (data.per_class == 0 || data.dim == 0) throw ConfigError("synthetic data needs per_class and dim >= 1");
    if (!(data.separation >= 0.0)) throw ConfigError("separation must be non-negative");
  } else {
    throw ConfigError("unknown data source '" + data.source + "' (expected synth or mnist)");
  }
  if (model.hidden.empty()) throw ConfigError("model needs at least one hidden layer");
  if (std::find(model.hidden.begin(), model.hidden.end(), 0) != model.hidden.end()) {
    throw ConfigError("hidden widths must be positive");
  }
  if (!(model.sigma0 > 0.0)) throw ConfigError("sigma0 must be positive");

  if (prior.method != "none" && prior.method != "erm" && prior.method != "invkl") {
    throw ConfigError("prior method must be none, erm or invkl");
  }
  const bool trained_prior = prior.method != "none";
  if (trained_prior && !(data.prior_fraction > 0.0 && data.prior_fraction < 1.0)) {
    throw ConfigError("a trained prior needs prior_fraction in (0,1)");
  }
  if (!trained_prior && data.prior_fraction != 0.0) throw ConfigError("prior_fraction needs a trained prior");
  if (trained_prior && prior.schedule.empty()) throw ConfigError("prior schedule is empty");
  if (posterior.method != "condgauss" && posterior.method != "baseline") {
    throw ConfigError("posterior method must be condgauss or baseline");
  }
  if (!(certify.delta > 0.0 && certify.delta < 1.0) || !(certify.delta_prime > 0.0 && certify.delta_prime < 1.0)) {
    throw ConfigError("certify delta and delta_prime must lie in (0,1)");
  }
  if (!(certify.delta + certify.delta_prime < 1.0)) throw ConfigError("delta + delta_prime must be below 1");
  if (certify.n_draws == 0) throw ConfigError("n_draws must be >= 1");
  try {
    if (trained_prior) prior_train_config(*this).validate();
    posterior_train_config(*this).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

void RunConfig::write(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "[data]\n"
      << "source = " << data.source << '\n';
  if (data.source == "mnist") {
    out << "images = " << data.images << '\n' << "labels = " << data.labels << '\n';
    if (!data.test_images.empty()) {
      out << "test_images = " << data.test_images << '\n' << "test_labels = " << data.test_labels << '\n';
    }
  } else {
    out << "classes = " << data.classes << '\n'
        << "per_class = " << data.per_class << '\n'
        << "heldout_per_class = " << data.heldout_per_class << '\n'
        << "dim = " << data.dim << '\n'
        << "separation = " << data.separation << '\n'
        << "seed = " << data.seed.value_or(seed) << '\n';
  }
  out << "prior_fraction = " << data.prior_fraction << "\n\n";
  out << "[model]\nhidden = ";
  for (std::size_t k = 0; k < model.hidden.size(); ++k) out << (k ? "," : "") << model.hidden[k];
  out << "\nsigma0 = " << model.sigma0 << "\n\n";
  write_phase(out, "prior", prior);
  write_phase(out, "posterior", posterior);
  out << "[certify]\n"
      << "n_draws = " << certify.n_draws << '\n'
      << "delta = " << certify.delta << '\n'
      << "delta_prime = " << certify.delta_prime << "\n\n"
      << "[run]\n"
      << "seed = " << seed << '\n'
      << "output_dir = " << output_dir << '\n';
  out.precision(old);
}

TrainConfig prior_train_config(const RunConfig& cfg) {
  TrainConfig c = phase_train_config(cfg.prior, derived_seed(cfg.seed, 1));
  c.phase = TrainPhase::kPrior;
  c.dropout = cfg.prior.dropout;
  if (cfg.prior.method == "erm") {
    c.objective.reset();
  } else {
    bounds::BoundSpec spec = phase_bound(cfg.prior);
    if (spec.kind != bounds::BoundKind::kInvKl) throw ConfigError("a bound-trained prior uses the invkl objective");
    c.objective = spec;
  }
  return c;
}

TrainConfig posterior_train_config(const RunConfig& cfg) {
  TrainConfig c = phase_train_config(cfg.posterior, derived_seed(cfg.seed, 2));
  c.phase = cfg.posterior.method == "baseline" ? TrainPhase::kBaseline : TrainPhase::kPosterior;
  if (cfg.posterior.dropout != 0.0) throw ConfigError("posterior training never uses dropout");
  c.objective = phase_bound(cfg.posterior);
  return c;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData p;
  if (cfg.data.source == "mnist") {
    p.whole = load_mnist_idx(cfg.data.images, cfg.data.labels);
    if (!cfg.data.test_images.empty()) p.heldout = load_mnist_idx(cfg.data.test_images, cfg.data.test_labels);
  } else {
    const BlobGenerator gen(cfg.data.classes, cfg.data.dim, cfg.data.separation, cfg.data.seed.value_or(cfg.seed));
    p.whole = gen.sample(cfg.data.per_class, 0);
    if (cfg.data.heldout_per_class > 0) p.heldout = gen.sample(cfg.data.heldout_per_class, 1);
  }
  if (cfg.prior.method != "none") {
    PriorBoundSplit split = split_prior_bound(p.whole, cfg.data.prior_fraction, derived_seed(cfg.seed, 3));
    p.prior = std::move(split.prior);
    p.bound = std::move(split.bound);
    p.split_hash = split.fingerprint;
  } else {
    p.bound = p.whole;
    p.bound.split = SplitTag::kBound;
    p.split_hash = split_fingerprint(p.prior, p.bound);
  }
  return p;
}

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = RunConfig::load(config_path);
    cfg.validate();
    const PreparedData data = prepare_data(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    {
      std::ofstream resolved(dir / "config.ini");
      cfg.write(resolved);
    }

    const ModelSpec spec = model_spec(cfg, data.whole);
    StochasticModel model = StochasticModel::initialize(spec, cfg.model.sigma0, RngStream(cfg.seed));
    TrainLog prior_log;
    if (cfg.prior.method != "none") {
      out << "training prior on " << data.prior.size() << " examples\n";
      TrainResult r = train_prior(std::move(model), data.prior, prior_train_config(cfg));
      model = std::move(r.model);
      prior_log = std::move(r.log);
    }
    model.save(dir / "prior.model");
    prior_log.write_csv((dir / "train_prior.csv").string());

    out << "training posterior on " << data.bound.size() << " examples\n";
    const TrainConfig post = posterior_train_config(cfg);
    TrainResult r = post.phase == TrainPhase::kBaseline ? train_surrogate_baseline(model, data.bound, post)
                                                        : train_condgauss(model, data.bound, post);
    r.model.save(dir / "posterior.model");
    r.log.write_csv((dir / "train_posterior.csv").string());

    const Certificate cert = final_certificate(r.model, data.bound, cfg.certify.n_draws, cfg.certify.delta,
                                               cfg.certify.delta_prime,
                                               RngStream(cfg.seed).derive(StreamTag::kCertify), data.split_hash);
    write_text(dir / "certificate.txt", cert.to_text());

    std::ostringstream manifest;
    manifest << std::setprecision(17) << "seed=" << cfg.seed << '\n'
             << "input_hash=" << hex(data.whole.source_hash) << '\n'
             << "split_hash=" << hex(data.split_hash) << '\n'
             << "prior_examples=" << data.prior.size() << '\n'
             << "bound_examples=" << data.bound.size() << '\n'
             << "best_epoch=" << r.log.best_epoch << '\n';
    if (r.lambda) manifest << "lambda=" << *r.lambda << '\n';
    write_text(dir / "run.txt", manifest.str());

    out << "best epoch " << r.log.best_epoch << ", final_bound=" << std::setprecision(6) << cert.final_bound
        << (cert.saturated ? " (saturated)" : "") << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << '\n';
    return 1;
  }
}

int cmd_certify(const CertifyArgs& args, std::ostream& out, std::ostream& err) {
  try {
    RunConfig cfg = RunConfig::load(args.config_path);
    if (args.n_draws) cfg.certify.n_draws = *args.n_draws;
    if (args.delta) cfg.certify.delta = *args.delta;
    if (args.delta_prime) cfg.certify.delta_prime = *args.delta_prime;
    if (args.seed) cfg.seed = *args.seed;
    cfg.validate();
    const PreparedData data = prepare_data(cfg);
    const StochasticModel model = StochasticModel::load(std::filesystem::path(args.model_path));
    const Certificate cert = final_certificate(model, data.bound, cfg.certify.n_draws, cfg.certify.delta,
                                               cfg.certify.delta_prime,
                                               RngStream(cfg.seed).derive(StreamTag::kCertify), data.split_hash);
    const std::filesystem::path path =
        args.out_path.empty() ? std::filesystem::path(cfg.output_dir) / "certificate.txt" : std::filesystem::path(args.out_path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text(path, cert.to_text());
    out << cert.to_text() << "saturated=" << (cert.saturated ? "true" : "false") << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "certify: " << e.what() << '\n';
    return 1;
  }
}

int cmd_eval(const std::string& config_path, const std::string& model_path, std::size_t n_draws, std::ostream& out,
             std::ostream& err) {
  try {
    const RunConfig cfg = RunConfig::load(config_path);
    cfg.validate();
    const PreparedData data = prepare_data(cfg);
    if (data.heldout.size() == 0) throw ConfigError("no held-out data configured");
    const StochasticModel model = StochasticModel::load(std::filesystem::path(model_path));
    const double e = mc_empirical_error(model, data.heldout, n_draws, RngStream(cfg.seed).derive(StreamTag::kEval));
    out << std::setprecision(17) << "heldout_error=" << e << '\n' << "heldout_examples=" << data.heldout.size()
        << '\n' << "n_draws=" << n_draws << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << '\n';
    return 1;
  }
}

int cmd_check(bool corrupt_psi, std::ostream& out, std::ostream& err) {
  CheckOptions options;
  if (corrupt_psi) options.cdf = &corrupted_std_normal_cdf;
  const auto results = run_checks(options);
  print_check_table(out, results);
  const auto failed = std::count_if(results.begin(), results.end(), [](const CheckResult& r) { return !r.passed; });
  if (failed > 0) {
    err << failed << " check(s) failed\n";
    return 1;
  }
  return 0;
}

}  // namespace condgauss::cli
