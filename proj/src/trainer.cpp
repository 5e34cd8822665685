#include "mft/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace mft {

Method parse_method(const std::string& name) {
  static const std::map<std::string, Method> table{
      {"mft-full", Method::MftFull}, {"mft-dc", Method::MftDc}, {"mft-tw", Method::MftTw}, {"s", Method::S},
      {"mix", Method::Mix},          {"mtl", Method::Mtl},      {"adv", Method::Adv}};
  auto it = table.find(name);
  if (it == table.end()) fail(ErrorKind::Configuration, "unknown method '" + name + "'");
  return it->second;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::MftFull: return "mft-full";
    case Method::MftDc: return "mft-dc";
    case Method::MftTw: return "mft-tw";
    case Method::S: return "s";
    case Method::Mix: return "mix";
    case Method::Mtl: return "mtl";
    case Method::Adv: return "adv";
  }
  return "?";
}

bool is_mft(Method method) {
  return method == Method::MftFull || method == Method::MftDc || method == Method::MftTw;
}

Variant variant_of(Method method) {
  if (method == Method::MftDc) return Variant::DC;
  if (method == Method::MftTw) return Variant::TW;
  return Variant::Full;
}

Baseline baseline_of(Method method) {
  switch (method) {
    case Method::S: return Baseline::S;
    case Method::Mix: return Baseline::Mix;
    case Method::Mtl: return Baseline::MTL;
    case Method::Adv: return Baseline::Adv;
    default: return Baseline::None;
  }
}

CorruptionMode parse_corruption(const std::string& name) {
  if (name == "shuffle") return CorruptionMode::Shuffle;
  if (name == "uniform") return CorruptionMode::Uniform;
  if (name == "empirical") return CorruptionMode::Empirical;
  fail(ErrorKind::Configuration, "unknown corruption mode '" + name + "'");
}

std::string to_string(CorruptionMode mode) {
  switch (mode) {
    case CorruptionMode::Shuffle: return "shuffle";
    case CorruptionMode::Uniform: return "uniform";
    case CorruptionMode::Empirical: return "empirical";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::Configuration, "alpha must lie in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorKind::Configuration, "lambda must be >= 0");
  if (taps.empty()) fail(ErrorKind::Configuration, "at least one tapped layer is required");
  if (prototypes_per_class < 1) fail(ErrorKind::Configuration, "prototypes_per_class must be >= 1");
  if (batch_size < 1) fail(ErrorKind::Configuration, "batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::Configuration, "learning_rate must be positive");
  }
  if (!(adv_weight >= 0.0)) fail(ErrorKind::Configuration, "adv_weight must be >= 0");
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments, double lr, std::size_t step,
               const AdamHyper& hyper) {
  if (step == 0) fail(ErrorKind::Configuration, "adam_step: step counts from 1");
  if (moments.m.shape().empty() && moments.m.size() == 0) moments.m = Tensor(param.shape(), 0.0);
  if (moments.v.shape().empty() && moments.v.size() == 0) moments.v = Tensor(param.shape(), 0.0);
  if (grad.shape() != param.shape() || moments.m.shape() != param.shape() || moments.v.shape() != param.shape()) {
    fail(ErrorKind::Dimension, "adam_step: parameter " + shape_str(param.shape()) + ", gradient " +
                                   shape_str(grad.shape()) + ", moments " + shape_str(moments.m.shape()) + "/" +
                                   shape_str(moments.v.shape()));
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& m = moments.m[i];
    double& v = moments.v[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
    param[i] -= lr * (m / c1) / (std::sqrt(v / c2) + hyper.eps);
  }
}

void Adam::step(ParameterStore& params) {
  ++step_;
  for (const auto& [name, var] : params.entries()) {
    var->ensure_grad();
    adam_step(var->value, var->grad, moments_[name], lr_, step_, hyper_);
  }
}

// ---------------------------------------------------------------------------
// Training loop shared by every method

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const Example> examples, std::size_t batch_size,
                                                    bool stratified, Rng& rng) {
  std::vector<std::size_t> order;
  if (!stratified) {
    order.resize(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
  } else {
    // Round-robin over domains, each domain visited in its own shuffled order.
    std::map<int, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < examples.size(); ++i) by_domain[examples[i].domain].push_back(i);
    for (auto& [k, v] : by_domain) rng.shuffle(v);
    std::size_t longest = 0;
    for (const auto& [k, v] : by_domain) longest = std::max(longest, v.size());
    for (std::size_t r = 0; r < longest; ++r) {
      for (const auto& [k, v] : by_domain) {
        if (r < v.size()) order.push_back(v[r]);
      }
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  }
  return batches;
}

struct LoopSpec {
  std::string stage;
  int domain = -1;
  std::size_t epochs = 0;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  bool stratified = false;
  std::uint64_t batch_seed = 0;
  const std::vector<double>* weights = nullptr;  // per example, nullptr means 1

  bool corruption = false;
  double lambda = 0.0;
  std::vector<std::size_t> taps;
  CorruptionDistribution distribution;
  std::uint64_t corruption_seed = 0;

  bool adversarial = false;
  double adv_weight = 0.0;
  AdvLoss adv_loss = AdvLoss::Reversal;
  std::uint64_t adv_seed = 0;
};

void train_loop(EncoderState& state, std::span<const Example> examples, const LoopSpec& spec,
                std::vector<StepRecord>& trace, DataAccessLog* log) {
  if (spec.epochs == 0) return;
  if (examples.empty()) fail(ErrorKind::Configuration, spec.stage + ": no training examples");
  Rng batch_rng(spec.batch_seed);
  Rng corruption_rng(spec.corruption_seed);
  Rng adv_rng(spec.adv_seed);
  Adam adam(spec.learning_rate);
  state.params.zero_grad();
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(examples, spec.batch_size, spec.stratified, batch_rng)) {
      const TokenBatch batch = make_batch(examples, idx);
      if (log) {
        log->instance_ids.insert(log->instance_ids.end(), batch.instance_ids.begin(), batch.instance_ids.end());
        log->domains.insert(batch.domains.begin(), batch.domains.end());
      }
      std::vector<double> w(idx.size(), 1.0);
      if (spec.weights) {
        for (std::size_t i = 0; i < idx.size(); ++i) w[i] = (*spec.weights)[idx[i]];
      }
      const EncoderOutput out = encode(state, batch);
      Var tlc = loss_tlc(cls_feature(out), batch.labels, w, label_head(state));

      LossReport report;
      report.lambda = spec.lambda;
      report.l_tlc = tlc->value.item();
      Var total = tlc;
      if (spec.corruption) {
        const auto z = corrupt_labels(batch.domains, spec.distribution, corruption_rng);
        if (spec.lambda > 0.0) {
          SdcResult sdc = loss_sdc(state, out, batch.mask, spec.taps, batch.domains, z, w);
          report.l_sdc = sdc.loss->value.item();
          report.l_tdc_per_layer = sdc.per_layer;
          total = ops::add(tlc, ops::scale(sdc.loss, spec.lambda));
        } else {
          NoGradGuard no_grad;
          SdcResult sdc = loss_sdc(state, out, batch.mask, spec.taps, batch.domains, z, w);
          report.l_sdc = sdc.loss->value.item();
          report.l_tdc_per_layer = sdc.per_layer;
        }
      }
      if (spec.adversarial) {
        Var pooled = layer_pool(out, state.config.num_layers, batch.mask);
        const AffineHead head{state.param("adv.domain_head.weight"), state.param("adv.domain_head.bias")};
        Var adv;
        if (spec.adv_loss == AdvLoss::Reversal) {
          adv = loss_adversarial_multi(ops::linear(ops::gradient_reversal(pooled, 1.0), head.weight, head.bias),
                                       batch.domains);
        } else {
          adv = loss_flipped_multi(ops::linear(pooled, head.weight, head.bias), batch.domains, adv_rng);
        }
        total = ops::add(total, ops::scale(adv, spec.adv_weight));
      }
      report.total = total->value.item();
      backward(total);
      adam.step(state.params);
      state.params.zero_grad();
      trace.push_back({spec.stage, spec.domain, epoch, ++step, report});
    }
  }
}

std::vector<Example> domain_examples(std::span<const Example> examples, int domain) {
  std::vector<Example> out;
  for (const auto& ex : examples) {
    if (ex.domain == domain) out.push_back(ex);
  }
  return out;
}

void check_labels(std::span<const Example> examples, std::size_t num_classes) {
  for (const auto& ex : examples) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) {
      fail(ErrorKind::LabelSpace, "instance " + std::to_string(ex.id) + " has label " + std::to_string(ex.label) +
                                      " outside the model's " + std::to_string(num_classes) + " classes");
    }
  }
}

void check_domains(std::span<const Example> examples, std::size_t num_domains) {
  for (const auto& ex : examples) {
    if (ex.domain < 0 || static_cast<std::size_t>(ex.domain) >= num_domains) {
      fail(ErrorKind::Index, "instance " + std::to_string(ex.id) + " has domain " + std::to_string(ex.domain));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Meta fine-tuning

MetaModel mft_train(std::span<const Example> train, std::size_t num_domains, const EncoderState& initial,
                    const TrainConfig& config, DataAccessLog* log) {
  config.validate();
  if (num_domains < 2) fail(ErrorKind::Configuration, "meta fine-tuning needs at least two domains");
  if (train.empty()) fail(ErrorKind::Configuration, "meta fine-tuning needs training data");
  check_labels(train, initial.num_classes);
  check_domains(train, num_domains);

  MetaModel meta;
  {
    const Tensor embeddings = embed_examples(initial, train);
    std::vector<int> domains;
    std::vector<int> labels;
    for (const auto& ex : train) {
      domains.push_back(ex.domain);
      labels.push_back(ex.label);
    }
    meta.prototypes = prototypes_from_embeddings(embeddings, domains, labels, num_domains, initial.num_classes,
                                                 config.prototypes_per_class, derive_seed(config.seed, "prototypes"));
    meta.typicality =
        compute_typicality(train, embeddings, meta.prototypes, config.alpha, config.multi_prototype_mode);
  }
  std::vector<double> weights(train.size(), 1.0);
  if (config.variant != Variant::DC) {
    for (std::size_t i = 0; i < train.size(); ++i) weights[i] = meta.typicality.at(train[i].id).value;
  }

  EncoderState state = initial;
  state.add_domain_corruption_heads(num_domains, config.taps, config.seed);

  LoopSpec spec;
  spec.stage = "mft";
  spec.epochs = config.mft_epochs;
  spec.batch_size = config.batch_size;
  spec.learning_rate = config.learning_rate;
  spec.stratified = config.stratified_batches;
  spec.batch_seed = derive_seed(config.seed, "batches", 0);
  spec.weights = &weights;
  spec.corruption = true;
  spec.lambda = config.variant == Variant::TW ? 0.0 : config.lambda;
  spec.taps = config.taps;
  switch (config.corruption) {
    case CorruptionMode::Shuffle: spec.distribution = CorruptionDistribution::shuffle(); break;
    case CorruptionMode::Uniform: spec.distribution = CorruptionDistribution::uniform(num_domains); break;
    case CorruptionMode::Empirical: {
      std::vector<int> domains;
      for (const auto& ex : train) domains.push_back(ex.domain);
      spec.distribution = CorruptionDistribution::empirical(domains, num_domains);
      break;
    }
  }
  spec.corruption_seed = derive_seed(config.seed, "corruption");
  train_loop(state, train, spec, meta.trace, log);

  state.params.erase_prefix("mft.");
  state.taps.clear();
  meta.state = std::move(state);
  return meta;
}

DomainModel fine_tune(const MetaModel& meta, std::span<const Example> domain_train, int domain,
                      const TrainConfig& config, DataAccessLog* log) {
  config.validate();
  if (meta.state.has_domain_heads()) fail(ErrorKind::State, "fine-tuning needs a model with domain heads removed");
  for (const auto& ex : domain_train) {
    if (ex.domain != domain) {
      fail(ErrorKind::Configuration, "fine-tuning domain " + std::to_string(domain) + " received instance " +
                                         std::to_string(ex.id) + " of domain " + std::to_string(ex.domain));
    }
  }
  check_labels(domain_train, meta.state.num_classes);
  DomainModel model{domain, meta.state, {}};
  if (config.ft_epochs == 0) return model;
  if (config.reinit_label_head) model.state.reinitialize_label_head(derive_seed(config.seed, "ft-head", domain));
  LoopSpec spec;
  spec.stage = "ft";
  spec.domain = domain;
  spec.epochs = config.ft_epochs;
  spec.batch_size = config.batch_size;
  spec.learning_rate = config.learning_rate;
  spec.batch_seed = derive_seed(config.seed, "ft-batches", static_cast<std::uint64_t>(domain));
  train_loop(model.state, domain_train, spec, model.trace, log);
  return model;
}

// ---------------------------------------------------------------------------
// Baselines

const EncoderState& ModelSet::for_domain(int domain) const {
  if (models.empty()) fail(ErrorKind::State, "model set is empty");
  if (shared) return models.front();
  if (domain < 0 || static_cast<std::size_t>(domain) >= models.size()) {
    fail(ErrorKind::Lookup, "no model for domain " + std::to_string(domain));
  }
  return models[static_cast<std::size_t>(domain)];
}

ModelSet run_baseline(std::span<const Example> train, std::size_t num_domains, const EncoderState& initial,
                      const TrainConfig& config, DataAccessLog* log) {
  config.validate();
  check_labels(train, initial.num_classes);
  check_domains(train, num_domains);
  LoopSpec spec;
  spec.epochs = config.effective_baseline_epochs();
  spec.batch_size = config.batch_size;
  spec.learning_rate = config.learning_rate;
  spec.stratified = config.stratified_batches;
  spec.batch_seed = derive_seed(config.seed, "batches", 0);

  ModelSet set;
  switch (config.baseline) {
    case Baseline::S: {
      for (std::size_t k = 0; k < num_domains; ++k) {
        const auto slice = domain_examples(train, static_cast<int>(k));
        EncoderState state = initial;
        spec.stage = "train";
        spec.domain = static_cast<int>(k);
        spec.batch_seed = derive_seed(config.seed, "batches", k);
        if (!slice.empty()) train_loop(state, slice, spec, set.trace, log);
        set.models.push_back(std::move(state));
      }
      return set;
    }
    case Baseline::Mix:
    case Baseline::MTL: {
      EncoderState state = initial;
      spec.stage = config.baseline == Baseline::Mix ? "mix" : "mtl";
      train_loop(state, train, spec, set.trace, log);
      set.models.push_back(std::move(state));
      set.shared = true;
      return set;
    }
    case Baseline::Adv: {
      if (num_domains < 2) fail(ErrorKind::Configuration, "the adversarial baseline needs at least two domains");
      EncoderState state = initial;
      state.add_adversarial_head(num_domains, config.seed);
      spec.stage = "adv";
      spec.adversarial = true;
      spec.adv_weight = config.adv_weight;
      spec.adv_loss = config.adv_loss;
      spec.adv_seed = derive_seed(config.seed, "adversarial");
      train_loop(state, train, spec, set.trace, log);
      state.params.erase_prefix("adv.");
      set.models.push_back(std::move(state));
      set.shared = true;
      return set;
    }
    case Baseline::None: break;
  }
  fail(ErrorKind::Configuration, "run_baseline: no baseline kind selected");
}

MethodRun run_method(Method method, std::span<const Example> train, std::size_t num_domains,
                     const EncoderState& initial, TrainConfig config) {
  MethodRun run;
  if (!is_mft(method)) {
    config.baseline = baseline_of(method);
    run.models = run_baseline(train, num_domains, initial, config);
    return run;
  }
  config.variant = variant_of(method);
  run.meta = mft_train(train, num_domains, initial, config);
  run.models.trace = run.meta->trace;
  for (std::size_t k = 0; k < num_domains; ++k) {
    const auto slice = domain_examples(train, static_cast<int>(k));
    DomainModel dm = fine_tune(*run.meta, slice, static_cast<int>(k), config);
    run.models.trace.insert(run.models.trace.end(), dm.trace.begin(), dm.trace.end());
    run.models.models.push_back(std::move(dm.state));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation and probing

std::vector<int> predict(const EncoderState& state, std::span<const Example> examples, std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<int> predictions;
  predictions.reserve(examples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const TokenBatch batch = make_batch(examples, idx);
    const Tensor logits = label_logits(state, cls_feature(encode(state, batch)))->value;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      }
      predictions.push_back(static_cast<int>(best));
    }
  }
  return predictions;
}

namespace {

void finish(EvalResult& result) {
  double sum = 0.0;
  for (const auto& [k, n] : result.total) {
    result.per_domain[k] = static_cast<double>(result.correct[k]) / static_cast<double>(n);
    sum += result.per_domain[k];
  }
  result.macro = sum / static_cast<double>(result.total.size());
}

}  // namespace

EvalResult evaluate(const EncoderState& model, std::span<const Example> examples) {
  if (examples.empty()) fail(ErrorKind::Evaluation, "evaluation set is empty");
  const auto predictions = predict(model, examples);
  EvalResult result;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ++result.total[examples[i].domain];
    result.correct[examples[i].domain] += predictions[i] == examples[i].label ? 1 : 0;
  }
  finish(result);
  return result;
}

EvalResult evaluate(const ModelSet& models, std::span<const Example> examples) {
  if (examples.empty()) fail(ErrorKind::Evaluation, "evaluation set is empty");
  std::set<int> domains;
  for (const auto& ex : examples) domains.insert(ex.domain);
  EvalResult result;
  for (int k : domains) {
    const auto slice = domain_examples(examples, k);
    const auto predictions = predict(models.for_domain(k), slice);
    result.total[k] = slice.size();
    for (std::size_t i = 0; i < slice.size(); ++i) result.correct[k] += predictions[i] == slice[i].label ? 1 : 0;
  }
  finish(result);
  return result;
}

Tensor pooled_features(const EncoderState& state, std::span<const Example> examples, std::size_t layer,
                       std::size_t batch_size) {
  if (layer < 1 || layer > state.config.num_layers) {
    fail(ErrorKind::Configuration, "probe layer " + std::to_string(layer) + " outside [1," +
                                       std::to_string(state.config.num_layers) + "]");
  }
  NoGradGuard no_grad;
  Tensor out(Shape{examples.size(), state.config.d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const TokenBatch batch = make_batch(examples, idx);
    const Tensor pooled = layer_pool(encode(state, batch), layer, batch.mask)->value;
    std::copy(pooled.values().begin(), pooled.values().end(), out.data() + start * state.config.d);
  }
  return out;
}

double probe_accuracy(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                      std::span<const int> test_y, std::size_t num_classes, const ProbeOptions& options) {
  if (train_x.rows() == 0 || test_x.rows() == 0) fail(ErrorKind::Evaluation, "probe needs train and test rows");
  if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size() || train_x.cols() != test_x.cols()) {
    fail(ErrorKind::Dimension, "probe features and labels disagree");
  }
  const std::size_t d = train_x.cols();
  std::vector<double> mean(d, 0.0);
  std::vector<double> sd(d, 0.0);
  const double n = static_cast<double>(train_x.rows());
  for (std::size_t r = 0; r < train_x.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += train_x.at(r, c) / n;
  }
  for (std::size_t r = 0; r < train_x.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) sd[c] += (train_x.at(r, c) - mean[c]) * (train_x.at(r, c) - mean[c]) / n;
  }
  for (auto& s : sd) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  auto standardize = [&](const Tensor& x) {
    Tensor z(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) z.at(r, c) = (x.at(r, c) - mean[c]) / sd[c];
    }
    return z;
  };
  const Var xs = constant(standardize(train_x));
  ParameterStore params;
  params.add("weight", Tensor(Shape{d, num_classes}, 0.0));
  params.add("bias", Tensor(Shape{num_classes}, 0.0));
  const Var& weight = params.get("weight");
  const Var& bias = params.get("bias");
  const std::vector<double> ones(train_y.size(), 1.0);
  Adam adam(options.learning_rate);
  for (std::size_t s = 0; s < options.steps; ++s) {
    params.zero_grad();
    backward(ops::weighted_cross_entropy(ops::linear(xs, weight, bias), train_y, ones));
    for (std::size_t i = 0; i < weight->value.size(); ++i) weight->grad[i] += options.l2 * weight->value[i];
    adam.step(params);
  }
  const Tensor zt = standardize(test_x);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < zt.rows(); ++r) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < num_classes; ++k) {
      double score = bias->value[k];
      for (std::size_t c = 0; c < d; ++c) score += zt.at(r, c) * weight->value.at(c, k);
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    correct += static_cast<int>(best) == test_y[r] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(zt.rows());
}

double domain_probe(const EncoderState& state, std::span<const Example> fit, std::span<const Example> held_out,
                    std::size_t layer, std::size_t num_domains, const ProbeOptions& options) {
  std::vector<int> fit_y;
  std::vector<int> test_y;
  for (const auto& ex : fit) fit_y.push_back(ex.domain);
  for (const auto& ex : held_out) test_y.push_back(ex.domain);
  return probe_accuracy(pooled_features(state, fit, layer), fit_y, pooled_features(state, held_out, layer), test_y,
                        num_domains, options);
}

}  // namespace mft
