#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mft/data.hpp"
#include "mft/encoder.hpp"
#include "mft/meta.hpp"

namespace mft {

enum class Variant { Full, DC, TW };
enum class Baseline { None, S, Mix, MTL, Adv };
enum class AdvLoss { Reversal, Flipped };

// The seven rows of the experiment matrix.
enum class Method { MftFull, MftDc, MftTw, S, Mix, Mtl, Adv };

Method parse_method(const std::string& name);
std::string to_string(Method method);
bool is_mft(Method method);
Variant variant_of(Method method);
Baseline baseline_of(Method method);

CorruptionMode parse_corruption(const std::string& name);
std::string to_string(CorruptionMode mode);

struct TrainConfig {
  double alpha = 0.5;
  double lambda = 0.1;
  std::vector<std::size_t> taps{2, 4};
  std::size_t prototypes_per_class = 1;  // J
  MultiPrototypeMode multi_prototype_mode = MultiPrototypeMode::AllClasses;
  std::size_t mft_epochs = 2;
  std::size_t ft_epochs = 3;
  // Epochs for S / Mix / MTL / Adv; defaults to mft_epochs + ft_epochs.
  std::optional<std::size_t> baseline_epochs;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  std::uint64_t seed = 1;
  CorruptionMode corruption = CorruptionMode::Shuffle;
  Variant variant = Variant::Full;
  Baseline baseline = Baseline::None;
  bool stratified_batches = false;
  bool reinit_label_head = false;
  double adv_weight = 1.0;
  AdvLoss adv_loss = AdvLoss::Reversal;

  void validate() const;
  std::size_t effective_baseline_epochs() const { return baseline_epochs.value_or(mft_epochs + ft_epochs); }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

// One bias-corrected Adam update of `param` in place; `step` counts from 1.
// Empty moments are initialized to zeros of the parameter's shape.
void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments, double lr, std::size_t step,
               const AdamHyper& hyper = {});

// Adam over every tensor in a store, in name order. Parameters whose
// gradient was never touched are treated as having a zero gradient.
class Adam {
 public:
  explicit Adam(double lr, AdamHyper hyper = {}) : lr_(lr), hyper_(hyper) {}
  void step(ParameterStore& params);
  std::size_t steps() const noexcept { return step_; }

 private:
  double lr_;
  AdamHyper hyper_;
  std::size_t step_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

// Which instances a training routine touched, for isolation audits.
struct DataAccessLog {
  std::vector<std::int64_t> instance_ids;
  std::set<int> domains;
};

struct StepRecord {
  std::string stage;  // "mft", "ft", or "train"
  int domain = -1;    // -1 when the batch mixes domains
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossReport loss;
};

struct MetaModel {
  EncoderState state;  // domain heads and E_D removed
  std::vector<StepRecord> trace;
  PrototypeSet prototypes;
  TypicalityTable typicality;
};

MetaModel mft_train(std::span<const Example> train, std::size_t num_domains, const EncoderState& initial,
                    const TrainConfig& config, DataAccessLog* log = nullptr);

struct DomainModel {
  int domain = 0;
  EncoderState state;
  std::vector<StepRecord> trace;
};

DomainModel fine_tune(const MetaModel& meta, std::span<const Example> domain_train, int domain,
                      const TrainConfig& config, DataAccessLog* log = nullptr);

// Per-domain models; Mix, MTL and Adv train one shared model.
struct ModelSet {
  std::vector<EncoderState> models;  // size 1 when shared, else one per domain
  bool shared = false;
  std::vector<StepRecord> trace;

  const EncoderState& for_domain(int domain) const;
};

ModelSet run_baseline(std::span<const Example> train, std::size_t num_domains, const EncoderState& initial,
                      const TrainConfig& config, DataAccessLog* log = nullptr);

struct MethodRun {
  ModelSet models;
  std::optional<MetaModel> meta;  // MFT variants only
};

// MFT variants run mft_train followed by per-domain fine_tune; baselines
// dispatch to run_baseline.
MethodRun run_method(Method method, std::span<const Example> train, std::size_t num_domains,
                     const EncoderState& initial, TrainConfig config);

struct EvalResult {
  std::map<int, double> per_domain;
  std::map<int, std::size_t> correct;
  std::map<int, std::size_t> total;
  double macro = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Argmax label predictions, ties to the lowest class index.
std::vector<int> predict(const EncoderState& state, std::span<const Example> examples, std::size_t batch_size = 128);

EvalResult evaluate(const EncoderState& model, std::span<const Example> examples);
EvalResult evaluate(const ModelSet& models, std::span<const Example> examples);

// h_l(x) for every example, [N, d].
Tensor pooled_features(const EncoderState& state, std::span<const Example> examples, std::size_t layer,
                       std::size_t batch_size = 128);

struct ProbeOptions {
  std::size_t steps = 300;
  double learning_rate = 0.05;
  double l2 = 1e-3;
};

// Fits a multinomial logistic regression on standardized train features and
// returns its accuracy on the test features.
double probe_accuracy(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                      std::span<const int> test_y, std::size_t num_classes, const ProbeOptions& options = {});

double domain_probe(const EncoderState& state, std::span<const Example> fit, std::span<const Example> held_out,
                    std::size_t layer, std::size_t num_domains, const ProbeOptions& options = {});

}  // namespace mft
