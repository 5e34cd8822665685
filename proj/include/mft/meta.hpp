#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mft/data.hpp"
#include "mft/encoder.hpp"
#include "mft/rng.hpp"
#include "mft/tensor.hpp"

namespace mft {

double cosine(std::span<const double> u, std::span<const double> v);

using Vector = std::vector<double>;

// c_m^k, possibly J vectors per (domain, class) when clustering is used.
struct PrototypeSet {
  std::size_t dim = 0;
  std::size_t num_domains = 0;
  std::size_t num_classes = 0;
  std::map<std::pair<int, int>, std::vector<Vector>> entries;  // (domain, class) -> prototypes

  const std::vector<Vector>* find(int domain, int label) const;
};

struct PrototypeReport {
  std::vector<std::pair<int, int>> omitted;  // (domain, class) with no instances
  std::vector<std::string> warnings;
};

struct KMeansResult {
  std::vector<Vector> centroids;
  std::vector<std::size_t> assignment;
};

// Lloyd iterations from k-means++ seeding; ties go to the lowest centroid index.
KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k, std::size_t iterations, Rng& rng);

inline constexpr std::size_t kKMeansIterations = 20;

// Rows of `embeddings` pair with domains[i] / labels[i].
PrototypeSet prototypes_from_embeddings(const Tensor& embeddings, std::span<const int> domains,
                                        std::span<const int> labels, std::size_t num_domains,
                                        std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                                        PrototypeReport* report = nullptr);

// E(x) for every example, [N, d], evaluated in batches without graph recording.
Tensor embed_examples(const EncoderState& state, std::span<const Example> examples, std::size_t batch_size = 64);

PrototypeSet compute_prototypes(std::span<const Example> examples, const EncoderState& state,
                                std::size_t per_class, std::uint64_t seed, PrototypeReport* report = nullptr);

struct TypicalityScore {
  double raw = 0.0;
  double value = 0.0;  // clamped to [0, 1]
};

TypicalityScore typicality_single(std::span<const double> e, int label, int domain, const PrototypeSet& prototypes,
                                  double alpha);

// beta-weighted form over class prototypes; with J > 1 every class is
// represented in each domain by its highest-cosine cluster.
TypicalityScore typicality_multi(std::span<const double> e, int label, int domain, const PrototypeSet& prototypes,
                                 double alpha, std::span<const double> class_beta);

// Variant restricted to the instance's own class clusters, each weighted by
// its own membership.
TypicalityScore typicality_own_clusters(std::span<const double> e, int label, int domain,
                                        const PrototypeSet& prototypes, double alpha);

// beta_n = 1 / (1 + squared distance to the nearest class-n prototype of the domain).
Vector class_memberships(std::span<const double> e, int domain, const PrototypeSet& prototypes);

enum class MultiPrototypeMode { AllClasses, OwnClass };

class TypicalityTable {
 public:
  void add(std::int64_t id, TypicalityScore score);
  const TypicalityScore& at(std::int64_t id) const;
  bool contains(std::int64_t id) const { return entries_.count(id) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<std::int64_t, TypicalityScore>& entries() const noexcept { return entries_; }

  std::vector<double> weights(std::span<const std::int64_t> ids) const;

  std::string to_text() const;
  static TypicalityTable from_text(const std::string& text);

 private:
  std::map<std::int64_t, TypicalityScore> entries_;
};

std::string prototypes_to_text(const PrototypeSet& prototypes);
PrototypeSet prototypes_from_text(const std::string& text);

TypicalityTable compute_typicality(std::span<const Example> examples, const Tensor& embeddings,
                                   const PrototypeSet& prototypes, double alpha,
                                   MultiPrototypeMode mode = MultiPrototypeMode::AllClasses);

enum class CorruptionMode { Uniform, Empirical, Shuffle };

struct CorruptionDistribution {
  CorruptionMode mode = CorruptionMode::Shuffle;
  std::vector<double> probabilities;  // empty for shuffle (and for unfitted empirical)

  static CorruptionDistribution shuffle();
  static CorruptionDistribution uniform(std::size_t num_domains);
  // Maximum-likelihood domain frequencies of the given labels.
  static CorruptionDistribution empirical(std::span<const int> domains, std::size_t num_domains);

  void validate() const;
};

std::vector<int> corrupt_labels(std::span<const int> domains, const CorruptionDistribution& dist, Rng& rng);

struct AffineHead {
  Var weight;
  Var bias;
};

AffineHead label_head(const EncoderState& state);
AffineHead domain_head(const EncoderState& state, std::size_t layer);

Var loss_tlc(const Var& features, std::span<const int> labels, std::span<const double> typicality,
             const AffineHead& head);

Var loss_tdc(const Var& pooled, std::span<const int> true_domains, std::span<const int> corrupt,
             std::span<const double> typicality, const Var& domain_embedding, const AffineHead& head);

struct SdcResult {
  Var loss;
  std::map<std::size_t, double> per_layer;
};

SdcResult loss_sdc(const EncoderState& state, const EncoderOutput& hidden, std::span<const std::uint8_t> mask,
                   std::span<const std::size_t> taps, std::span<const int> true_domains, std::span<const int> corrupt,
                   std::span<const double> typicality);

// Binary forms over a single logit per row; targets are 1 for domain k1.
Var loss_flipped(const Var& domain_logits, std::span<const int> is_first_domain);
Var loss_adversarial(const Var& domain_logits, std::span<const int> is_first_domain);

// K-way generalizations over [B, K] logits: the flipped target is drawn
// uniformly among the K-1 other domains; the adversarial target is k itself.
Var loss_flipped_multi(const Var& domain_logits, std::span<const int> domains, Rng& rng);
Var loss_adversarial_multi(const Var& domain_logits, std::span<const int> domains);

struct LossReport {
  double l_tlc = 0.0;
  std::map<std::size_t, double> l_tdc_per_layer;
  double l_sdc = 0.0;
  double total = 0.0;
  double lambda = 0.0;

  // Largest violation of l_sdc == mean(per-layer) and total == l_tlc + lambda * l_sdc.
  double identity_error() const;
};

}  // namespace mft
