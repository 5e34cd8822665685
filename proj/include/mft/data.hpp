#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mft/encoder.hpp"

namespace mft {

struct Instance {
  std::int64_t id = 0;
  std::string text_a;
  std::string text_b;  // empty for single-segment inputs
  int label = 0;       // index into MultiDomainDataset::label_names
  int domain = 0;      // index into MultiDomainDataset::domain_names

  friend bool operator==(const Instance&, const Instance&) = default;
};

enum class Split { Train, Dev, Test };

struct MultiDomainDataset {
  std::vector<std::string> domain_names;
  std::vector<std::string> label_names;
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::vector<Instance> test;

  std::size_t num_domains() const noexcept { return domain_names.size(); }
  std::size_t num_classes() const noexcept { return label_names.size(); }
  const std::vector<Instance>& split(Split s) const;
  std::vector<Instance> domain_slice(Split s, int domain) const;

  friend bool operator==(const MultiDomainDataset&, const MultiDomainDataset&) = default;
};

std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& ranked_tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased whitespace tokens ranked by frequency, ties lexicographic;
// keeps at most max_size regular tokens after the four reserved ones.
Vocabulary build_vocab(std::span<const Instance> instances, std::size_t max_size);

struct EncodedInstance {
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<std::uint8_t> mask;

  std::size_t active() const;
  friend bool operator==(const EncodedInstance&, const EncodedInstance&) = default;
};

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab, std::size_t max_len);

// Training-ready view of one instance.
struct Example {
  std::int64_t id = 0;
  int label = 0;
  int domain = 0;
  EncodedInstance tokens;
};

std::vector<Example> encode_all(std::span<const Instance> instances, const Vocabulary& vocab, std::size_t max_len);

// Batch of the selected examples, trimmed to the longest active length.
TokenBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices);
TokenBatch make_batch(std::span<const Example> examples);

// Reads a directory holding train.tsv (required), dev.tsv and test.tsv, or a
// single .tsv file treated as the training split. Lines are
// domain<TAB>label<TAB>segment1[<TAB>segment2]. An optional labels.txt in the
// directory fixes the label schema.
MultiDomainDataset load_corpus(const std::string& path);
void write_corpus(const std::string& directory, const MultiDomainDataset& dataset);

// Parses one split; the name lists grow only where new entries are allowed,
// otherwise an unseen name is a schema error.
std::vector<Instance> parse_corpus_text(std::string_view text, const std::string& source,
                                        std::vector<std::string>& domains, std::vector<std::string>& labels,
                                        bool allow_new_domains, bool allow_new_labels);

// Keeps round(fraction * N_k) training instances per domain (at least one).
MultiDomainDataset subsample_train(const MultiDomainDataset& dataset, double fraction, std::uint64_t seed);

struct SynthSpec {
  std::size_t num_domains = 3;
  std::size_t num_classes = 2;
  std::size_t shared_pool = 400;   // label-carrying tokens shared by all domains
  std::size_t domain_pool = 200;   // label-carrying tokens private to each domain
  std::size_t style_pool = 40;     // label-free tokens private to each domain
  std::size_t noise_pool = 200;    // label-free tokens shared by all domains
  std::size_t signal_tokens = 3;
  std::size_t style_tokens = 1;
  std::size_t noise_tokens = 4;
  std::vector<std::size_t> instances_per_domain{2500, 2500, 2500};
  double transfer = 0.7;  // probability a signal token comes from the shared pool
  double purity = 0.8;    // probability a signal token votes for the true class
  std::string shared_prefix = "s";
  std::string domain_prefix = "p";
  std::string style_prefix = "y";
  std::string noise_prefix = "n";
  std::uint64_t seed = 1;

  void validate() const;
};

MultiDomainDataset synth_generate(const SynthSpec& spec);

// Accuracy of the posterior-argmax rule that knows the generator; ties are
// split uniformly.
double bayes_accuracy(const SynthSpec& spec);

}  // namespace mft
