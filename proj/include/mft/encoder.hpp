#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mft/tensor.hpp"

namespace mft {

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t d = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 32;  // token positions including [CLS]
  std::size_t vocab_size = 1024;
  std::size_t num_segments = 2;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Named learnable tensors. Copies are deep: two stores never share a node.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  void add(const std::string& name, Tensor value);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t erase_prefix(const std::string& prefix);
  void zero_grad();

  const std::map<std::string, Var>& entries() const noexcept { return params_; }

 private:
  std::map<std::string, Var> params_;
};

// Mini transformer plus the label head and, while meta-training, the domain
// embedding table and per-tap domain heads (all under the "mft." prefix).
struct EncoderState {
  EncoderConfig config;
  std::size_t num_classes = 0;
  std::size_t num_domains = 0;
  std::vector<std::size_t> taps;  // 1-based layer indices with a domain head
  ParameterStore params;

  static EncoderState initialize(const EncoderConfig& config, std::size_t num_classes, std::uint64_t seed);

  void add_domain_corruption_heads(std::size_t num_domains, const std::vector<std::size_t>& taps,
                                   std::uint64_t seed);
  void add_adversarial_head(std::size_t num_domains, std::uint64_t seed);
  void reinitialize_label_head(std::uint64_t seed);

  bool has_domain_heads() const;
  const Var& param(const std::string& name) const { return params.get(name); }
};

inline constexpr const char* kDomainEmbedding = "mft.domain_embedding";
std::string domain_head_name(std::size_t layer, const char* part);

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;       // batch * seq, position 0 is [CLS]
  std::vector<int> segments;  // batch * seq
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<std::int64_t> instance_ids;

  void validate(const EncoderConfig& config) const;
};

struct EncoderOutput {
  std::size_t batch = 0;
  std::size_t seq = 0;
  Var embedded;             // input embeddings, [B, T, d]
  std::vector<Var> layers;  // layers[l - 1] is the output of layer l, [B, T, d]

  const Var& last() const { return layers.empty() ? embedded : layers.back(); }
};

EncoderOutput encode(const EncoderState& state, const TokenBatch& batch);

// f(x): the [CLS] state of the last layer, [B, d].
Var cls_feature(const EncoderOutput& output);

// h_l(x): mean over active non-[CLS] positions of layer l (1-based), [B, d].
Var layer_pool(const EncoderOutput& output, std::size_t layer, std::span<const std::uint8_t> mask);

// E(x): mean over all active positions (including [CLS]) of the last layer.
// Computed without graph recording.
Tensor sentence_embedding(const EncoderState& state, const TokenBatch& batch);

Var label_logits(const EncoderState& state, const Var& features);

void save_checkpoint(const std::string& path, const EncoderState& state);
EncoderState load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const EncoderState& state);
EncoderState checkpoint_from_bytes(const std::string& bytes);

}  // namespace mft
