#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mft/data.hpp"
#include "mft/encoder.hpp"
#include "mft/trainer.hpp"

namespace mft {

// Plain-text `key = value` settings. Every key has a default; unknown keys
// are rejected. Lines starting with '#' are comments.
class ConfigMap {
 public:
  ConfigMap();  // all defaults

  static ConfigMap parse(const std::string& text, const std::string& source = "<config>");
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // "key=value"
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  // Canonical sorted listing of every effective key.
  std::string to_text() const;
  // FNV-1a over the canonical listing without the output directory, hex.
  std::string hash() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

struct ExperimentConfig {
  ConfigMap source;
  std::string task;
  std::string data;  // corpus path, or "synth"
  SynthSpec synth;
  double train_fraction = 1.0;
  std::size_t vocab_max = 2000;
  EncoderConfig encoder;  // vocab_size is fixed once the vocabulary is built
  TrainConfig train;
  Method method = Method::MftFull;
  std::vector<std::uint64_t> seeds;
  std::string output;
  bool write_checkpoints = true;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  std::string checkpoint;
  std::string probe_layer;  // a layer index or "all"
  std::size_t probe_steps = 300;
  std::size_t top_n = 5;

  bool synthetic() const { return data == "synth"; }
  std::string hash() const { return source.hash(); }
};

// Typed view of a config map; raises configuration errors for bad values.
ExperimentConfig materialize(const ConfigMap& map);

std::vector<std::string> split_list(const std::string& text, char separator);
std::vector<std::size_t> parse_taps(const std::string& text);

}  // namespace mft
