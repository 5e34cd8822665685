#include "mft/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace mft {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    fail(ErrorKind::Configuration, "key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& key, const std::string& text) { return parse_number<double>(key, text); }
std::size_t parse_size(const std::string& key, const std::string& text) {
  return parse_number<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  fail(ErrorKind::Configuration, "key '" + key + "': expected true or false, got '" + text + "'");
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char separator) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, separator)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_taps(const std::string& text) {
  std::vector<std::size_t> taps;
  for (const auto& t : split_list(text, ',')) taps.push_back(parse_size("train.taps", t));
  if (taps.empty()) fail(ErrorKind::Configuration, "train.taps: no layers listed");
  return taps;
}

const std::map<std::string, std::string>& ConfigMap::defaults() {
  static const std::map<std::string, std::string> table{
      {"task", "synth"},
      {"data", "synth"},
      {"data.train_fraction", "1"},
      {"data.vocab_max", "2000"},
      {"synth.num_domains", "3"},
      {"synth.num_classes", "2"},
      {"synth.shared_pool", "400"},
      {"synth.domain_pool", "200"},
      {"synth.style_pool", "40"},
      {"synth.noise_pool", "200"},
      {"synth.signal_tokens", "3"},
      {"synth.style_tokens", "1"},
      {"synth.noise_tokens", "4"},
      {"synth.instances_per_domain", "2500;2500;2500"},
      {"synth.transfer", "0.7"},
      {"synth.purity", "0.8"},
      {"synth.seed", "1"},
      {"encoder.num_layers", "4"},
      {"encoder.d", "64"},
      {"encoder.num_heads", "4"},
      {"encoder.ffn_dim", "128"},
      {"encoder.max_seq_len", "32"},
      {"train.alpha", "0.5"},
      {"train.lambda", "0.1"},
      {"train.taps", "2,4"},
      {"train.prototypes_per_class", "1"},
      {"train.multi_prototype_mode", "all"},
      {"train.mft_epochs", "2"},
      {"train.ft_epochs", "3"},
      {"train.baseline_epochs", "auto"},
      {"train.batch_size", "32"},
      {"train.learning_rate", "0.0003"},
      {"train.corruption", "shuffle"},
      {"train.stratified_batches", "false"},
      {"train.reinit_label_head", "false"},
      {"train.adv_weight", "1"},
      {"train.adv_loss", "reversal"},
      {"method", "mft-full"},
      {"seeds", "1;2;3"},
      {"output", "out"},
      {"checkpoints", "true"},
      {"sweep.axis", ""},
      {"sweep.values", ""},
      {"checkpoint", ""},
      {"probe.layer", "all"},
      {"probe.steps", "300"},
      {"report.top_n", "5"},
  };
  return table;
}

ConfigMap::ConfigMap() : values_(defaults()) {}

void ConfigMap::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Configuration, "unknown config key '" + key + "'");
  it->second = value;
}

void ConfigMap::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorKind::Configuration, "override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& ConfigMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Configuration, "unknown config key '" + key + "'");
  return it->second;
}

ConfigMap ConfigMap::parse(const std::string& text, const std::string& source) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    if (body.find('=') == std::string::npos) {
      fail(ErrorKind::Configuration, source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      map.apply_override(body);
    } catch (const Error& e) {
      fail(e.kind(), source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path);
}

std::string ConfigMap::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

std::string ConfigMap::hash() const {
  std::string canonical;
  for (const auto& [key, value] : values_) {
    if (key == "output") continue;
    canonical += key + "=" + value + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

ExperimentConfig materialize(const ConfigMap& map) {
  ExperimentConfig c;
  c.source = map;
  auto s = [&](const char* key) { return map.get(key); };
  auto sz = [&](const char* key) { return parse_size(key, map.get(key)); };
  auto dbl = [&](const char* key) { return parse_double(key, map.get(key)); };

  c.task = s("task");
  c.data = s("data");
  if (c.task.empty()) fail(ErrorKind::Configuration, "task name is empty");
  if (c.data.empty()) fail(ErrorKind::Configuration, "data source is empty");
  c.train_fraction = dbl("data.train_fraction");
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) {
    fail(ErrorKind::Configuration, "data.train_fraction must lie in (0, 1]");
  }
  c.vocab_max = sz("data.vocab_max");

  c.synth.num_domains = sz("synth.num_domains");
  c.synth.num_classes = sz("synth.num_classes");
  c.synth.shared_pool = sz("synth.shared_pool");
  c.synth.domain_pool = sz("synth.domain_pool");
  c.synth.style_pool = sz("synth.style_pool");
  c.synth.noise_pool = sz("synth.noise_pool");
  c.synth.signal_tokens = sz("synth.signal_tokens");
  c.synth.style_tokens = sz("synth.style_tokens");
  c.synth.noise_tokens = sz("synth.noise_tokens");
  c.synth.instances_per_domain.clear();
  for (const auto& n : split_list(s("synth.instances_per_domain"), ';')) {
    c.synth.instances_per_domain.push_back(parse_size("synth.instances_per_domain", n));
  }
  // A single count applies to every domain.
  if (c.synth.instances_per_domain.size() == 1 && c.synth.num_domains > 1) {
    c.synth.instances_per_domain.assign(c.synth.num_domains, c.synth.instances_per_domain.front());
  }
  c.synth.transfer = dbl("synth.transfer");
  c.synth.purity = dbl("synth.purity");
  c.synth.seed = parse_number<std::uint64_t>("synth.seed", s("synth.seed"));
  if (c.synthetic()) c.synth.validate();

  c.encoder.num_layers = sz("encoder.num_layers");
  c.encoder.d = sz("encoder.d");
  c.encoder.num_heads = sz("encoder.num_heads");
  c.encoder.ffn_dim = sz("encoder.ffn_dim");
  c.encoder.max_seq_len = sz("encoder.max_seq_len");
  c.encoder.vocab_size = c.vocab_max + Vocabulary::kReserved;
  c.encoder.validate();

  TrainConfig& t = c.train;
  t.alpha = dbl("train.alpha");
  t.lambda = dbl("train.lambda");
  t.taps = parse_taps(s("train.taps"));
  for (auto l : t.taps) {
    if (l < 1 || l > c.encoder.num_layers) {
      fail(ErrorKind::Configuration, "train.taps: layer " + std::to_string(l) + " outside [1," +
                                         std::to_string(c.encoder.num_layers) + "]");
    }
  }
  t.prototypes_per_class = sz("train.prototypes_per_class");
  const auto mode = s("train.multi_prototype_mode");
  if (mode == "all") {
    t.multi_prototype_mode = MultiPrototypeMode::AllClasses;
  } else if (mode == "own") {
    t.multi_prototype_mode = MultiPrototypeMode::OwnClass;
  } else {
    fail(ErrorKind::Configuration, "train.multi_prototype_mode must be all or own");
  }
  t.mft_epochs = sz("train.mft_epochs");
  t.ft_epochs = sz("train.ft_epochs");
  if (s("train.baseline_epochs") == "auto") {
    t.baseline_epochs.reset();
  } else {
    t.baseline_epochs = sz("train.baseline_epochs");
  }
  t.batch_size = sz("train.batch_size");
  t.learning_rate = dbl("train.learning_rate");
  t.corruption = parse_corruption(s("train.corruption"));
  t.stratified_batches = parse_bool("train.stratified_batches", s("train.stratified_batches"));
  t.reinit_label_head = parse_bool("train.reinit_label_head", s("train.reinit_label_head"));
  t.adv_weight = dbl("train.adv_weight");
  const auto adv = s("train.adv_loss");
  if (adv == "reversal") {
    t.adv_loss = AdvLoss::Reversal;
  } else if (adv == "flipped") {
    t.adv_loss = AdvLoss::Flipped;
  } else {
    fail(ErrorKind::Configuration, "train.adv_loss must be reversal or flipped");
  }
  t.validate();

  c.method = parse_method(s("method"));
  for (const auto& seed : split_list(s("seeds"), ';')) c.seeds.push_back(parse_number<std::uint64_t>("seeds", seed));
  if (c.seeds.empty()) fail(ErrorKind::Configuration, "seed list is empty");
  c.output = s("output");
  if (c.output.empty()) fail(ErrorKind::Configuration, "output directory is empty");
  c.write_checkpoints = parse_bool("checkpoints", s("checkpoints"));
  c.sweep_axis = s("sweep.axis");
  c.sweep_values = split_list(s("sweep.values"), ';');
  c.checkpoint = s("checkpoint");
  c.probe_layer = s("probe.layer");
  if (c.probe_layer != "all") parse_size("probe.layer", c.probe_layer);
  c.probe_steps = sz("probe.steps");
  c.top_n = sz("report.top_n");
  return c;
}

}  // namespace mft
