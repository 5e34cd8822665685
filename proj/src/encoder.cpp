#include "mft/encoder.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace mft {

namespace {

constexpr double kInitSigma = 0.02;

std::string layer_name(std::size_t layer, const std::string& suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

void add_normal(ParameterStore& store, const std::string& name, Shape shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  store.add(name, Tensor::normal(std::move(shape), kInitSigma, rng));
}

void add_affine(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::uint64_t seed) {
  add_normal(store, prefix + ".weight", {in, out}, seed);
  store.add(prefix + ".bias", Tensor(Shape{out}, 0.0));
}

void add_norm(ParameterStore& store, const std::string& prefix, std::size_t d) {
  store.add(prefix + ".gain", Tensor(Shape{d}, 1.0));
  store.add(prefix + ".bias", Tensor(Shape{d}, 0.0));
}

Var affine(const ParameterStore& p, const std::string& prefix, const Var& x) {
  return ops::linear(x, p.get(prefix + ".weight"), p.get(prefix + ".bias"));
}

Var norm(const ParameterStore& p, const std::string& prefix, const Var& x) {
  return ops::layer_norm(x, p.get(prefix + ".gain"), p.get(prefix + ".bias"));
}

}  // namespace

void EncoderConfig::validate() const {
  if (d == 0 || num_heads == 0 || d % num_heads != 0) {
    fail(ErrorKind::Configuration, "encoder: d=" + std::to_string(d) + " must be divisible by num_heads=" +
                                       std::to_string(num_heads));
  }
  if (max_seq_len < 2) fail(ErrorKind::Configuration, "encoder: max_seq_len must be at least 2");
  if (vocab_size < 5) fail(ErrorKind::Configuration, "encoder: vocab_size must cover the reserved tokens");
  if (ffn_dim == 0) fail(ErrorKind::Configuration, "encoder: ffn_dim must be positive");
  if (num_segments == 0) fail(ErrorKind::Configuration, "encoder: num_segments must be positive");
}

ParameterStore::ParameterStore(const ParameterStore& other) {
  for (const auto& [name, var] : other.params_) add(name, var->value);
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ParameterStore::add(const std::string& name, Tensor value) {
  if (!value.all_finite()) fail(ErrorKind::State, "parameter " + name + " has non-finite values");
  params_[name] = leaf(std::move(value), true);
}

const Var& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorKind::Lookup, "no parameter named " + name);
  return it->second;
}

std::size_t ParameterStore::erase_prefix(const std::string& prefix) {
  std::size_t erased = 0;
  for (auto it = params_.begin(); it != params_.end();) {
    if (it->first.rfind(prefix, 0) == 0) {
      it = params_.erase(it);
      ++erased;
    } else {
      ++it;
    }
  }
  return erased;
}

void ParameterStore::zero_grad() {
  for (auto& [name, var] : params_) {
    var->ensure_grad();
    var->grad.fill(0.0);
  }
}

std::string domain_head_name(std::size_t layer, const char* part) {
  return "mft.domain_head." + std::to_string(layer) + "." + part;
}

EncoderState EncoderState::initialize(const EncoderConfig& config, std::size_t num_classes, std::uint64_t seed) {
  config.validate();
  if (num_classes < 1) fail(ErrorKind::Configuration, "encoder: need at least one class");
  EncoderState state;
  state.config = config;
  state.num_classes = num_classes;
  auto& p = state.params;
  const std::size_t d = config.d;
  add_normal(p, "embeddings.token", {config.vocab_size, d}, seed);
  add_normal(p, "embeddings.position", {config.max_seq_len, d}, seed);
  add_normal(p, "embeddings.segment", {config.num_segments, d}, seed);
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    for (const char* proj : {"query", "key", "value", "output"}) {
      add_affine(p, layer_name(l, std::string("attention.") + proj), d, d, seed);
    }
    add_norm(p, layer_name(l, "attention.norm"), d);
    add_affine(p, layer_name(l, "ffn.up"), d, config.ffn_dim, seed);
    add_affine(p, layer_name(l, "ffn.down"), config.ffn_dim, d, seed);
    add_norm(p, layer_name(l, "ffn.norm"), d);
  }
  add_affine(p, "heads.label", d, num_classes, seed);
  return state;
}

void EncoderState::add_domain_corruption_heads(std::size_t domains, const std::vector<std::size_t>& tap_layers,
                                               std::uint64_t seed) {
  if (tap_layers.empty()) fail(ErrorKind::Configuration, "domain corruption needs at least one tapped layer");
  for (auto l : tap_layers) {
    if (l < 1 || l > config.num_layers) {
      fail(ErrorKind::Configuration, "tapped layer " + std::to_string(l) + " outside [1," +
                                         std::to_string(config.num_layers) + "]");
    }
  }
  num_domains = domains;
  taps = tap_layers;
  add_normal(params, kDomainEmbedding, {domains, config.d}, seed);
  for (auto l : taps) {
    add_normal(params, domain_head_name(l, "weight"), {config.d, domains}, seed);
    params.add(domain_head_name(l, "bias"), Tensor(Shape{domains}, 0.0));
  }
}

void EncoderState::add_adversarial_head(std::size_t domains, std::uint64_t seed) {
  num_domains = domains;
  add_affine(params, "adv.domain_head", config.d, domains, seed);
}

void EncoderState::reinitialize_label_head(std::uint64_t seed) {
  params.erase_prefix("heads.label.");
  add_affine(params, "heads.label", config.d, num_classes, derive_seed(seed, "label-head-reinit"));
}

bool EncoderState::has_domain_heads() const {
  for (const auto& [name, var] : params.entries()) {
    if (name.rfind("mft.", 0) == 0 || name.rfind("adv.", 0) == 0) return true;
  }
  return false;
}

void TokenBatch::validate(const EncoderConfig& config) const {
  const std::size_t n = batch * seq;
  if (batch == 0 || seq == 0 || ids.size() != n || segments.size() != n || mask.size() != n) {
    fail(ErrorKind::Dimension, "token batch arrays do not match " + std::to_string(batch) + "x" + std::to_string(seq));
  }
  if (seq > config.max_seq_len) {
    fail(ErrorKind::Dimension, "sequence length " + std::to_string(seq) + " exceeds max " +
                                   std::to_string(config.max_seq_len));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (!mask[b * seq]) fail(ErrorKind::Dimension, "mask position 0 must be active");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config.vocab_size) {
      fail(ErrorKind::Vocabulary, "token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                      std::to_string(config.vocab_size));
    }
    if (segments[i] < 0 || static_cast<std::size_t>(segments[i]) >= config.num_segments) {
      fail(ErrorKind::Index, "segment id " + std::to_string(segments[i]) + " out of range");
    }
  }
}

EncoderOutput encode(const EncoderState& state, const TokenBatch& batch) {
  batch.validate(state.config);
  const auto& p = state.params;
  const Shape leading{batch.batch, batch.seq};
  std::vector<int> positions(batch.batch * batch.seq);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq);

  EncoderOutput out;
  out.batch = batch.batch;
  out.seq = batch.seq;
  Var x = ops::add(ops::add(ops::embedding(p.get("embeddings.token"), batch.ids, leading),
                            ops::embedding(p.get("embeddings.position"), positions, leading)),
                   ops::embedding(p.get("embeddings.segment"), batch.segments, leading));
  out.embedded = x;
  for (std::size_t l = 1; l <= state.config.num_layers; ++l) {
    Var q = affine(p, layer_name(l, "attention.query"), x);
    Var k = affine(p, layer_name(l, "attention.key"), x);
    Var v = affine(p, layer_name(l, "attention.value"), x);
    Var attended = ops::multi_head_attention(q, k, v, batch.mask, state.config.num_heads);
    Var x1 = norm(p, layer_name(l, "attention.norm"), ops::add(x, affine(p, layer_name(l, "attention.output"), attended)));
    Var ffn = affine(p, layer_name(l, "ffn.down"), ops::gelu(affine(p, layer_name(l, "ffn.up"), x1)));
    x = norm(p, layer_name(l, "ffn.norm"), ops::add(x1, ffn));
    out.layers.push_back(x);
  }
  return out;
}

Var cls_feature(const EncoderOutput& output) { return ops::select_position(output.last(), 0); }

Var layer_pool(const EncoderOutput& output, std::size_t layer, std::span<const std::uint8_t> mask) {
  if (layer < 1 || layer > output.layers.size()) {
    fail(ErrorKind::Configuration, "layer " + std::to_string(layer) + " outside [1," +
                                       std::to_string(output.layers.size()) + "]");
  }
  std::vector<std::uint8_t> without_cls(mask.begin(), mask.end());
  for (std::size_t b = 0; b < output.batch; ++b) without_cls[b * output.seq] = 0;
  return ops::masked_mean_pool_batched(output.layers[layer - 1], without_cls);
}

Tensor sentence_embedding(const EncoderState& state, const TokenBatch& batch) {
  NoGradGuard no_grad;
  EncoderOutput out = encode(state, batch);
  return ops::masked_mean_pool_batched(out.last(), batch.mask)->value;
}

Var label_logits(const EncoderState& state, const Var& features) {
  return affine(state.params, "heads.label", features);
}

// ---------------------------------------------------------------------------
// Checkpoints: "MFTCKPT1", u32 header length, header text (key=value lines),
// u64 tensor count, then per tensor u32 name length, name, u32 rank, u64
// extents, raw little-endian doubles. Tensors are written in name order.

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[] = "MFTCKPT1";

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::Parse, "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

std::string checkpoint_bytes(const EncoderState& state) {
  std::ostringstream header;
  const auto& c = state.config;
  header << "num_layers=" << c.num_layers << "\n"
         << "d=" << c.d << "\n"
         << "num_heads=" << c.num_heads << "\n"
         << "ffn_dim=" << c.ffn_dim << "\n"
         << "max_seq_len=" << c.max_seq_len << "\n"
         << "vocab_size=" << c.vocab_size << "\n"
         << "num_segments=" << c.num_segments << "\n"
         << "num_classes=" << state.num_classes << "\n"
         << "num_domains=" << state.num_domains << "\n"
         << "taps=";
  for (std::size_t i = 0; i < state.taps.size(); ++i) header << (i ? "," : "") << state.taps[i];
  header << "\n";

  std::string out(kMagic, 8);
  const std::string h = header.str();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  put<std::uint64_t>(out, state.params.size());
  for (const auto& [name, var] : state.params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = var->value;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

EncoderState checkpoint_from_bytes(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(8) != std::string(kMagic, 8)) fail(ErrorKind::Parse, "not a checkpoint (bad magic)");
  const auto header_len = in.get<std::uint32_t>();
  std::map<std::string, std::string> header;
  {
    std::stringstream ss(in.take(header_len));
    std::string line;
    while (std::getline(ss, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::Parse, "bad checkpoint header line: " + line);
      header[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto field = [&](const char* key) -> std::size_t {
    auto it = header.find(key);
    if (it == header.end()) fail(ErrorKind::Parse, std::string("checkpoint header missing ") + key);
    return std::stoul(it->second);
  };
  EncoderState state;
  state.config.num_layers = field("num_layers");
  state.config.d = field("d");
  state.config.num_heads = field("num_heads");
  state.config.ffn_dim = field("ffn_dim");
  state.config.max_seq_len = field("max_seq_len");
  state.config.vocab_size = field("vocab_size");
  state.config.num_segments = field("num_segments");
  state.config.validate();
  state.num_classes = field("num_classes");
  state.num_domains = field("num_domains");
  state.taps = parse_index_list(header["taps"]);

  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.take(name_len);
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = in.get<std::uint64_t>();
    std::vector<double> values(shape_size(shape));
    const std::string raw = in.take(values.size() * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    state.params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) fail(ErrorKind::Parse, "trailing bytes after checkpoint tensors");
  return state;
}

void save_checkpoint(const std::string& path, const EncoderState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path);
  const std::string bytes = checkpoint_bytes(state);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EncoderState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace mft
