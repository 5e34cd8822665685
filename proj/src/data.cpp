#include "mft/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace mft {

namespace fs = std::filesystem;

namespace {

// Orders "d2" before "d10" so generated names survive a write/load cycle.
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t ie = i;
      std::size_t je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      const std::string na = a.substr(i, ie - i);
      const std::string nb = b.substr(j, je - j);
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int index_of(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

// Rewrites label/domain indices after the name lists were sorted.
void sort_schema(std::vector<std::string>& names, std::vector<Instance>& instances, bool labels) {
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end(), natural_less);
  std::vector<int> remap(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) remap[i] = index_of(sorted, names[i]);
  for (auto& inst : instances) {
    int& field = labels ? inst.label : inst.domain;
    field = remap[static_cast<std::size_t>(field)];
  }
  names = std::move(sorted);
}

}  // namespace

const std::vector<Instance>& MultiDomainDataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Dev: return dev;
    case Split::Test: return test;
  }
  return train;
}

std::vector<Instance> MultiDomainDataset::domain_slice(Split s, int domain) const {
  std::vector<Instance> out;
  for (const auto& inst : split(s)) {
    if (inst.domain == domain) out.push_back(inst);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& ranked_tokens) {
  tokens_ = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  for (const auto& t : ranked_tokens) {
    if (!index_.emplace(t, static_cast<int>(tokens_.size())).second) {
      fail(ErrorKind::Vocabulary, "duplicate vocabulary entry " + t);
    }
    tokens_.push_back(t);
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorKind::Vocabulary, "token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(std::span<const Instance> instances, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& inst : instances) {
    for (const auto* text : {&inst.text_a, &inst.text_b}) {
      for (auto& tok : tokenize(*text)) ++counts[tok];
    }
  }
  // Reserved spellings never become regular entries.
  for (const char* r : {"[PAD]", "[CLS]", "[SEP]", "[UNK]"}) counts.erase(r);
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_size) ranked.resize(max_size);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(tokens);
}

std::size_t EncodedInstance::active() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab, std::size_t max_len) {
  EncodedInstance enc;
  enc.ids.reserve(max_len);
  enc.ids.push_back(Vocabulary::kCls);
  enc.segments.push_back(0);
  for (const auto& tok : tokenize(instance.text_a)) {
    enc.ids.push_back(vocab.id(tok));
    enc.segments.push_back(0);
  }
  const auto second = tokenize(instance.text_b);
  if (!second.empty()) {
    enc.ids.push_back(Vocabulary::kSep);
    enc.segments.push_back(0);
    for (const auto& tok : second) {
      enc.ids.push_back(vocab.id(tok));
      enc.segments.push_back(1);
    }
  }
  if (enc.ids.size() > max_len) {
    enc.ids.resize(max_len);
    enc.segments.resize(max_len);
  }
  enc.mask.assign(enc.ids.size(), 1);
  enc.ids.resize(max_len, Vocabulary::kPad);
  enc.segments.resize(max_len, 0);
  enc.mask.resize(max_len, 0);
  return enc;
}

std::vector<Example> encode_all(std::span<const Instance> instances, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    out.push_back(Example{inst.id, inst.label, inst.domain, encode_instance(inst, vocab, max_len)});
  }
  return out;
}

TokenBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
  TokenBatch batch;
  batch.batch = indices.size();
  for (auto i : indices) batch.seq = std::max(batch.seq, examples[i].tokens.active());
  batch.seq = std::max<std::size_t>(batch.seq, 1);
  const std::size_t n = batch.batch * batch.seq;
  batch.ids.resize(n);
  batch.segments.resize(n);
  batch.mask.resize(n);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Example& ex = examples[indices[b]];
    std::copy_n(ex.tokens.ids.begin(), batch.seq, batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.seq));
    std::copy_n(ex.tokens.segments.begin(), batch.seq,
                batch.segments.begin() + static_cast<std::ptrdiff_t>(b * batch.seq));
    std::copy_n(ex.tokens.mask.begin(), batch.seq, batch.mask.begin() + static_cast<std::ptrdiff_t>(b * batch.seq));
    batch.labels.push_back(ex.label);
    batch.domains.push_back(ex.domain);
    batch.instance_ids.push_back(ex.id);
  }
  return batch;
}

TokenBatch make_batch(std::span<const Example> examples) {
  std::vector<std::size_t> all(examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(examples, all);
}

std::vector<Instance> parse_corpus_text(std::string_view text, const std::string& source,
                                        std::vector<std::string>& domains, std::vector<std::string>& labels,
                                        bool allow_new_domains, bool allow_new_labels) {
  std::vector<Instance> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() < 3 || fields.size() > 4) {
      fail(ErrorKind::Parse, where + ": expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) fail(ErrorKind::Parse, where + ": empty domain or label");
    if (tokenize(fields[2]).empty()) fail(ErrorKind::Parse, where + ": empty first segment");
    Instance inst;
    inst.text_a = fields[2];
    if (fields.size() == 4) inst.text_b = fields[3];
    int d = index_of(domains, fields[0]);
    if (d < 0) {
      if (!allow_new_domains) fail(ErrorKind::Schema, where + ": unknown domain '" + fields[0] + "'");
      domains.push_back(fields[0]);
      d = static_cast<int>(domains.size() - 1);
    }
    int m = index_of(labels, fields[1]);
    if (m < 0) {
      if (!allow_new_labels) fail(ErrorKind::Schema, where + ": unknown label '" + fields[1] + "'");
      labels.push_back(fields[1]);
      m = static_cast<int>(labels.size() - 1);
    }
    inst.domain = d;
    inst.label = m;
    out.push_back(std::move(inst));
  }
  return out;
}

MultiDomainDataset load_corpus(const std::string& path) {
  MultiDomainDataset ds;
  const fs::path root(path);
  if (!fs::exists(root)) fail(ErrorKind::Io, "corpus path does not exist: " + path);
  if (fs::is_directory(root)) {
    const bool fixed_labels = fs::exists(root / "labels.txt");
    if (fixed_labels) {
      std::istringstream in(read_file(root / "labels.txt"));
      std::string label;
      while (std::getline(in, label)) {
        if (!label.empty()) ds.label_names.push_back(label);
      }
    }
    auto train_path = root / "train.tsv";
    if (!fs::exists(train_path)) fail(ErrorKind::Io, "corpus directory lacks train.tsv: " + path);
    // Domains are discovered from train; labels too unless a schema file exists.
    std::vector<std::string> domains;
    std::vector<std::string> labels = ds.label_names;
    ds.train = parse_corpus_text(read_file(train_path), train_path.string(), domains, labels, true, !fixed_labels);
    sort_schema(domains, ds.train, false);
    if (!fixed_labels) sort_schema(labels, ds.train, true);
    for (auto [name, split] : {std::pair{"dev.tsv", &ds.dev}, std::pair{"test.tsv", &ds.test}}) {
      auto p = root / name;
      if (fs::exists(p)) *split = parse_corpus_text(read_file(p), p.string(), domains, labels, false, false);
    }
    ds.domain_names = domains;
    ds.label_names = labels;
  } else {
    ds.train = parse_corpus_text(read_file(root), root.string(), ds.domain_names, ds.label_names, true, true);
    sort_schema(ds.domain_names, ds.train, false);
    sort_schema(ds.label_names, ds.train, true);
  }
  std::int64_t next = 0;
  for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
    for (auto& inst : *split) inst.id = next++;
  }
  return ds;
}

void write_corpus(const std::string& directory, const MultiDomainDataset& dataset) {
  fs::create_directories(directory);
  auto write_split = [&](const char* name, const std::vector<Instance>& split) {
    std::ofstream out(fs::path(directory) / name, std::ios::binary);
    if (!out) fail(ErrorKind::Io, std::string("cannot write ") + name + " in " + directory);
    for (const auto& inst : split) {
      out << dataset.domain_names.at(static_cast<std::size_t>(inst.domain)) << '\t'
          << dataset.label_names.at(static_cast<std::size_t>(inst.label)) << '\t' << inst.text_a;
      if (!inst.text_b.empty()) out << '\t' << inst.text_b;
      out << '\n';
    }
  };
  write_split("train.tsv", dataset.train);
  write_split("dev.tsv", dataset.dev);
  write_split("test.tsv", dataset.test);
  std::ofstream labels(fs::path(directory) / "labels.txt", std::ios::binary);
  for (const auto& l : dataset.label_names) labels << l << '\n';
}

MultiDomainDataset subsample_train(const MultiDomainDataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(ErrorKind::Configuration, "train fraction must lie in (0, 1]");
  }
  if (fraction == 1.0) return dataset;
  MultiDomainDataset out = dataset;
  out.train.clear();
  for (std::size_t k = 0; k < dataset.num_domains(); ++k) {
    std::vector<const Instance*> members;
    for (const auto& inst : dataset.train) {
      if (inst.domain == static_cast<int>(k)) members.push_back(&inst);
    }
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, "subsample", k));
    rng.shuffle(members);
    auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    keep = std::clamp<std::size_t>(keep, 1, members.size());
    members.resize(keep);
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });
    for (auto* m : members) out.train.push_back(*m);
  }
  std::sort(out.train.begin(), out.train.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string shared_token(const SynthSpec& s, std::size_t i) { return s.shared_prefix + std::to_string(i); }
std::string private_token(const SynthSpec& s, std::size_t k, std::size_t i) {
  return s.domain_prefix + std::to_string(k + 1) + "_" + std::to_string(i);
}
std::string style_token(const SynthSpec& s, std::size_t k, std::size_t i) {
  return s.style_prefix + std::to_string(k + 1) + "_" + std::to_string(i);
}
std::string noise_token(const SynthSpec& s, std::size_t i) { return s.noise_prefix + std::to_string(i); }

// Token index inside the block of `pool` assigned to class c.
std::size_t class_block_pick(std::size_t pool, std::size_t classes, std::size_t c, Rng& rng) {
  const std::size_t lo = c * pool / classes;
  const std::size_t hi = (c + 1) * pool / classes;
  return lo + static_cast<std::size_t>(rng.below(hi - lo));
}

}  // namespace

void SynthSpec::validate() const {
  if (num_domains < 1 || num_classes < 2) fail(ErrorKind::Spec, "synth: need K >= 1 and at least two classes");
  if (instances_per_domain.size() != num_domains) {
    fail(ErrorKind::Spec, "synth: instances_per_domain must list one count per domain");
  }
  for (auto n : instances_per_domain) {
    if (n < 1) fail(ErrorKind::Spec, "synth: per-domain counts must be at least 1");
  }
  if (transfer < 0.0 || transfer > 1.0) fail(ErrorKind::Spec, "synth: transfer strength must lie in [0, 1]");
  if (purity < 0.0 || purity > 1.0) fail(ErrorKind::Spec, "synth: purity must lie in [0, 1]");
  if (signal_tokens < 1) fail(ErrorKind::Spec, "synth: need at least one signal token");
  if (shared_pool < num_classes || domain_pool < num_classes) {
    fail(ErrorKind::Spec, "synth: signal pools must hold at least one token per class");
  }
  if ((style_tokens > 0 && style_pool == 0) || (noise_tokens > 0 && noise_pool == 0)) {
    fail(ErrorKind::Spec, "synth: label-free token counts need non-empty pools");
  }
  std::set<std::string> seen;
  auto claim = [&](const std::string& tok) {
    if (!seen.insert(tok).second) fail(ErrorKind::Spec, "synth: token pools overlap at '" + tok + "'");
  };
  for (std::size_t i = 0; i < shared_pool; ++i) claim(shared_token(*this, i));
  for (std::size_t i = 0; i < noise_pool; ++i) claim(noise_token(*this, i));
  for (std::size_t k = 0; k < num_domains; ++k) {
    for (std::size_t i = 0; i < domain_pool; ++i) claim(private_token(*this, k, i));
    for (std::size_t i = 0; i < style_pool; ++i) claim(style_token(*this, k, i));
  }
  for (const auto& tok : seen) {
    if (tokenize(tok).size() != 1 || tokenize(tok)[0] != tok) {
      fail(ErrorKind::Spec, "synth: token '" + tok + "' is not a lowercase word");
    }
  }
}

MultiDomainDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  MultiDomainDataset ds;
  for (std::size_t k = 0; k < spec.num_domains; ++k) ds.domain_names.push_back("d" + std::to_string(k + 1));
  for (std::size_t m = 0; m < spec.num_classes; ++m) ds.label_names.push_back("c" + std::to_string(m));

  std::vector<Instance> train, dev, test;
  for (std::size_t k = 0; k < spec.num_domains; ++k) {
    Rng rng(derive_seed(spec.seed, "synth-domain", k));
    const std::size_t count = spec.instances_per_domain[k];
    const std::size_t n_train = count * 8 / 10;
    const std::size_t n_dev = count / 10;
    for (std::size_t i = 0; i < count; ++i) {
      Instance inst;
      inst.domain = static_cast<int>(k);
      const auto label = static_cast<std::size_t>(rng.below(spec.num_classes));
      inst.label = static_cast<int>(label);
      std::vector<std::string> words;
      for (std::size_t s = 0; s < spec.signal_tokens; ++s) {
        const bool shared = rng.bernoulli(spec.transfer);
        std::size_t vote = label;
        if (!rng.bernoulli(spec.purity)) {
          vote = static_cast<std::size_t>(rng.below(spec.num_classes - 1));
          if (vote >= label) ++vote;
        }
        words.push_back(shared ? shared_token(spec, class_block_pick(spec.shared_pool, spec.num_classes, vote, rng))
                               : private_token(spec, k, class_block_pick(spec.domain_pool, spec.num_classes, vote, rng)));
      }
      for (std::size_t s = 0; s < spec.style_tokens; ++s) {
        words.push_back(style_token(spec, k, static_cast<std::size_t>(rng.below(spec.style_pool))));
      }
      for (std::size_t s = 0; s < spec.noise_tokens; ++s) {
        words.push_back(noise_token(spec, static_cast<std::size_t>(rng.below(spec.noise_pool))));
      }
      rng.shuffle(words);
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (w) inst.text_a += ' ';
        inst.text_a += words[w];
      }
      auto& target = i < n_train ? train : (i < n_train + n_dev ? dev : test);
      target.push_back(std::move(inst));
    }
  }
  ds.train = std::move(train);
  ds.dev = std::move(dev);
  ds.test = std::move(test);
  std::int64_t next = 0;
  for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
    for (auto& inst : *split) inst.id = next++;
  }
  return ds;
}

double bayes_accuracy(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.signal_tokens;
  const std::size_t classes = spec.num_classes;
  const double q = spec.purity;
  const double r = (1.0 - q) / static_cast<double>(classes - 1);
  // By symmetry it suffices to condition on true class 0 and enumerate every
  // sequence of votes; only the vote histogram matters for the decision.
  double correct = 0.0;
  std::vector<std::size_t> votes(n, 0);
  while (true) {
    std::vector<std::size_t> hist(classes, 0);
    double prob = 1.0;
    for (auto v : votes) {
      ++hist[v];
      prob *= v == 0 ? q : r;
    }
    // Posterior is monotone in the vote count whenever q > r.
    std::vector<double> score(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      score[c] = std::pow(q, static_cast<double>(hist[c])) * std::pow(r, static_cast<double>(n - hist[c]));
    }
    const double best = *std::max_element(score.begin(), score.end());
    std::size_t ties = 0;
    for (double s : score) ties += s == best ? 1 : 0;
    if (score[0] == best) correct += prob / static_cast<double>(ties);

    std::size_t pos = 0;
    while (pos < n && ++votes[pos] == classes) votes[pos++] = 0;
    if (pos == n) break;
  }
  return correct;
}

}  // namespace mft
