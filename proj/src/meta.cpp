#include "mft/meta.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mft/error.hpp"

namespace mft {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest(std::span<const double> e, const std::vector<Vector>& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const double d = squared_distance(e, centers[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::Configuration, "alpha must lie strictly between 0 and 1");
}

TypicalityScore clamp_score(double raw) { return {raw, std::clamp(raw, 0.0, 1.0)}; }

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return std::span<const double>(t.data() + r * t.cols(), t.cols());
}

// alpha * own + (1 - alpha) * mean(cross), falling back to `own` alone when
// no other domain contributes (the K = 1 case).
double combine(double alpha, double own, double cross_sum, std::size_t cross_count) {
  if (cross_count == 0) return own;
  return alpha * own + (1.0 - alpha) * cross_sum / static_cast<double>(cross_count);
}

}  // namespace

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::Dimension, "cosine: sizes " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  }
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (!(nu > 0.0) || !(nv > 0.0)) fail(ErrorKind::Degenerate, "cosine of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

const std::vector<Vector>* PrototypeSet::find(int domain, int label) const {
  auto it = entries.find({domain, label});
  return it == entries.end() ? nullptr : &it->second;
}

KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k, std::size_t iterations, Rng& rng) {
  if (points.empty() || k == 0 || k > points.size()) {
    fail(ErrorKind::Configuration, "kmeans: need 1 <= k <= number of points");
  }
  KMeansResult result;
  // k-means++ seeding
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(points.size()))};
  result.centroids.push_back(points[chosen[0]]);
  while (result.centroids.size() < k) {
    std::vector<double> weights(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      weights[i] = squared_distance(points[i], result.centroids[nearest(points[i], result.centroids)]);
    }
    std::size_t next;
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) {
      next = 0;
      while (std::find(chosen.begin(), chosen.end(), next) != chosen.end()) ++next;
    } else {
      next = rng.categorical(weights);
    }
    chosen.push_back(next);
    result.centroids.push_back(points[next]);
  }
  const std::size_t dim = points[0].size();
  result.assignment.assign(points.size(), 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t a = nearest(points[i], result.centroids);
      if (a != result.assignment[i]) changed = true;
      result.assignment[i] = a;
    }
    std::vector<Vector> sums(k, Vector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[result.assignment[i]];
      for (std::size_t c = 0; c < dim; ++c) s[c] += points[i][c];
      ++counts[result.assignment[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // an empty cluster keeps its centroid
      for (std::size_t c = 0; c < dim; ++c) result.centroids[j][c] = sums[j][c] / static_cast<double>(counts[j]);
    }
    if (!changed) break;
  }
  for (std::size_t i = 0; i < points.size(); ++i) result.assignment[i] = nearest(points[i], result.centroids);
  return result;
}

PrototypeSet prototypes_from_embeddings(const Tensor& embeddings, std::span<const int> domains,
                                        std::span<const int> labels, std::size_t num_domains,
                                        std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                                        PrototypeReport* report) {
  if (embeddings.rows() == 0 || embeddings.rank() != 2) fail(ErrorKind::Configuration, "prototypes: no embeddings");
  if (domains.size() != embeddings.rows() || labels.size() != embeddings.rows()) {
    fail(ErrorKind::Dimension, "prototypes: labels do not match embedding rows");
  }
  if (per_class < 1) fail(ErrorKind::Configuration, "prototypes: J must be at least 1");
  PrototypeSet set;
  set.dim = embeddings.cols();
  set.num_domains = num_domains;
  set.num_classes = num_classes;
  for (std::size_t k = 0; k < num_domains; ++k) {
    for (std::size_t m = 0; m < num_classes; ++m) {
      std::vector<Vector> members;
      for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        if (domains[i] == static_cast<int>(k) && labels[i] == static_cast<int>(m)) {
          auto r = row_of(embeddings, i);
          members.emplace_back(r.begin(), r.end());
        }
      }
      const std::pair<int, int> key{static_cast<int>(k), static_cast<int>(m)};
      if (members.empty()) {
        if (report) report->omitted.push_back(key);
        continue;
      }
      std::size_t j = per_class;
      if (members.size() < j) {
        if (report) {
          report->warnings.push_back("domain " + std::to_string(k) + " class " + std::to_string(m) + ": J reduced to " +
                                     std::to_string(members.size()));
        }
        j = members.size();
      }
      if (j == 1) {
        Vector mean(set.dim, 0.0);
        for (const auto& v : members) {
          for (std::size_t c = 0; c < set.dim; ++c) mean[c] += v[c];
        }
        for (auto& x : mean) x /= static_cast<double>(members.size());
        set.entries[key] = {std::move(mean)};
      } else {
        Rng rng(derive_seed(seed, "kmeans", k * num_classes + m));
        set.entries[key] = kmeans(members, j, kKMeansIterations, rng).centroids;
      }
    }
  }
  return set;
}

Tensor embed_examples(const EncoderState& state, std::span<const Example> examples, std::size_t batch_size) {
  Tensor out(Shape{examples.size(), state.config.d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor emb = sentence_embedding(state, make_batch(examples, idx));
    std::copy(emb.values().begin(), emb.values().end(), out.data() + start * state.config.d);
  }
  return out;
}

PrototypeSet compute_prototypes(std::span<const Example> examples, const EncoderState& state, std::size_t per_class,
                                std::uint64_t seed, PrototypeReport* report) {
  if (examples.empty()) fail(ErrorKind::Configuration, "prototypes: empty dataset");
  const Tensor emb = embed_examples(state, examples);
  std::vector<int> domains;
  std::vector<int> labels;
  int max_domain = 0;
  for (const auto& ex : examples) {
    domains.push_back(ex.domain);
    labels.push_back(ex.label);
    max_domain = std::max(max_domain, ex.domain);
  }
  const std::size_t n_domains = std::max<std::size_t>(state.num_domains, static_cast<std::size_t>(max_domain) + 1);
  return prototypes_from_embeddings(emb, domains, labels, n_domains, state.num_classes, per_class, seed, report);
}

TypicalityScore typicality_single(std::span<const double> e, int label, int domain, const PrototypeSet& prototypes,
                                  double alpha) {
  check_alpha(alpha);
  const auto* own = prototypes.find(domain, label);
  if (!own) {
    fail(ErrorKind::Configuration, "no prototype for domain " + std::to_string(domain) + " class " + std::to_string(label));
  }
  const double own_cos = cosine(e, own->front());
  double cross = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < prototypes.num_domains; ++k) {
    if (static_cast<int>(k) == domain) continue;
    if (const auto* other = prototypes.find(static_cast<int>(k), label)) {
      cross += cosine(e, other->front());
      ++count;
    }
  }
  return clamp_score(combine(alpha, own_cos, cross, count));
}

Vector class_memberships(std::span<const double> e, int domain, const PrototypeSet& prototypes) {
  Vector beta(prototypes.num_classes, 0.0);
  for (std::size_t n = 0; n < prototypes.num_classes; ++n) {
    if (const auto* protos = prototypes.find(domain, static_cast<int>(n))) {
      const double d2 = squared_distance(e, (*protos)[nearest(e, *protos)]);
      beta[n] = 1.0 / (1.0 + d2);
    }
  }
  return beta;
}

TypicalityScore typicality_multi(std::span<const double> e, int label, int domain, const PrototypeSet& prototypes,
                                 double alpha, std::span<const double> class_beta) {
  check_alpha(alpha);
  if (class_beta.size() != prototypes.num_classes) {
    fail(ErrorKind::Membership, "need one membership per class, got " + std::to_string(class_beta.size()));
  }
  for (double b : class_beta) {
    if (!(b > 0.0)) fail(ErrorKind::Membership, "cluster memberships must be positive");
  }
  if (!prototypes.find(domain, label)) {
    fail(ErrorKind::Configuration, "no prototype for domain " + std::to_string(domain) + " class " + std::to_string(label));
  }
  // beta-weighted mean over classes of the cosine to the class's most similar
  // prototype in domain k.
  auto domain_term = [&](int k, bool& present) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t n = 0; n < prototypes.num_classes; ++n) {
      const auto* protos = prototypes.find(k, static_cast<int>(n));
      if (!protos) continue;
      double best = -2.0;
      for (const auto& c : *protos) best = std::max(best, cosine(e, c));
      num += class_beta[n] * best;
      den += class_beta[n];
    }
    present = den > 0.0;
    return present ? num / den : 0.0;
  };
  bool present = false;
  const double own = domain_term(domain, present);
  double cross = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < prototypes.num_domains; ++k) {
    if (static_cast<int>(k) == domain) continue;
    const double term = domain_term(static_cast<int>(k), present);
    if (present) {
      cross += term;
      ++count;
    }
  }
  return clamp_score(combine(alpha, own, cross, count));
}

TypicalityScore typicality_own_clusters(std::span<const double> e, int label, int domain,
                                        const PrototypeSet& prototypes, double alpha) {
  check_alpha(alpha);
  auto domain_term = [&](int k) -> std::pair<bool, double> {
    const auto* protos = prototypes.find(k, label);
    if (!protos) return {false, 0.0};
    double num = 0.0;
    double den = 0.0;
    for (const auto& c : *protos) {
      const double beta = 1.0 / (1.0 + squared_distance(e, c));
      num += beta * cosine(e, c);
      den += beta;
    }
    return {true, num / den};
  };
  const auto [has_own, own] = domain_term(domain);
  if (!has_own) {
    fail(ErrorKind::Configuration, "no prototype for domain " + std::to_string(domain) + " class " + std::to_string(label));
  }
  double cross = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < prototypes.num_domains; ++k) {
    if (static_cast<int>(k) == domain) continue;
    const auto [present, term] = domain_term(static_cast<int>(k));
    if (present) {
      cross += term;
      ++count;
    }
  }
  return clamp_score(combine(alpha, own, cross, count));
}

void TypicalityTable::add(std::int64_t id, TypicalityScore score) {
  if (!entries_.emplace(id, score).second) {
    fail(ErrorKind::State, "instance " + std::to_string(id) + " already has a typicality score");
  }
}

const TypicalityScore& TypicalityTable::at(std::int64_t id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorKind::Lookup, "no typicality score for instance " + std::to_string(id));
  return it->second;
}

std::vector<double> TypicalityTable::weights(std::span<const std::int64_t> ids) const {
  std::vector<double> w;
  w.reserve(ids.size());
  for (auto id : ids) w.push_back(at(id).value);
  return w;
}

std::string TypicalityTable::to_text() const {
  std::ostringstream out;
  out << "# instance_id\traw\tclamped\n" << std::setprecision(17);
  for (const auto& [id, s] : entries_) out << id << '\t' << s.raw << '\t' << s.value << '\n';
  return out.str();
}

TypicalityTable TypicalityTable::from_text(const std::string& text) {
  TypicalityTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::int64_t id;
    TypicalityScore s;
    if (!(fields >> id >> s.raw >> s.value)) {
      fail(ErrorKind::Parse, "typicality table line " + std::to_string(line_no) + " is malformed");
    }
    table.add(id, s);
  }
  return table;
}

std::string prototypes_to_text(const PrototypeSet& prototypes) {
  std::ostringstream out;
  out << "# domain\tclass\tindex\tvalues (dim=" << prototypes.dim << ", domains=" << prototypes.num_domains
      << ", classes=" << prototypes.num_classes << ")\n"
      << std::setprecision(17);
  for (const auto& [key, protos] : prototypes.entries) {
    for (std::size_t j = 0; j < protos.size(); ++j) {
      out << key.first << '\t' << key.second << '\t' << j << '\t';
      for (std::size_t c = 0; c < protos[j].size(); ++c) out << (c ? " " : "") << protos[j][c];
      out << '\n';
    }
  }
  return out.str();
}

PrototypeSet prototypes_from_text(const std::string& text) {
  PrototypeSet set;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto grab = [&](const char* key) -> std::size_t {
        auto pos = line.find(key);
        return pos == std::string::npos ? 0 : std::stoul(line.substr(pos + std::string(key).size()));
      };
      set.dim = grab("dim=");
      set.num_domains = grab("domains=");
      set.num_classes = grab("classes=");
      continue;
    }
    std::istringstream fields(line);
    int k;
    int m;
    std::size_t j;
    if (!(fields >> k >> m >> j)) fail(ErrorKind::Parse, "malformed prototype line: " + line);
    Vector v;
    double x;
    while (fields >> x) v.push_back(x);
    if (v.size() != set.dim) fail(ErrorKind::Parse, "prototype dimension mismatch in line: " + line);
    auto& list = set.entries[{k, m}];
    if (list.size() != j) fail(ErrorKind::Parse, "prototype indices out of order in line: " + line);
    list.push_back(std::move(v));
  }
  return set;
}

TypicalityTable compute_typicality(std::span<const Example> examples, const Tensor& embeddings,
                                   const PrototypeSet& prototypes, double alpha, MultiPrototypeMode mode) {
  if (embeddings.rows() != examples.size()) fail(ErrorKind::Dimension, "typicality: embeddings do not match examples");
  bool multi = false;
  for (const auto& [key, protos] : prototypes.entries) multi = multi || protos.size() > 1;
  TypicalityTable table;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto e = row_of(embeddings, i);
    const auto& ex = examples[i];
    TypicalityScore s;
    if (!multi) {
      s = typicality_single(e, ex.label, ex.domain, prototypes, alpha);
    } else if (mode == MultiPrototypeMode::OwnClass) {
      s = typicality_own_clusters(e, ex.label, ex.domain, prototypes, alpha);
    } else {
      Vector beta = class_memberships(e, ex.domain, prototypes);
      // Classes absent from the own domain get a tiny positive weight; they are
      // skipped inside the sums anyway.
      for (auto& b : beta) b = b > 0.0 ? b : std::numeric_limits<double>::min();
      s = typicality_multi(e, ex.label, ex.domain, prototypes, alpha, beta);
    }
    table.add(ex.id, s);
  }
  return table;
}

CorruptionDistribution CorruptionDistribution::shuffle() { return {CorruptionMode::Shuffle, {}}; }

CorruptionDistribution CorruptionDistribution::uniform(std::size_t num_domains) {
  if (num_domains == 0) fail(ErrorKind::Configuration, "uniform corruption needs at least one domain");
  return {CorruptionMode::Uniform, std::vector<double>(num_domains, 1.0 / static_cast<double>(num_domains))};
}

CorruptionDistribution CorruptionDistribution::empirical(std::span<const int> domains, std::size_t num_domains) {
  if (domains.empty() || num_domains == 0) fail(ErrorKind::Configuration, "empirical corruption needs data");
  std::vector<double> counts(num_domains, 0.0);
  for (int k : domains) {
    if (k < 0 || static_cast<std::size_t>(k) >= num_domains) fail(ErrorKind::Index, "domain label out of range");
    counts[static_cast<std::size_t>(k)] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(domains.size());
  return {CorruptionMode::Empirical, std::move(counts)};
}

void CorruptionDistribution::validate() const {
  if (mode == CorruptionMode::Shuffle) {
    if (!probabilities.empty()) fail(ErrorKind::State, "shuffle corruption carries no probabilities");
    return;
  }
  if (probabilities.empty()) fail(ErrorKind::State, "corruption distribution has not been fitted");
  double total = 0.0;
  for (double p : probabilities) {
    if (p < 0.0) fail(ErrorKind::State, "negative corruption probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) fail(ErrorKind::State, "corruption probabilities do not sum to 1");
}

std::vector<int> corrupt_labels(std::span<const int> domains, const CorruptionDistribution& dist, Rng& rng) {
  if (domains.empty()) fail(ErrorKind::Dimension, "corrupt_labels: empty batch");
  dist.validate();
  std::vector<int> z;
  if (dist.mode == CorruptionMode::Shuffle) {
    z.assign(domains.begin(), domains.end());
    rng.shuffle(z);
    return z;
  }
  z.reserve(domains.size());
  for (std::size_t i = 0; i < domains.size(); ++i) z.push_back(static_cast<int>(rng.categorical(dist.probabilities)));
  return z;
}

AffineHead label_head(const EncoderState& state) {
  return {state.param("heads.label.weight"), state.param("heads.label.bias")};
}

AffineHead domain_head(const EncoderState& state, std::size_t layer) {
  return {state.param(domain_head_name(layer, "weight")), state.param(domain_head_name(layer, "bias"))};
}

Var loss_tlc(const Var& features, std::span<const int> labels, std::span<const double> typicality,
             const AffineHead& head) {
  return ops::weighted_cross_entropy(ops::linear(features, head.weight, head.bias), labels, typicality);
}

Var loss_tdc(const Var& pooled, std::span<const int> true_domains, std::span<const int> corrupt,
             std::span<const double> typicality, const Var& domain_embedding, const AffineHead& head) {
  const std::size_t num_domains = domain_embedding->value.rows();
  for (int z : corrupt) {
    if (z < 0 || static_cast<std::size_t>(z) >= num_domains) {
      fail(ErrorKind::Index, "corrupt domain label " + std::to_string(z) + " outside [0," +
                                 std::to_string(num_domains) + ")");
    }
  }
  Var features = ops::add(pooled, ops::gather_rows(domain_embedding, true_domains));
  return ops::weighted_cross_entropy(ops::linear(features, head.weight, head.bias), corrupt, typicality);
}

SdcResult loss_sdc(const EncoderState& state, const EncoderOutput& hidden, std::span<const std::uint8_t> mask,
                   std::span<const std::size_t> taps, std::span<const int> true_domains, std::span<const int> corrupt,
                   std::span<const double> typicality) {
  if (taps.empty()) fail(ErrorKind::Configuration, "skip-layer loss needs at least one tapped layer");
  SdcResult result;
  std::vector<Var> losses;
  const Var& embedding_table = state.param(kDomainEmbedding);
  for (auto l : taps) {
    if (l < 1 || l > state.config.num_layers) {
      fail(ErrorKind::Configuration, "tapped layer " + std::to_string(l) + " exceeds " +
                                         std::to_string(state.config.num_layers) + " layers");
    }
    Var tdc = loss_tdc(layer_pool(hidden, l, mask), true_domains, corrupt, typicality, embedding_table,
                       domain_head(state, l));
    result.per_layer[l] = tdc->value.item();
    losses.push_back(tdc);
  }
  result.loss = ops::mean_of(losses);
  return result;
}

namespace {

std::vector<double> binary_targets(std::span<const int> is_first, bool flip) {
  std::vector<double> y;
  y.reserve(is_first.size());
  for (int v : is_first) {
    if (v != 0 && v != 1) fail(ErrorKind::Index, "binary domain labels must be 0 or 1");
    y.push_back(flip ? 1.0 - v : static_cast<double>(v));
  }
  return y;
}

}  // namespace

Var loss_flipped(const Var& domain_logits, std::span<const int> is_first_domain) {
  const auto y = binary_targets(is_first_domain, true);
  return ops::binary_cross_entropy_with_logits(domain_logits, y);
}

Var loss_adversarial(const Var& domain_logits, std::span<const int> is_first_domain) {
  const auto y = binary_targets(is_first_domain, false);
  return ops::binary_cross_entropy_with_logits(domain_logits, y);
}

Var loss_flipped_multi(const Var& domain_logits, std::span<const int> domains, Rng& rng) {
  const std::size_t k = domain_logits->value.cols();
  if (k < 2) fail(ErrorKind::Configuration, "flipped domain loss needs at least two domains");
  std::vector<int> targets;
  targets.reserve(domains.size());
  for (int d : domains) {
    int t = static_cast<int>(rng.below(k - 1));
    if (t >= d) ++t;
    targets.push_back(t);
  }
  const std::vector<double> ones(domains.size(), 1.0);
  return ops::weighted_cross_entropy(domain_logits, targets, ones);
}

Var loss_adversarial_multi(const Var& domain_logits, std::span<const int> domains) {
  if (domain_logits->value.cols() < 2) fail(ErrorKind::Configuration, "adversarial domain loss needs two domains");
  const std::vector<double> ones(domains.size(), 1.0);
  return ops::weighted_cross_entropy(domain_logits, domains, ones);
}

double LossReport::identity_error() const {
  double err = 0.0;
  if (!l_tdc_per_layer.empty()) {
    double s = 0.0;
    for (const auto& [l, v] : l_tdc_per_layer) s += v;
    err = std::abs(l_sdc - s / static_cast<double>(l_tdc_per_layer.size()));
  }
  return std::max(err, std::abs(total - (l_tlc + lambda * l_sdc)));
}

}  // namespace mft
