#include <gtest/gtest.h>

#include <cmath>

#include "mft/encoder.hpp"
#include "mft/error.hpp"
#include "mft/rng.hpp"
#include "support.hpp"

using namespace mft;

namespace {

EncoderConfig small_config(std::size_t layers = 2, std::size_t d = 8, std::size_t heads = 2) {
  EncoderConfig c;
  c.num_layers = layers;
  c.d = d;
  c.num_heads = heads;
  c.ffn_dim = 12;
  c.max_seq_len = 8;
  c.vocab_size = 20;
  return c;
}

TokenBatch make_tokens(std::size_t batch, std::size_t seq, std::uint64_t seed, std::size_t vocab,
                       std::size_t min_active = 2) {
  Rng rng(seed);
  TokenBatch b;
  b.batch = batch;
  b.seq = seq;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t active = min_active + rng.below(seq - min_active + 1);
    for (std::size_t t = 0; t < seq; ++t) {
      const bool on = t < active;
      b.ids.push_back(t == 0 ? 1 : (on ? 4 + static_cast<int>(rng.below(vocab - 4)) : 0));
      b.segments.push_back(on && t > active / 2 ? 1 : 0);
      b.mask.push_back(on ? 1 : 0);
    }
    b.labels.push_back(static_cast<int>(i % 2));
    b.domains.push_back(0);
    b.instance_ids.push_back(static_cast<std::int64_t>(i));
  }
  return b;
}

// Independent single-head attention layer written with plain loops.
std::vector<double> oracle_layer(const EncoderState& s, const TokenBatch& b) {
  const std::size_t d = s.config.d, T = b.seq;
  auto P = [&](const std::string& n) { return s.param(n)->value; };
  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      x[t * d + c] = P("embeddings.token").at(static_cast<std::size_t>(b.ids[t]), c) +
                     P("embeddings.position").at(t, c) +
                     P("embeddings.segment").at(static_cast<std::size_t>(b.segments[t]), c);
    }
  }
  auto affine = [&](const std::vector<double>& in, std::size_t din, const std::string& prefix, std::size_t dout) {
    const Tensor W = P(prefix + ".weight");
    const Tensor B = P(prefix + ".bias");
    std::vector<double> out(T * dout);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t o = 0; o < dout; ++o) {
        double acc = B[o];
        for (std::size_t i = 0; i < din; ++i) acc += in[t * din + i] * W.at(i, o);
        out[t * dout + o] = acc;
      }
    }
    return out;
  };
  auto norm = [&](std::vector<double> in, const std::string& prefix) {
    const Tensor g = P(prefix + ".gain");
    const Tensor bb = P(prefix + ".bias");
    for (std::size_t t = 0; t < T; ++t) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < d; ++c) mu += in[t * d + c] / static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) var += (in[t * d + c] - mu) * (in[t * d + c] - mu) / static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) in[t * d + c] = g[c] * (in[t * d + c] - mu) / std::sqrt(var + 1e-12) + bb[c];
    }
    return in;
  };
  const auto q = affine(x, d, "layers.1.attention.query", d);
  const auto k = affine(x, d, "layers.1.attention.key", d);
  const auto v = affine(x, d, "layers.1.attention.value", d);
  std::vector<double> att(T * d, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    if (!b.mask[i]) continue;
    std::vector<double> w(T, 0.0);
    double mx = -1e300;
    for (std::size_t j = 0; j < T; ++j) {
      if (!b.mask[j]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      w[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      w[j] = b.mask[j] ? std::exp(w[j] - mx) : 0.0;
      z += w[j];
    }
    for (std::size_t j = 0; j < T; ++j) {
      for (std::size_t c = 0; c < d; ++c) att[i * d + c] += w[j] / z * v[j * d + c];
    }
  }
  auto o = affine(att, d, "layers.1.attention.output", d);
  for (std::size_t i = 0; i < T * d; ++i) o[i] += x[i];
  const auto x1 = norm(o, "layers.1.attention.norm");
  auto up = affine(x1, d, "layers.1.ffn.up", s.config.ffn_dim);
  for (auto& u : up) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
  auto down = affine(up, s.config.ffn_dim, "layers.1.ffn.down", d);
  for (std::size_t i = 0; i < T * d; ++i) down[i] += x1[i];
  return norm(down, "layers.1.ffn.norm");
}

}  // namespace

TEST(Encoder, ShapeContract) {
  const auto s = EncoderState::initialize(small_config(), 3, 7);
  const TokenBatch b = make_tokens(1, 5, 1, 20, 5);
  const auto out = encode(s, b);
  ASSERT_EQ(out.layers.size(), 2u);
  for (const auto& l : out.layers) EXPECT_EQ(l->value.shape(), (Shape{1, 5, 8}));
  EXPECT_EQ(cls_feature(out)->value.shape(), (Shape{1, 8}));
  EXPECT_EQ(layer_pool(out, 1, b.mask)->value.shape(), (Shape{1, 8}));
  EXPECT_EQ(sentence_embedding(s, b).shape(), (Shape{1, 8}));
}

TEST(Encoder, MatchesIndependentAttentionFormula) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = small_config(1, 8, 1);
    auto s = EncoderState::initialize(cfg, 2, seed);
    // Larger weights make the attention pattern non-trivial.
    for (const auto& [name, var] : s.params.entries()) {
      if (name.find("weight") != std::string::npos || name.rfind("embeddings", 0) == 0) {
        for (auto& v : var->value.values()) v *= 25.0;
      }
    }
    const TokenBatch b = make_tokens(1, 6, seed, 20, 3);
    const Tensor got = encode(s, b).layers[0]->value;
    const auto expect = oracle_layer(s, b);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      if (!b.mask[i / cfg.d]) continue;
      EXPECT_NEAR(got[i], expect[i], 1e-10) << "seed " << seed << " index " << i;
    }
  }
}

TEST(Encoder, MaskSoundnessPaddingIdsAndOrder) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  TokenBatch b = make_tokens(3, 8, 5, 20, 2);
  const auto base = encode(s, b);
  Rng rng(99);
  TokenBatch changed = b;
  for (std::size_t i = 0; i < changed.ids.size(); ++i) {
    if (!changed.mask[i]) {
      changed.ids[i] = 4 + static_cast<int>(rng.below(16));
      changed.segments[i] = static_cast<int>(rng.below(2));
    }
  }
  const auto other = encode(s, changed);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < b.mask.size(); ++i) {
      if (!b.mask[i]) continue;
      for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_EQ(base.layers[l]->value[i * 8 + c], other.layers[l]->value[i * 8 + c]);
      }
    }
  }
  EXPECT_EQ(cls_feature(base)->value, cls_feature(other)->value);
}

TEST(Encoder, ClsFeatureIsPositionZeroSlice) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  const TokenBatch b = make_tokens(2, 6, 2, 20);
  const auto out = encode(s, b);
  const Tensor f = cls_feature(out)->value;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(f.at(i, c), out.last()->value[(i * 6) * 8 + c]);
  }
}

TEST(Encoder, SingleTokenClsEqualsFullPool) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  TokenBatch b = make_tokens(1, 1, 2, 20, 1);
  const auto out = encode(s, b);
  EXPECT_EQ(cls_feature(out)->value, sentence_embedding(s, b));
  EXPECT_THROW(layer_pool(out, 1, b.mask), Error);
}

TEST(Encoder, LayerPoolExcludesClsAndPadding) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  TokenBatch b = make_tokens(1, 6, 4, 20, 2);
  for (std::size_t t = 2; t < 6; ++t) b.mask[t] = 0, b.ids[t] = 0;
  const auto out = encode(s, b);
  const Tensor h = layer_pool(out, 2, b.mask)->value;
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(h[c], out.layers[1]->value[1 * 8 + c]);

  TokenBatch full = make_tokens(2, 6, 8, 20, 3);
  const auto o2 = encode(s, full);
  const Tensor pooled = layer_pool(o2, 1, full.mask)->value;
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<std::uint8_t> m(full.mask.begin() + static_cast<std::ptrdiff_t>(i * 6) + 1,
                                full.mask.begin() + static_cast<std::ptrdiff_t>(i * 6 + 6));
    Tensor rows(Shape{5, 8});
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t c = 0; c < 8; ++c) rows.at(t, c) = o2.layers[0]->value[(i * 6 + t + 1) * 8 + c];
    }
    const Tensor expect = ops::masked_mean_pool(constant(rows), m)->value;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(pooled.at(i, c), expect[c], 1e-15);
  }
}

TEST(Encoder, LayerPoolIgnoresClsPerturbation) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  const TokenBatch b = make_tokens(1, 5, 6, 20, 5);
  const auto out = encode(s, b);
  const Tensor before = layer_pool(out, 2, b.mask)->value;
  for (std::size_t c = 0; c < 8; ++c) out.layers[1]->value[c] += 3.0;
  EXPECT_EQ(layer_pool(out, 2, b.mask)->value, before);
}

TEST(Encoder, SentenceEmbeddingIncludesClsAndIsDeterministic) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  const TokenBatch b = make_tokens(2, 6, 9, 20);
  const Tensor e = sentence_embedding(s, b);
  EXPECT_EQ(e, sentence_embedding(s, b));
  const auto out = encode(s, b);
  const Tensor pooled_all = ops::masked_mean_pool_batched(out.last(), b.mask)->value;
  EXPECT_EQ(e, pooled_all);
  // With a policy that also drops [CLS], E(x) would coincide with h_L.
  std::vector<std::uint8_t> without(b.mask);
  for (std::size_t i = 0; i < 2; ++i) without[i * 6] = 0;
  EXPECT_EQ(ops::masked_mean_pool_batched(out.last(), without)->value, layer_pool(out, 2, b.mask)->value);
}

TEST(Encoder, ZeroLayerEncoderIsLinearInEmbeddings) {
  auto s = EncoderState::initialize(small_config(0), 2, 3);
  const TokenBatch b = make_tokens(2, 6, 9, 20);
  const Tensor e = sentence_embedding(s, b);
  for (const char* name : {"embeddings.token", "embeddings.position", "embeddings.segment"}) {
    for (auto& v : s.param(name)->value.values()) v *= 3.0;
  }
  const Tensor scaled = sentence_embedding(s, b);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(scaled[i], 3.0 * e[i], 1e-15);
}

TEST(Encoder, VocabularyError) {
  const auto s = EncoderState::initialize(small_config(), 2, 3);
  TokenBatch b = make_tokens(1, 4, 1, 20);
  b.ids[1] = 20;
  try {
    encode(s, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Vocabulary);
  }
}

TEST(Encoder, EndToEndGradientCheck) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto cfg = small_config(2, 8, 2);
    auto s = EncoderState::initialize(cfg, 3, seed);
    s.add_domain_corruption_heads(2, {1, 2}, seed);
    for (const auto& [name, var] : s.params.entries()) {
      Rng rng(derive_seed(seed, name, 1));
      // Random gains/biases and larger weights keep every path informative.
      for (auto& v : var->value.values()) v += 0.3 * rng.normal();
    }
    const TokenBatch b = make_tokens(2, 6, seed, 20, 3);
    std::vector<Var> leaves;
    std::vector<Var> key_biases;
    std::vector<std::string> names;
    for (const auto& [name, var] : s.params.entries()) {
      if (name == "embeddings.token") continue;  // checked on its own below
      // Softmax cancels a shift shared by every key, so these gradients are
      // exactly zero and a relative comparison would only measure rounding.
      if (name.find("attention.key.bias") != std::string::npos) {
        key_biases.push_back(var);
        continue;
      }
      leaves.push_back(var);
      names.push_back(name);
    }
    auto loss = [&] {
      const auto out = encode(s, b);
      Var logits = label_logits(s, cls_feature(out));
      const std::vector<double> w{0.7, 1.0};
      Var tlc = ops::weighted_cross_entropy(logits, b.labels, w);
      Var h = layer_pool(out, 1, b.mask);
      Var pooled = ops::add(h, ops::gather_rows(s.param("mft.domain_embedding"), std::vector<int>{0, 1}));
      Var tdc = ops::weighted_cross_entropy(
          ops::linear(pooled, s.param("mft.domain_head.1.weight"), s.param("mft.domain_head.1.bias")),
          std::vector<int>{1, 1}, w);
      return ops::add(tlc, ops::scale(tdc, 0.3));
    };
    const auto gc = mft::testing::check_gradients(leaves, loss);
    EXPECT_LT(gc.worst, 1e-4) << "seed " << seed << " " << gc.where << " "
                              << names.at(std::stoul(gc.where.substr(5)));
    const auto gt = mft::testing::check_gradients({s.param("embeddings.token")}, loss);
    EXPECT_LT(gt.worst, 1e-4) << "seed " << seed << " token table";
    for (const auto& kb : key_biases) {
      kb->ensure_grad();
      kb->grad.fill(0.0);
    }
    backward(loss());
    for (const auto& kb : key_biases) {
      for (double g : kb->grad.values()) EXPECT_LT(std::abs(g), 1e-12);
    }
  }
}

TEST(Encoder, InitIsIndependentOfExtraHeads) {
  const auto plain = EncoderState::initialize(small_config(), 2, 5);
  auto with_heads = EncoderState::initialize(small_config(), 2, 5);
  with_heads.add_domain_corruption_heads(3, {1, 2}, 5);
  for (const auto& [name, var] : plain.params.entries()) EXPECT_EQ(var->value, with_heads.param(name)->value) << name;
  EXPECT_EQ(with_heads.param(kDomainEmbedding)->value.shape(), (Shape{3, 8}));
  EXPECT_TRUE(with_heads.has_domain_heads());
  EXPECT_THROW(with_heads.add_domain_corruption_heads(3, {3}, 5), Error);
}

TEST(Checkpoint, RoundTripAndByteReproducible) {
  auto s = EncoderState::initialize(small_config(), 3, 11);
  s.add_domain_corruption_heads(2, {2}, 11);
  const std::string bytes = checkpoint_bytes(s);
  auto again = EncoderState::initialize(small_config(), 3, 11);
  again.add_domain_corruption_heads(2, {2}, 11);
  EXPECT_EQ(checkpoint_bytes(again), bytes);
  const EncoderState back = checkpoint_from_bytes(bytes);
  EXPECT_EQ(back.config, s.config);
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(back.taps, s.taps);
  ASSERT_EQ(back.params.size(), s.params.size());
  for (const auto& [name, var] : s.params.entries()) EXPECT_EQ(back.param(name)->value, var->value);
  EXPECT_EQ(checkpoint_bytes(back), bytes);
  EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, bytes.size() / 2)), Error);
}

TEST(ParameterStore, CopiesAreDeep) {
  auto s = EncoderState::initialize(small_config(), 2, 1);
  EncoderState copy = s;
  copy.param("heads.label.bias")->value[0] = 9.0;
  EXPECT_EQ(s.param("heads.label.bias")->value[0], 0.0);
  EXPECT_THROW(s.param("missing"), Error);
}
