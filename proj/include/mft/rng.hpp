#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mft {

// mt19937_64 with distributions written out explicitly: the standard
// library distributions are implementation-defined, and checkpoints and
// generated corpora must be byte-identical given a seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t below(std::uint64_t n);

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Draw from a discrete distribution given nonnegative weights.
  std::size_t categorical(const std::vector<double>& weights);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic sub-stream seeds so unrelated consumers of randomness never
// perturb each other (e.g. batch order vs corruption draws).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace mft
