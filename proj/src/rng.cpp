#include "mft/rng.hpp"

#include <cmath>
#include <numbers>

#include "mft/error.hpp"

namespace mft {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) fail(ErrorKind::Index, "Rng::below called with n = 0");
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (weights.empty() || !(total > 0.0)) {
    fail(ErrorKind::State, "categorical draw needs positive total weight");
  }
  const double target = uniform() * total;
  double running = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    running += weights[i];
    if (target < running) return i;
  }
  // Rounding can leave target == total; return the last positive entry.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  // splitmix64 finalizer over a mix of the three inputs
  std::uint64_t z = seed ^ (fnv1a64(tag) + 0x9e3779b97f4a7c15ULL * (index + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Index: return "index";
    case ErrorKind::Rank: return "rank";
    case ErrorKind::EmptyPool: return "empty-pool";
    case ErrorKind::Vocabulary: return "vocabulary";
    case ErrorKind::Degenerate: return "degenerate-vector";
    case ErrorKind::Membership: return "membership";
    case ErrorKind::Configuration: return "config";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::State: return "state";
    case ErrorKind::LabelSpace: return "label-space";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace mft
