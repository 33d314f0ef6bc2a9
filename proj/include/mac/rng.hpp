#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mac {

// SplitMix64 finalizer; used to derive independent seed streams.
std::uint64_t mix64(std::uint64_t x);

// Deterministic child seed from a base seed and a sequence of tags,
// e.g. derive_seed(global, {epoch, sample_id, kVideoMaskTag}).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

// Seeded generator. All mappings from raw engine output to numbers are done
// here rather than through <random> distributions, whose algorithms are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Normal(0, std) resampled until |z| <= 2 std.
  double truncated_normal(double std);

  // First `count` entries of a uniform random permutation of [0, n).
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t count);

 private:
  std::mt19937_64 engine_;
};

}  // namespace mac
