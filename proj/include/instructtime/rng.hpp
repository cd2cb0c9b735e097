#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace instructtime {

// Seeded random source with platform-independent distributions.
//
// std::uniform_real_distribution and std::normal_distribution are
// implementation defined, so datasets and initializations would differ
// between standard libraries. Only the engine (mt19937_64, fully specified)
// comes from <random>; the transforms below are ours.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

// Derive a stream seed from a root seed and a path of indices, e.g.
// derive_seed(seed, {sample_index, component}).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

}  // namespace instructtime
