#pragma once
// Reproducible random source. The engine (mt19937_64) has a standardised
// output sequence; the distributions below are implemented here instead of
// using <random>'s, whose algorithms differ between standard libraries.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fewshot/real.hpp"

namespace fewshot {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  // k distinct values from [0, n) in sampling order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
  }

  // Derives an independent stream, e.g. one per worker or per purpose.
  Rng fork(std::uint64_t salt);

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace fewshot
