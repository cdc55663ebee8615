#pragma once

#include <cstdint>
#include <vector>

namespace tnp {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (key, n), so streams can be split without sharing state. Distributions are
// implemented here rather than with <random> so sequences are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  std::vector<int> permutation(int n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace tnp
