#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sparnet {

// 64-bit finalizer used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

// Deterministic random stream. The conversions from raw engine output to
// uniform/normal variates are done here rather than through <random>
// distributions, whose algorithms are implementation-defined; this keeps
// generated data byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  // Stream keyed by (seed, index, tag), e.g. (global_seed, sample, "blur").
  Rng(std::uint64_t seed, std::uint64_t index, std::string_view tag);

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

}  // namespace sparnet
