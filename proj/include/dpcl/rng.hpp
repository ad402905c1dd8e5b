#pragma once

#include <cstdint>
#include <vector>

namespace dpcl {

// Counter-based generator: the i-th draw is splitmix64(key + i * golden),
// with the key derived from (seed, stream). Output depends only on
// (seed, stream, counter), so it is identical across runs and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (both outputs used).
  double normal();
  // k distinct indices from [0, n) in sampling order (partial Fisher-Yates).
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Derives an independent child seed, e.g. per image or per training step.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace dpcl
