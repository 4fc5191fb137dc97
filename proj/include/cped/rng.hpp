#pragma once

// Seedable 64-bit generator with purpose-labelled substreams.
//
// stream(label) derives a child from the parent's *seed and label*, never from
// its position, so adding a consumer in one stream leaves every other stream's
// draws unchanged.

#include <cstdint>
#include <random>
#include <string_view>

namespace cped {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng stream(std::string_view label) const;
  Rng stream(std::uint64_t index) const;
  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (portable, no library distribution).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cped
