#pragma once

#include <cstdint>
#include <random>

namespace ragmarl {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard. Conversions to doubles are done here rather than
// through <random> distributions, which are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  /// Stream for an independent consumer, e.g. one question in a batch.
  static RngStream derive(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64() {
    ++position_;
    return engine_();
  }

  /// Uniform in [0, 1) with 53 random bits; one engine draw.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n); one engine draw (modulo bias is below 2^-40
  /// for the sizes used here).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal by Box-Muller; two engine draws, no caching.
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to mix seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace ragmarl
