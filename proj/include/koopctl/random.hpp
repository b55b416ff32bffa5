#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace koopctl {

using Rng = std::mt19937_64;

/// Deterministic child seed for a named stream (splitmix64 over an FNV-1a hash of the name).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// One seed split into independent named generators, so adding draws to one
/// component never shifts another component's sequence.
class RngStreams {
 public:
  enum Stream : std::size_t { kInit = 0, kEnv, kActorNoise, kBufferSampler, kAugment, kCount };

  explicit RngStreams(std::uint64_t seed = 0);

  Rng& operator[](Stream s) { return streams_[s]; }
  Rng& init() { return streams_[kInit]; }
  Rng& env() { return streams_[kEnv]; }
  Rng& actor_noise() { return streams_[kActorNoise]; }
  Rng& buffer_sampler() { return streams_[kBufferSampler]; }
  Rng& augment() { return streams_[kAugment]; }

  static std::string_view name(Stream s);

  /// Textual engine state, one stream per line.
  std::string serialize() const;
  void deserialize(const std::string& text);

 private:
  std::array<Rng, kCount> streams_;
};

}  // namespace koopctl
