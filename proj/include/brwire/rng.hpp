#pragma once

// Keyed SplitMix64 streams. A stream is identified by a 64-bit key derived
// from a path of integers (master seed, replicate, domain, generation,
// particle ordinal), so any draw can be regenerated without replaying the
// draws that precede it in some schedule.

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace brwire {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t root,
                                   std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t k = mix64(root + kGolden);
  for (std::uint64_t p : path) k = mix64(k ^ mix64(p + kGolden));
  return k;
}

/// SplitMix64 generator; satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr explicit Stream(std::uint64_t key) noexcept : state_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(operator()() >> 11) * 0x1.0p-53; }

  /// Independent child stream.
  Stream split(std::uint64_t tag) const noexcept { return Stream(derive_key(state_, {tag})); }

 private:
  std::uint64_t state_;
};

enum class Domain : std::uint64_t {
  environment = 1,
  reproduction = 2,
  immigration = 3,
  oracle = 4,
};

/// Reproduction streams of one generation with the shared key prefix
/// hoisted; particle(u) matches ReplicateStreams::particle(generation, u).
class GenerationStreams {
 public:
  constexpr explicit GenerationStreams(std::uint64_t prefix) noexcept : prefix_(prefix) {}

  Stream particle(std::uint64_t ordinal) const noexcept {
    return Stream(mix64(prefix_ ^ mix64(ordinal + kGolden)));
  }

 private:
  std::uint64_t prefix_;
};

/// All streams of one replicate, keyed by (master_seed, replicate_index).
class ReplicateStreams {
 public:
  ReplicateStreams(std::uint64_t master_seed, std::uint64_t replicate) noexcept
      : key_(derive_key(master_seed, {replicate})) {}

  Stream environment(int generation) const noexcept {
    return Stream(derive_key(key_, {static_cast<std::uint64_t>(Domain::environment),
                                    static_cast<std::uint64_t>(generation)}));
  }
  Stream particle(int generation, std::uint64_t ordinal) const noexcept {
    return Stream(derive_key(key_, {static_cast<std::uint64_t>(Domain::reproduction),
                                    static_cast<std::uint64_t>(generation), ordinal}));
  }
  GenerationStreams particles(int generation) const noexcept {
    return GenerationStreams(derive_key(key_, {static_cast<std::uint64_t>(Domain::reproduction),
                                               static_cast<std::uint64_t>(generation)}));
  }
  Stream immigration(int generation) const noexcept {
    return Stream(derive_key(key_, {static_cast<std::uint64_t>(Domain::immigration),
                                    static_cast<std::uint64_t>(generation)}));
  }

 private:
  std::uint64_t key_;
};

}  // namespace brwire
