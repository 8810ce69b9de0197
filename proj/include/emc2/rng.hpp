#pragma once

#include <cstdint>

namespace emc2 {

// Counter-based random streams. A stream is identified by
// (seed, lane, a, b) and yields a deterministic sequence indexed by an
// internal step counter, so draws are reproducible regardless of which
// worker executes them and streams with distinct ids are independent.
//
// Conventions used across the library:
//   lane ChainInit,  a = 0,          b = anchor/base id   (one draw at load)
//   lane ChainStep,  a = iteration,  b = chain entity id
//   lane Batch,      a = iteration,  b = 0
//   lane Augment,    a = iteration,  b = base id          (view index = step)
// Training-time iterations are passed 1-based so (ChainInit, 0, i, 0)
// never collides with a step stream.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

enum class Lane : std::uint64_t {
  ParamInit = 1,
  ChainInit = 2,
  ChainStep = 3,
  Batch = 4,
  Augment = 5,
  Synth = 6,
  Probe = 7,
  BiasEstimate = 8,
};

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, Lane lane, std::uint64_t a, std::uint64_t b,
               std::uint64_t c = 0) {
    std::uint64_t k = splitmix64(seed ^ 0x243f6a8885a308d3ull);
    k = splitmix64(k ^ static_cast<std::uint64_t>(lane));
    k = splitmix64(k ^ a);
    k = splitmix64(k ^ b);
    key_ = splitmix64(k ^ c);
  }

  std::uint64_t next_u64() {
    return splitmix64(key_ ^ splitmix64(step_++ ^ 0x632be59bd9b4e019ull));
  }

  // Advances the step counter without drawing; keeps traces aligned when a
  // logical draw is skipped (e.g. M-H acceptance with Q >= 1).
  void skip() { ++step_; }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n); consumes exactly one step (multiply-shift map,
  // bias < n / 2^64 which is negligible for the set sizes used here).
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; consumes two steps.
  double next_normal();

  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t step_ = 0;
};

}  // namespace emc2
