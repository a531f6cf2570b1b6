#ifndef EVIDENCE_RNG_HPP
#define EVIDENCE_RNG_HPP

#include <cstdint>
#include <random>

namespace evidence {

using Rng = std::mt19937_64;

// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic engine for (seed, stream). Streams index independent
// substreams (one per repetition / replicate / particle block), so parallel
// work never shares generator state and results do not depend on scheduling.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  const std::uint64_t s = mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull));
  return Rng(s);
}

}  // namespace evidence

#endif
