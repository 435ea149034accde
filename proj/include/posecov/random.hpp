#pragma once

#include <cstdint>
#include <random>

namespace posecov {

/// SplitMix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Engine for substream `counter` of the stream identified by `seed`.
///
/// Work is partitioned into fixed-size chunks, each drawing from its own
/// substream, so results do not depend on how chunks are spread over threads.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(mix64(counter)),
                    static_cast<std::uint32_t>(mix64(counter) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace posecov
