#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ebll {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mix a base seed with a list of integer tags into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags so that unrelated consumers of one run seed never share draws.
enum class Stream : std::uint64_t {
  Trunk = 1,
  Head = 2,
  Epoch = 3,
  Autoencoder = 4,
  AutoencoderEpoch = 5,
  JointSchedule = 6,
  Augment = 7,
  Analysis = 8,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream s, std::initializer_list<std::uint64_t> tags = {}) {
  std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(s)});
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace ebll
