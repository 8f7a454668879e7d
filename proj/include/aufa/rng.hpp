#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace aufa {

using Rng = std::mt19937_64;

// Independent, reproducible stream for (seed, tag...). Distinct tags give
// statistically unrelated sequences, so consumers never share draws.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (std::uint64_t t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace aufa
