#pragma once

#include <cstdint>
#include <random>

#include "spacy/autodiff/tensor.hpp"

namespace spacy {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent sub-streams from a seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng substream(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

inline ad::Tensor normal_tensor(const ad::Shape& shape, Rng& rng, double mean = 0.0, double sd = 1.0) {
  ad::Tensor t(shape);
  std::normal_distribution<double> dist(mean, sd);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline ad::Tensor uniform_tensor(const ad::Shape& shape, Rng& rng, double lo, double hi) {
  ad::Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace spacy
