#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace s2ig {

// All sampling in the library goes through this engine so that results are
// reproducible from a single integer seed.
using Rng = std::mt19937_64;

// splitmix64 mixing of (base, stream); used to give workers and records
// independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Unbiased integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

// Uniform double in [0, 1) from the top 53 bits.
double uniform_real(Rng& rng);

double uniform_real(Rng& rng, double lo, double hi);

// Box-Muller; independent of the standard library's distribution code so the
// synthetic corpus is identical across toolchains.
double standard_normal(Rng& rng);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace s2ig
