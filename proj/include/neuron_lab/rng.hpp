#pragma once

#include <cstdint>
#include <random>

namespace neuron_lab {

using Rng = std::mt19937_64;

// Stream derivation rule. A generator is identified by a base seed and a
// path of up to three 64-bit labels. All words are split into 32-bit halves
// and fed to std::seed_seq in the order
//   (seed_lo, seed_hi, a_lo, a_hi, b_lo, b_hi, c_lo, c_hi),
// so distinct paths give unrelated streams and the same path always gives
// the same stream, independent of thread count or execution order.
Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0);

// First label of a stream path; keeps consumers of randomness apart.
namespace stream {
inline constexpr std::uint64_t mc_samples = 0x4d43;       // Monte Carlo sample chunks
inline constexpr std::uint64_t mc_unpaired = 0x4d4355;    // non-CRN evaluations
inline constexpr std::uint64_t trial = 0x5452;            // per-trial initializations
inline constexpr std::uint64_t battery = 0x4241;          // checker battery configs
inline constexpr std::uint64_t constants = 0x434f;        // spread-constant estimates
inline constexpr std::uint64_t oracle = 0x4f52;           // test oracles
}  // namespace stream

// 64-bit FNV-1a over raw bytes; used to key streams by parameter values.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace neuron_lab
