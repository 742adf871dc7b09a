#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>

// ============================================================================
// Counter-based random number generation (Philox 4x32-10).
//
// Every random decision in this codebase draws from a CounterRng constructed
// from (seed, stream id). Streams are stateless functions of their key, so
// any particle, rollout, or replicate can be generated independently on any
// thread and the overall run is bit-identical regardless of worker count or
// evaluation order. Stream ids are packed from small structured fields so two
// distinct decision sites can never collide.
// ============================================================================

namespace apps {

/** Decision site. One domain per kind of random draw the system makes. */
enum class RngDomain : std::uint8_t {
  propose = 1,    // token sampling during block proposal
  rollout = 2,    // lookahead rollouts for the selection potential
  resample = 3,   // ancestor selection at block boundaries
  finalize = 4,   // final completion selection
  init = 5,       // parameter initialization
  dropout = 6,    // dropout masks during training
  dataset = 7,    // dataset shuffling and splits
  study = 8,      // study-level auxiliary draws
  misc = 9,
};

/**
 * Pack a stream id from structured fields:
 *   bits 56..63  domain
 *   bits 36..55  boundary / epoch / row  (20 bits)
 *   bits 12..35  slot / group            (24 bits)
 *   bits  0..11  lane                    (12 bits)
 */
inline std::uint64_t stream_id(RngDomain domain, std::uint64_t boundary,
                               std::uint64_t slot = 0, std::uint64_t lane = 0) {
  assert(boundary < (1ull << 20));
  assert(slot < (1ull << 24));
  assert(lane < (1ull << 12));
  return (static_cast<std::uint64_t>(domain) << 56) | (boundary << 36) |
         (slot << 12) | lane;
}

namespace detail {

// One round of Philox 4x32. Constants from the reference implementation.
inline void philox4x32_round(std::array<std::uint32_t, 4>& ctr,
                             std::array<std::uint32_t, 2>& key) {
  constexpr std::uint64_t kMul0 = 0xD2511F53ull;
  constexpr std::uint64_t kMul1 = 0xCD9E8D57ull;
  const std::uint64_t p0 = kMul0 * ctr[0];
  const std::uint64_t p1 = kMul1 * ctr[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  key[0] += 0x9E3779B9u;  // golden ratio
  key[1] += 0xBB67AE85u;  // sqrt(3) - 1
}

/** Philox 4x32-10 block function: 4 output words from (counter, key). */
inline std::array<std::uint32_t, 4> philox4x32_10(
    std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) philox4x32_round(ctr, key);
  return ctr;
}

}  // namespace detail

/**
 * Deterministic stream of random values keyed by (seed, stream).
 *
 * The 128-bit Philox counter is laid out as {block_lo, block_hi, stream_lo,
 * stream_hi} and the 64-bit key is the seed, so equal (seed, stream) pairs
 * reproduce the same sequence and distinct pairs give independent streams.
 *
 * Usage:
 *   CounterRng rng(seed, stream_id(RngDomain::propose, boundary, slot));
 *   double u = rng.next_double();
 */
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_{static_cast<std::uint32_t>(stream),
                static_cast<std::uint32_t>(stream >> 32)} {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      buffer_ = detail::philox4x32_10(
          {static_cast<std::uint32_t>(block_),
           static_cast<std::uint32_t>(block_ >> 32), stream_[0], stream_[1]},
          key_);
      ++block_;
      pos_ = 0;
    }
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  /** Uniform double in [0, 1) with 53 random bits. */
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /** Standard normal via Box-Muller; pairs are cached. */
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 2> stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace apps
