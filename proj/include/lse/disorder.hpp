#pragma once

// Counter-based disorder: every variate is a pure function of
// (seed, replica, time, site, slot), so environments are never stored and
// any consumer can regenerate them in any order.

#include <array>
#include <cstdint>

#include "lse/lattice.hpp"

namespace lse {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter apply(Counter ctr, Key key);
};

enum class StreamLayout {
  canonical,
  /// Test fixture: flips the lowest slot bit, so e.g. eta and zeta trade places.
  swapped_slots,
};

class DisorderStream {
 public:
  DisorderStream(std::uint64_t seed, std::uint32_t replica,
                 StreamLayout layout = StreamLayout::canonical);

  std::uint64_t seed() const { return seed_; }
  std::uint32_t replica() const { return replica_; }
  StreamLayout layout() const { return layout_; }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform(std::int64_t t, SiteKey site, std::uint32_t slot) const;
  /// Four raw 32-bit words for block `block` of (t, site).
  Philox4x32::Counter raw(std::int64_t t, SiteKey site, std::uint32_t block) const;
  /// Standard normal by Box-Muller from slots (slot, slot + 1).
  double gaussian(std::int64_t t, SiteKey site, std::uint32_t slot) const;
  bool bernoulli(std::int64_t t, SiteKey site, std::uint32_t slot, double p) const {
    return uniform(t, site, slot) < p;
  }
  /// Uniform integer in [0, n).
  std::uint32_t index(std::int64_t t, SiteKey site, std::uint32_t slot, std::uint32_t n) const;

 private:
  std::uint64_t seed_;
  std::uint32_t replica_;
  StreamLayout layout_;
};

}  // namespace lse
