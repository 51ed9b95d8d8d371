#include "lse/disorder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lse {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr std::int64_t kTimeLimit = std::int64_t{1} << 24;
constexpr std::uint32_t kBlockLimit = 1u << 8;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

Philox4x32::Counter Philox4x32::apply(Counter ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

DisorderStream::DisorderStream(std::uint64_t seed, std::uint32_t replica, StreamLayout layout)
    : seed_(seed), replica_(replica), layout_(layout) {}

Philox4x32::Counter DisorderStream::raw(std::int64_t t, SiteKey site, std::uint32_t block) const {
  if (t < 0 || t >= kTimeLimit) throw std::out_of_range("disorder stream: time out of range");
  if (block >= kBlockLimit) throw std::out_of_range("disorder stream: slot out of range");
  const Philox4x32::Counter ctr{
      static_cast<std::uint32_t>(t) | (block << 24), replica_,
      static_cast<std::uint32_t>(site), static_cast<std::uint32_t>(site >> 32)};
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                            static_cast<std::uint32_t>(seed_ >> 32)};
  return Philox4x32::apply(ctr, key);
}

double DisorderStream::uniform(std::int64_t t, SiteKey site, std::uint32_t slot) const {
  if (layout_ == StreamLayout::swapped_slots) slot ^= 1u;
  const auto words = raw(t, site, slot / 2);
  const unsigned lane = 2 * (slot % 2);
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(words[lane]) << 32) | words[lane + 1];
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double DisorderStream::gaussian(std::int64_t t, SiteKey site, std::uint32_t slot) const {
  const double u1 = uniform(t, site, slot);
  const double u2 = uniform(t, site, slot + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t DisorderStream::index(std::int64_t t, SiteKey site, std::uint32_t slot,
                                    std::uint32_t n) const {
  const auto k = static_cast<std::uint32_t>(uniform(t, site, slot) * n);
  return k < n ? k : n - 1;
}

}  // namespace lse
