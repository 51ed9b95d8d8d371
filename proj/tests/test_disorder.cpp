#include <cmath>
#include <set>

#include "doctest.h"
#include "lse/disorder.hpp"

using namespace lse;

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  CHECK(Philox4x32::apply(C{0, 0, 0, 0}, K{0, 0}) ==
        C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::apply(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                          K{0xffffffffu, 0xffffffffu}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::apply(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                          K{0xa4093822u, 0x299f31d0u}) ==
        C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("variates are pure functions of their coordinates") {
  const DisorderStream a(42, 3), b(42, 3);
  const auto site = pack_site(make_site({5, -2}), 2);
  // Any query order gives the same values.
  const double u1 = a.uniform(7, site, 1);
  for (int t = 0; t < 20; ++t) (void)a.uniform(t, site, 0);
  CHECK(a.uniform(7, site, 1) == u1);
  CHECK(b.uniform(7, site, 1) == u1);
  CHECK(DisorderStream(43, 3).uniform(7, site, 1) != u1);
  CHECK(DisorderStream(42, 4).uniform(7, site, 1) != u1);
  CHECK(a.uniform(8, site, 1) != u1);
  CHECK(a.uniform(7, site, 0) != u1);
  CHECK(a.uniform(7, site + 1, 1) != u1);
}

TEST_CASE("uniforms lie in (0,1) and have the right first two moments") {
  const DisorderStream s(1, 0);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform(i, 12345, i % 5);
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(sum2 / n - 1.0 / 3) < 4 * std::sqrt(4.0 / 45 / n));
}

TEST_CASE("gaussian variates are standard normal") {
  const DisorderStream s(9, 1);
  const int n = 200000;
  double sum = 0, sum2 = 0, sum4 = 0;
  for (int i = 0; i < n; ++i) {
    const double g = s.gaussian(i, 77, 0);
    REQUIRE(std::isfinite(g));
    sum += g;
    sum2 += g * g;
    sum4 += g * g * g * g;
  }
  CHECK(std::abs(sum / n) < 4 * std::sqrt(1.0 / n));
  CHECK(std::abs(sum2 / n - 1.0) < 4 * std::sqrt(2.0 / n));
  CHECK(std::abs(sum4 / n - 3.0) < 4 * std::sqrt(96.0 / n));
}

TEST_CASE("index is uniform on [0, n)") {
  const DisorderStream s(5, 0);
  const std::uint32_t n = 6;
  const int draws = 60000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const auto k = s.index(i, 0, 2, n);
    REQUIRE(k < n);
    ++counts[k];
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - draws / 6.0) * (c - draws / 6.0) / (draws / 6.0);
  CHECK(chi2 < 20.5);  // chi-square(5) upper 0.1% point
}

TEST_CASE("swapped layout exchanges neighbouring slots") {
  const DisorderStream canon(3, 2), swapped(3, 2, StreamLayout::swapped_slots);
  for (std::uint32_t slot = 0; slot < 6; ++slot) {
    CHECK(swapped.uniform(4, 99, slot) == canon.uniform(4, 99, slot ^ 1u));
  }
}

TEST_CASE("slots within a block are distinct lanes") {
  const DisorderStream s(1, 1);
  std::set<double> seen;
  for (std::uint32_t slot = 0; slot < 8; ++slot) seen.insert(s.uniform(0, 0, slot));
  CHECK(seen.size() == 8);
}
