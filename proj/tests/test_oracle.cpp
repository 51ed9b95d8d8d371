#include <cmath>
#include <map>

#include "doctest.h"
#include "lse/oracle.hpp"

using namespace lse;

namespace {

// Forward transfer N_s(y) = sum_x N_{s-1}(x) A_{s,x,y} in long double, a
// second route to the same numbers as the path sum.
std::map<SiteKey, long double> transfer(const ModelSpec& spec, const DisorderStream& stream,
                                        std::int64_t t) {
  const int d = spec.dim;
  std::map<SiteKey, long double> cur{{origin_key(d), 1.0L}};
  const auto steps = l1_ball(d, 1);
  for (std::int64_t s = 1; s <= t; ++s) {
    std::map<SiteKey, long double> next;
    for (const auto& [k, w] : cur) {
      const auto x = unpack_site(k, d);
      for (const auto& o : steps) {
        SitePoint y;
        for (int i = 0; i < d; ++i) y.x[i] = x.x[i] + o.x[i];
        const double a = matrix_entry(spec, stream, s, x, y);
        if (a != 0.0) next[pack_site(y, d)] += w * a;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

TEST_CASE("path enumeration examples") {
  SUBCASE("t = 0 is a single particle") {
    const auto e = enumerate_exact(ModelSpec::gobp(2, 0.5, 0.5), DisorderStream(1, 0), 0);
    REQUIRE(e.counts.size() == 1);
    CHECK(e.counts.at(origin_key(2)) == 1);
  }
  SUBCASE("OSP one open site") {
    const auto spec = ModelSpec::osp(1, 0.5);
    const auto km = pack_site(make_site({-1}), 1), kp = pack_site(make_site({1}), 1);
    for (std::uint32_t rep = 0; rep < 100; ++rep) {
      const DisorderStream st(3, rep);
      if (st.bernoulli(1, km, 0, 0.5) && !st.bernoulli(1, kp, 0, 0.5)) {
        const auto e = enumerate_exact(spec, st, 1);
        REQUIRE(e.counts.size() == 1);
        CHECK(e.counts.at(km) == 1);
        break;
      }
    }
  }
  SUBCASE("DPRE beta = 0 gives binomial weights") {
    auto spec = ModelSpec::dpre(1, 0.0);
    spec.allow_degenerate = true;
    const auto f = enumerate_exact(spec, DisorderStream(1, 0), 2).field();
    CHECK(f.support_size() == 3);
    CHECK(f.at(make_site({-2})) == doctest::Approx(0.25));
    CHECK(f.at(make_site({0})) == doctest::Approx(0.5));
    CHECK(f.at(make_site({2})) == doctest::Approx(0.25));
  }
  SUBCASE("path budget") {
    CHECK_THROWS_AS(enumerate_exact(ModelSpec::gobp(2, 0.9, 0.9), DisorderStream(1, 0), 10, 1000),
                    OracleBudgetExceeded);
  }
}

TEST_CASE("path sums agree with a forward transfer") {
  const std::vector<ModelSpec> suite{ModelSpec::osp(1, 0.7), ModelSpec::gosp(2, 0.4, 0.5),
                                     ModelSpec::gobp(1, 0.6, 0.3), ModelSpec::dpre(1, 0.8),
                                     ModelSpec::bcpp(2, 0.7, 0.4)};
  for (const auto& spec : suite) {
    for (std::uint32_t rep = 0; rep < 5; ++rep) {
      const DisorderStream st(21, rep);
      const std::int64_t t = spec.dim == 1 ? 7 : 4;
      const auto e = enumerate_exact(spec, st, t);
      const auto ref = transfer(spec, st, t);
      INFO(spec.describe(), " replica ", rep);
      if (e.integer) {
        CHECK(e.counts.size() == ref.size());
        for (const auto& [k, c] : e.counts)
          CHECK(static_cast<long double>(c) == ref.at(k));
      } else {
        CHECK(e.weights.size() == ref.size());
        for (const auto& [k, w] : e.weights)
          CHECK(static_cast<double>(w) == doctest::Approx(static_cast<double>(ref.at(k))).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("oracle equivalence over seeded matrices") {
  struct Row {
    ModelSpec spec;
    int seeds;
    std::int64_t t;
  };
  const std::vector<Row> rows{
      {ModelSpec::osp(1, 0.6), 100, 8},
      {ModelSpec::gobp(2, 0.3, 0.2), 20, 5},
      {ModelSpec::bcpp(1, 0.5, 0.5), 50, 6},
      {ModelSpec::gosp(1, 0.5, 0.4), 20, 8},
      {ModelSpec::dpre(2, 0.9), 10, 4},
      {ModelSpec::dpre(1, 0.5, EnvLaw::bernoulli(0.4)), 10, 8},
  };
  for (const auto& row : rows) {
    int matches = 0;
    for (int s = 0; s < row.seeds; ++s) {
      const auto v = oracle_equivalence(row.spec, 1000 + s, static_cast<std::uint32_t>(s), row.t);
      if (!v.ok) MESSAGE(row.spec.describe() << ": " << v.message);
      matches += v.ok;
    }
    INFO(row.spec.describe());
    CHECK(matches == row.seeds);
  }
}

TEST_CASE("a corrupted stream layout is detected") {
  for (const auto& spec : {ModelSpec::gosp(1, 0.5, 0.4), ModelSpec::bcpp(1, 0.5, 0.5),
                           ModelSpec::gobp(1, 0.6, 0.3)}) {
    int failures = 0;
    std::string first;
    for (std::uint32_t s = 0; s < 20; ++s) {
      const auto v = oracle_equivalence(spec, 77, s, 6, StreamLayout::swapped_slots);
      if (!v.ok) {
        ++failures;
        if (first.empty() && v.message.find("site") != std::string::npos) first = v.message;
      }
    }
    INFO(spec.describe());
    CHECK(failures > 0);
    CHECK_FALSE(first.empty());  // some failure names the divergent site
  }
}

TEST_CASE("exhaustive laws: OSP at t = 1") {
  for (const double pd : {0.5, 0.3, 0.8}) {
    const auto law = exhaustive_distribution(ModelSpec::osp(1, pd), 1);
    const Rational pp(pd);  // the exact binary value of p
    CHECK(law.bits == 2);
    CHECK(law.total_probability == 1);
    CHECK(law.martingale_exact);
    CHECK(law.mean_normalized_mass == 1);
    // |N_1| = k with binomial weights; |N̄_1| = k / (2p).
    for (int k = 0; k <= 2; ++k) {
      const Rational mass = Rational(k) / (2 * pp);
      const Rational prob = law.expect([&](const Rational& m, const Rational&) {
        return m == mass ? Rational(1) : Rational(0);
      });
      const Rational q = 1 - pp;
      const Rational expect = k == 0 ? Rational(q * q) : k == 1 ? Rational(2 * pp * q) : Rational(pp * pp);
      CHECK(prob == expect);
      const Rational overlap = law.expect([&](const Rational& m, const Rational& r) {
        return m == mass ? r : Rational(0);
      });
      const Rational r_value = k == 0 ? Rational(0) : k == 1 ? Rational(1) : Rational(1, 2);
      CHECK(overlap == r_value * expect);
    }
  }
}

TEST_CASE("exhaustive laws are exact martingales") {
  for (const auto& [spec, t] : std::vector<std::pair<ModelSpec, std::int64_t>>{
           {ModelSpec::osp(1, 0.6), 3},
           {ModelSpec::gosp(1, 0.5, 0.3), 3},
           {ModelSpec::gobp(1, 0.7, 0.2), 2},
           {ModelSpec::osp(2, 0.3), 2}}) {
    const auto law = exhaustive_distribution(spec, t);
    INFO(spec.describe(), " t=", t, " bits=", law.bits);
    CHECK(law.total_probability == 1);
    CHECK(law.mean_normalized_mass == 1);
    CHECK(law.martingale_exact);
    CHECK(law.expect([](const Rational&, const Rational& r) { return r; }) <=
          law.total_probability);
  }
  CHECK_THROWS_AS(exhaustive_distribution(ModelSpec::gobp(2, 0.5, 0.5), 4, 24),
                  OracleBudgetExceeded);
}

TEST_CASE("exhaustive law of the pure-diagonal model") {
  auto spec = ModelSpec::gosp(1, 0.0, 1.0);
  spec.allow_degenerate = true;
  const auto law = exhaustive_distribution(spec, 5);
  CHECK(law.bits == 0);
  REQUIRE(law.outcomes.size() == 1);
  CHECK(law.outcomes[0].normalized_mass == 1);
  CHECK(law.outcomes[0].overlap == 1);
  CHECK(law.outcomes[0].probability == 1);
}
