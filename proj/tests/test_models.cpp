#include <cmath>
#include <random>

#include "doctest.h"
#include "lse/models.hpp"

using namespace lse;

namespace {

// Closed-form P[A_{1,x,y} A_{1,x~,y}] written out from the model definitions,
// independently of the library evaluator.
double second_moment_oracle(const ModelSpec& s, const SitePoint& x, const SitePoint& xt,
                            const SitePoint& y) {
  const int d = s.dim;
  SitePoint o, ot;
  for (int i = 0; i < d; ++i) {
    o.x[i] = y.x[i] - x.x[i];
    ot.x[i] = y.x[i] - xt.x[i];
  }
  const int n = l1_norm(o, d), nt = l1_norm(ot, d);
  if (n > 1 || nt > 1) return 0.0;
  const bool same = (o == ot);
  switch (s.kind) {
    case ModelKind::osp:
      if (n == 0 || nt == 0) return 0.0;
      return s.p;  // one shared eta per column
    case ModelKind::gosp:
      if (n == 0 && nt == 0) return s.q;
      if (n == 0 || nt == 0) return s.p * s.q;
      return s.p;
    case ModelKind::gobp:
      if (n == 0 && nt == 0) return s.q;
      if (n == 0 || nt == 0) return s.p * s.q;
      return same ? s.p : s.p * s.p;  // independent bonds
    case ModelKind::dpre: {
      if (n == 0 || nt == 0) return 0.0;
      const double e2 = std::exp(lambda_dpre(2 * s.beta, s.env));
      return e2 / (4.0 * d * d);
    }
    case ModelKind::bcpp: {
      if (n == 0 && nt == 0) return s.q;
      if (n == 0 || nt == 0) return s.q * s.p / (2.0 * d);
      return same ? s.p / (2.0 * d) : 0.0;  // a single wind direction
    }
    case ModelKind::multiplicative:
      break;
  }
  return NAN;
}

std::vector<ModelSpec> builtin_suite(int d) {
  return {ModelSpec::osp(d, 0.6),        ModelSpec::gosp(d, 0.5, 0.3),
          ModelSpec::gobp(d, 0.4, 0.7),  ModelSpec::dpre(d, 0.7),
          ModelSpec::dpre(d, 0.5, EnvLaw::bernoulli(0.3)),
          ModelSpec::bcpp(d, 0.6, 0.2)};
}

}  // namespace

TEST_CASE("mean kernels") {
  SUBCASE("OSP d=1 p=0.5") {
    const auto mk = mean_kernel(ModelSpec::osp(1, 0.5));
    CHECK(mk.a.at(make_site({-1})) == 0.5);
    CHECK(mk.a.at(make_site({1})) == 0.5);
    CHECK(mk.a.support_size() == 2);
    CHECK(mk.norm_a == doctest::Approx(1.0));
    CHECK(mk.range == 1);
  }
  SUBCASE("BCPP d=1 p=0.6 q=0.2") {
    const auto mk = mean_kernel(ModelSpec::bcpp(1, 0.6, 0.2));
    CHECK(mk.a.at(make_site({-1})) == doctest::Approx(0.3));
    CHECK(mk.a.at(make_site({0})) == doctest::Approx(0.2));
    CHECK(mk.a.at(make_site({1})) == doctest::Approx(0.3));
    CHECK(mk.norm_a == doctest::Approx(0.8));
    CHECK(mk.norm_a2 == doctest::Approx(0.22));
  }
  SUBCASE("DPRE beta=0 is the simple random walk") {
    for (int d = 1; d <= 3; ++d) {
      auto s = ModelSpec::dpre(d, 0.0);
      s.allow_degenerate = true;
      const auto mk = mean_kernel(s);
      CHECK(mk.norm_a == doctest::Approx(1.0));
      for (const auto& e : unit_vectors(d)) CHECK(mk.a.at(e) == doctest::Approx(1.0 / (2 * d)));
    }
  }
  SUBCASE("GOSP |a| = 2dp + q") {
    CHECK(mean_kernel(ModelSpec::gosp(3, 0.2, 0.5)).norm_a == doctest::Approx(1.7));
  }
}

TEST_CASE("gamma constants") {
  CHECK(gamma_constant(ModelSpec::osp(1, 0.5)) == doctest::Approx(2.0));
  // 1 + (2*0.5*0.5 + 0.25) / 1.5^2 = 1 + 0.75/2.25
  CHECK(gamma_constant(ModelSpec::gosp(1, 0.5, 0.5)) == doctest::Approx(4.0 / 3.0));
  CHECK(gamma_constant(ModelSpec::dpre(2, 1.0)) == doctest::Approx(std::exp(1.0)));
  CHECK(gamma_constant(ModelSpec::bcpp(1, 0.6, 0.2)) ==
        doctest::Approx(1.0 + (0.24 + 0.16) / 0.64));
  auto flat = ModelSpec::dpre(1, 0.0);
  flat.allow_degenerate = true;
  CHECK(gamma_constant(flat) == doctest::Approx(1.0));
  CHECK_FALSE(satisfies_correlation_condition(gamma_constant(flat)));
  auto mult = ModelSpec::multiplicative(mean_kernel(ModelSpec::osp(2, 0.5)).a,
                                        DiscreteLaw{{0.0, 2.0}, {0.5, 0.5}});
  CHECK(gamma_constant(mult) == doctest::Approx(2.0));
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(validate(ModelSpec::osp(1, 0.0)), ModelError);
  CHECK_THROWS_AS(validate(ModelSpec::osp(1, 1.5)), ModelError);
  CHECK_THROWS_AS(validate(ModelSpec::gosp(1, 1.0, 1.0)), ModelError);  // trivial
  CHECK_THROWS_AS(validate(ModelSpec::dpre(1, -1.0)), ModelError);
  CHECK_THROWS_AS(validate(ModelSpec::osp(0, 0.5)), ModelError);
  CHECK_THROWS_AS(validate(ModelSpec::multiplicative(mean_kernel(ModelSpec::osp(1, 0.5)).a,
                                                     DiscreteLaw{{0.0, 3.0}, {0.5, 0.5}})),
                  ModelError);  // mean 1.5
  // A kernel supported on one axis does not span Z^2.
  const auto axis = WeightField::from_points(2, {{make_site({1, 0}), 0.5}, {make_site({-1, 0}), 0.5}});
  CHECK_THROWS_AS(validate(ModelSpec::multiplicative(axis, DiscreteLaw{{1.0}, {1.0}})),
                  ModelError);
  CHECK_FALSE(is_irreducible(axis));
  // A single-site kernel is irreducible only in the trivial sense of x - x = 0: not spanning.
  CHECK_FALSE(is_irreducible(WeightField::point_mass(1)));
  auto trivial = ModelSpec::gosp(1, 1.0, 1.0);
  trivial.allow_degenerate = true;
  CHECK_NOTHROW(validate(trivial));
}

TEST_CASE("lambda and slow-growth margins") {
  CHECK(lambda_dpre(1.0, EnvLaw::gaussian()) == doctest::Approx(0.5));
  CHECK(lambda_dpre(0.0, EnvLaw::bernoulli(0.5)) == 0.0);
  CHECK(lambda_dpre(1.7, EnvLaw::bernoulli(1.0)) == doctest::Approx(1.7));
  CHECK(lambda_dpre(0.8, EnvLaw::tabulated({0.0, 1.0}, {0.7, 0.3})) ==
        doctest::Approx(lambda_dpre(0.8, EnvLaw::bernoulli(0.3))));
  CHECK_THROWS(lambda_dpre(-0.1, EnvLaw::gaussian()));

  CHECK(sg_log_margin(ModelSpec::osp(1, 0.4)) == doctest::Approx(-0.8 * std::log(0.8)));
  CHECK(sg_log_margin(ModelSpec::osp(1, 0.4)) > 0.0);
  CHECK(sg_log_margin(ModelSpec::osp(1, 0.5)) == doctest::Approx(0.0));

  auto flat = ModelSpec::dpre(2, 0.0);
  flat.allow_degenerate = true;
  CHECK(sg_log_margin(flat) == doctest::Approx(-std::log(4.0)));

  // Direct evaluation of sum_y P[A ln A] - |a| ln|a| by quadrature over the
  // Gaussian density, with A = exp(beta eta) / 2d on each of the 2d neighbours.
  for (double beta : {0.3, 1.0, 1.6}) {
    for (int d : {1, 3}) {
      const double h = 1e-3;
      double eal = 0.0, ea = 0.0;
      for (double z = -14.0; z <= 14.0; z += h) {
        const double phi = std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI);
        const double a = std::exp(beta * z) / (2 * d);
        eal += phi * a * std::log(a) * h;
        ea += phi * a * h;
      }
      const double norm = 2 * d * ea;
      const double direct = 2 * d * eal - norm * std::log(norm);
      CHECK(sg_log_margin(ModelSpec::dpre(d, beta)) == doctest::Approx(direct).epsilon(1e-6));
    }
  }
}

TEST_CASE("closed-form column second moments") {
  const auto y = make_site({0});
  const auto l = make_site({-1}), r = make_site({1}), o = make_site({0});
  {
    const auto s = ModelSpec::osp(1, 0.5);
    CHECK(column_second_moment(s, mean_kernel(s), l, l, y) == doctest::Approx(0.5));
  }
  {
    const auto s = ModelSpec::gobp(1, 0.5, 0.5);
    CHECK(column_second_moment(s, mean_kernel(s), l, r, y) == doctest::Approx(0.25));
  }
  {
    const auto s = ModelSpec::bcpp(1, 0.6, 0.2);
    CHECK(column_second_moment(s, mean_kernel(s), o, r, y) == doctest::Approx(0.06));
    CHECK(column_second_moment(s, mean_kernel(s), r, o, y) == doctest::Approx(0.06));
  }
  for (int d = 1; d <= 2; ++d) {
    for (const auto& s : builtin_suite(d)) {
      const auto mk = mean_kernel(s);
      const auto ball = l1_ball(d, 2);
      const SitePoint yy = ball[ball.size() / 2];
      for (const auto& x : ball)
        for (const auto& xt : ball)
          CHECK(column_second_moment(s, mk, x, xt, yy) ==
                doctest::Approx(second_moment_oracle(s, x, xt, yy)).epsilon(1e-12));
    }
  }
}

TEST_CASE("empirical column covariances match the closed forms within 4 SE") {
  for (const auto& s : builtin_suite(1)) {
    const auto mk = mean_kernel(s);
    const auto ball = l1_ball(1, 1);
    const SitePoint y = make_site({0});
    for (const auto& x : ball) {
      for (const auto& xt : ball) {
        const auto est = empirical_column_covariance(s, 40'000, x, xt, y, 17);
        const double exact = column_second_moment(s, mk, x, xt, y);
        INFO(s.describe(), " x=", x.x[0], " x~=", xt.x[0]);
        CHECK(std::abs(est.mean - exact) <= 4 * est.std_error + 1e-14);
      }
    }
  }
}

TEST_CASE("matrix entries agree with the column sampler") {
  for (int d = 1; d <= 2; ++d) {
    for (const auto& s : builtin_suite(d)) {
      const auto mk = mean_kernel(s);
      const auto offs = column_offsets(s, mk);
      const DisorderStream stream(5, 2);
      std::vector<double> col(offs.size());
      for (const auto& y : l1_ball(d, 2)) {
        for (std::int64_t t = 1; t <= 3; ++t) {
          sample_column(s, offs, stream, t, pack_site(y, d), col);
          for (std::size_t i = 0; i < offs.size(); ++i) {
            SitePoint x;
            for (int k = 0; k < d; ++k) x.x[k] = y.x[k] - offs[i].x[k];
            CHECK(matrix_entry(s, stream, t, x, y) == col[i]);
          }
        }
      }
    }
  }
}

TEST_CASE("one-step examples") {
  SUBCASE("DPRE beta=0 from delta_0") {
    auto s = ModelSpec::dpre(2, 0.0);
    s.allow_degenerate = true;
    const auto next = sample_step(s, NormalizedState::initial(2), DisorderStream(1, 0), 1);
    CHECK(next.rho.support_size() == 4);
    for (const auto& e : unit_vectors(2)) CHECK(next.rho.at(e) == doctest::Approx(0.25));
    CHECK(next.log_mass == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("OSP p=0.5 with eta(-1)=1, eta(+1)=0") {
    const auto s = ModelSpec::osp(1, 0.5);
    const auto km = pack_site(make_site({-1}), 1), kp = pack_site(make_site({1}), 1);
    bool found = false;
    for (std::uint32_t rep = 0; rep < 100 && !found; ++rep) {
      const DisorderStream st(3, rep);
      if (st.bernoulli(1, km, 0, 0.5) && !st.bernoulli(1, kp, 0, 0.5)) {
        found = true;
        const auto next = sample_step(s, NormalizedState::initial(1), st, 1);
        CHECK(next.rho.support_size() == 1);
        CHECK(next.rho.at(make_site({-1})) == 1.0);
        // w(-1) = rho(0) A / |a| = 1 with |a| = 2dp = 1.
        CHECK(next.log_mass == doctest::Approx(0.0));
      }
    }
    CHECK(found);
  }
  SUBCASE("BCPP p=1 q=1: raw mass is 1 + number of winds pointing away from 0") {
    auto s = ModelSpec::bcpp(2, 1.0, 1.0);
    s.allow_degenerate = true;
    const auto units = unit_vectors(2);
    for (std::uint32_t rep = 0; rep < 50; ++rep) {
      const DisorderStream st(8, rep);
      double raw = 1.0;  // zeta at the origin
      std::vector<std::pair<SitePoint, double>> expect{{SitePoint{}, 1.0}};
      for (const auto& y : units) {
        const auto e = units[st.index(1, pack_site(y, 2), 2, 4)];
        if (e == y) {
          raw += 1.0;
          expect.push_back({y, 1.0});
        }
      }
      const auto next = sample_step(s, NormalizedState::initial(2), st, 1);
      CHECK(next.log_mass == doctest::Approx(std::log(raw / 2.0)));
      const auto ref = WeightField::from_points(2, expect);
      REQUIRE(next.rho.support_size() == ref.support_size());
      for (const auto& e : ref.entries())
        CHECK(next.rho.at(e.key) == doctest::Approx(1.0 / raw));
    }
  }
}

TEST_CASE("mean-field consistency and the martingale step") {
  const std::size_t n = 100'000;
  for (const auto& s : builtin_suite(1)) {
    const Stepper stepper(s);
    const auto& mk = stepper.mean();
    const auto ball = l1_ball(1, 1);
    std::vector<double> sum(ball.size(), 0.0), sum2(ball.size(), 0.0);
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto next = stepper.step(NormalizedState::initial(1),
                                     DisorderStream(99, static_cast<std::uint32_t>(i)), 1);
      const double growth = next.extinct ? 0.0 : std::exp(next.log_mass);
      m += growth;
      m2 += growth * growth;
      for (std::size_t k = 0; k < ball.size(); ++k) {
        const double v = next.extinct ? 0.0 : next.rho.at(ball[k]) * growth * mk.norm_a;
        sum[k] += v;
        sum2[k] += v * v;
      }
    }
    INFO(s.describe());
    const double mean = m / n, se = std::sqrt((m2 / n - mean * mean) / n);
    CHECK(std::abs(mean - 1.0) <= 4 * se + 1e-14);
    for (std::size_t k = 0; k < ball.size(); ++k) {
      const double mu = sum[k] / n;
      const double sek = std::sqrt(std::max(0.0, sum2[k] / n - mu * mu) / n);
      CHECK(std::abs(mu - mk.a.at(ball[k])) <= 4 * sek + 1e-14);
    }
  }
}

TEST_CASE("support radius grows by at most r_A per step") {
  for (const auto& s : builtin_suite(2)) {
    const Stepper stepper(s);
    auto st = NormalizedState::initial(2);
    const DisorderStream stream(4, 0);
    for (int t = 1; t <= 15 && !st.extinct; ++t) {
      st = stepper.step(st, stream, t);
      if (!st.extinct) CHECK(st.rho.l1_radius() <= t * stepper.mean().range);
    }
  }
}

TEST_CASE("stepping is a pure function of (state, stream, t)") {
  const Stepper stepper(ModelSpec::gobp(2, 0.6, 0.3));
  auto a = NormalizedState::initial(2), b = a;
  for (int t = 1; t <= 20; ++t) {
    a = stepper.step(a, DisorderStream(12, 3), t);
    b = stepper.step(b, DisorderStream(12, 3), t);
    REQUIRE(a.rho == b.rho);
    REQUIRE(a.log_mass == b.log_mass);
  }
}

TEST_CASE("the covA quadratic form is nonnegative for random nonnegative xi") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  std::bernoulli_distribution keep(0.6);
  for (int d = 1; d <= 2; ++d) {
    for (const auto& s : builtin_suite(d)) {
      const auto mk = mean_kernel(s);
      const double gamma = gamma_constant(s);
      const auto ball = l1_ball(d, 3);
      for (int rep = 0; rep < 100; ++rep) {
        std::vector<std::pair<SitePoint, double>> pts;
        for (const auto& x : ball)
          if (keep(rng)) pts.push_back({x, w(rng)});
        const auto xi = WeightField::from_points(d, pts);
        INFO(s.describe());
        CHECK(covariance_quadratic_form(s, mk, gamma, xi) >= -1e-12);
      }
    }
  }
}

TEST_CASE("multiplicative disorder") {
  const auto a = WeightField::from_points(
      1, {{make_site({-1}), 0.3}, {make_site({0}), 0.2}, {make_site({1}), 0.5}});
  const auto s = ModelSpec::multiplicative(a, DiscreteLaw{{0.0, 1.0, 2.0}, {0.25, 0.5, 0.25}});
  const auto mk = mean_kernel(s);
  CHECK(mk.norm_a == doctest::Approx(1.0));
  CHECK(gamma_constant(s) == doctest::Approx(0.5 + 0.25 * 4.0));
  CHECK(column_second_moment(s, mk, make_site({-1}), make_site({1}), make_site({0})) ==
        doctest::Approx(gamma_constant(s) * 0.5 * 0.3));
  CHECK(s.disorder.quantile(0.1) == 0.0);
  CHECK(s.disorder.quantile(0.3) == 1.0);
  CHECK(s.disorder.quantile(0.9) == 2.0);
}
