#include "lse/martingale.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lse/statistics.hpp"

namespace lse {

double f_surrogate(double u) {
  if (!(u >= -1.0)) throw MartingaleError("f_surrogate: u must be >= -1");
  return u * u / (2.0 + u);
}

MartingalePath MartingalePath::from_increments(const std::vector<double>& increments) {
  MartingalePath path;
  path.increments = increments;
  double log_x = 0.0;
  for (double u : increments) {
    if (!(u >= -1.0)) throw MartingaleError("martingale path: increment below -1");
    log_x += std::log1p(u);  // -inf at u = -1, and stays there
    path.log_products.push_back(log_x);
  }
  return path;
}

MartingalePath MartingalePath::from_log_masses(
    const std::vector<std::optional<double>>& log_masses) {
  MartingalePath path;
  if (log_masses.empty()) return path;
  if (!log_masses.front()) throw MartingaleError("martingale path: extinct at t = 0");
  double prev = *log_masses.front();
  bool dead = false;
  for (std::size_t t = 1; t < log_masses.size(); ++t) {
    if (dead || !log_masses[t]) {
      path.increments.push_back(dead ? 0.0 : -1.0);
      path.log_products.push_back(-std::numeric_limits<double>::infinity());
      dead = true;
      continue;
    }
    path.increments.push_back(std::expm1(*log_masses[t] - prev));
    path.log_products.push_back(*log_masses[t] - *log_masses.front());
    prev = *log_masses[t];
  }
  return path;
}

double MartingalePath::product(std::size_t t) const {
  if (t == 0) return 1.0;
  return std::exp(log_products.at(t - 1));
}

bool MartingalePath::consistent(double rel_tol) const {
  if (increments.size() != log_products.size()) return false;
  double log_x = 0.0;
  bool dead = false;
  for (std::size_t i = 0; i < increments.size(); ++i) {
    const double u = increments[i];
    if (!(u >= -1.0)) return false;
    if (dead) {
      if (std::isfinite(log_products[i])) return false;
      continue;
    }
    if (u == -1.0) {
      dead = true;
      if (std::isfinite(log_products[i])) return false;
      continue;
    }
    log_x += std::log1p(u);
    // Relative error of X_t <-> absolute error of ln X_t.
    if (std::abs(log_x - log_products[i]) > rel_tol * (1.0 + static_cast<double>(i))) {
      return false;
    }
  }
  return true;
}

PathwiseVerdict pathwise_product_bound(const MartingalePath& path, double rel_slack) {
  PathwiseVerdict v;
  v.steps = path.size();
  const double log_slack = std::log1p(rel_slack);
  double y = 0.0, penalty = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const double u = path.increments[i];
    y += u;
    penalty += 0.25 * f_surrogate(u);
    const double log_x = path.log_products[i];
    if (log_x == -std::numeric_limits<double>::infinity()) continue;
    const double excess = log_x - (y - penalty);
    v.max_log_excess = std::max(v.max_log_excess, excess);
    if (excess > log_slack) {
      if (v.violations == 0) v.first_violation = static_cast<std::int64_t>(i + 1);
      ++v.violations;
    }
  }
  return v;
}

FactorBound elementary_factor_bounds(double u, double slack) {
  if (!(u >= -1.0)) throw MartingaleError("elementary_factor_bounds: u must be >= -1");
  FactorBound b;
  b.u = u;
  // 1 - (1+u)e^{-u} = -expm1(log1p(u) - u), accurate near u = 0.
  b.middle = u == -1.0 ? 1.0 : -std::expm1(std::log1p(u) - u);
  b.upper = 0.5 * std::numbers::e * u * u;
  b.lower_ok = b.middle >= -slack;
  b.upper_ok = b.middle <= b.upper + slack;
  return b;
}

std::size_t elementary_factor_sweep(double lo, double hi, double step) {
  std::size_t bad = 0;
  const auto n = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::int64_t i = 0; i <= n; ++i) {
    const double u = std::max(-1.0, lo + static_cast<double>(i) * step);
    if (!elementary_factor_bounds(u).ok()) ++bad;
  }
  return bad;
}

// ---------------------------------------------------------------------------

ChReport ch_inequality_check(const std::vector<DiscreteLaw>& laws, double slack) {
  const std::size_t n = laws.size();
  if (n < 2 || n > 6) throw MartingaleError("ch_inequality_check: need 2..6 laws");
  double mean_sum = 0.0;
  for (const auto& law : laws) {
    if (law.values.empty() || law.values.size() > 6 || law.values.size() != law.probs.size()) {
      throw MartingaleError("ch_inequality_check: each law needs 1..6 atoms");
    }
    for (std::size_t i = 0; i < law.values.size(); ++i) {
      if (!(law.values[i] >= 0.0) || !(law.probs[i] >= 0.0)) {
        throw MartingaleError("ch_inequality_check: atoms and probabilities must be >= 0");
      }
    }
    mean_sum += law.mean();
  }
  if (std::abs(mean_sum - 1.0) > 1e-12) {
    throw MartingaleError("ch_inequality_check: means must sum to 1");
  }

  ChReport r;
  const double m1 = laws[0].mean(), m2 = laws[1].mean();
  const double var1 = laws[0].moment(2) - m1 * m1;
  const double var2 = laws[1].moment(2) - m2 * m2;
  r.rhs12 = m1 * m2 - 2 * m2 * var1 - 2 * m1 * var2;
  r.rhs11 = laws[0].moment(2) * (1 + 2 * m1) - 2 * laws[0].moment(3);

  std::vector<std::size_t> idx(n, 0);
  for (;;) {
    double prob = 1.0, u = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      prob *= laws[i].probs[idx[i]];
      u += laws[i].values[idx[i]];
    }
    ++r.outcomes;
    if (u > 0.0) {
      const double u1 = laws[0].values[idx[0]], u2 = laws[1].values[idx[1]];
      r.lhs12 += prob * u1 * u2 / (u * u);
      r.lhs11 += prob * u1 * u1 / (u * u);
    }
    std::size_t k = 0;
    while (k < n && ++idx[k] == laws[k].values.size()) idx[k++] = 0;
    if (k == n) break;
  }
  r.holds12 = r.lhs12 >= r.rhs12 - slack;
  r.holds11 = r.lhs11 >= r.rhs11 - slack;
  return r;
}

std::vector<DiscreteLaw> random_ch_configuration(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_laws(2, 6), n_atoms(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<DiscreteLaw> laws(static_cast<std::size_t>(n_laws(rng)));
  double mean_sum = 0.0;
  for (auto& law : laws) {
    const int k = n_atoms(rng);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      // A quarter of the atoms sit at 0 so U = 0 has positive probability.
      law.values.push_back(unit(rng) < 0.25 ? 0.0 : 3.0 * unit(rng));
      law.probs.push_back(0.05 + unit(rng));
      total += law.probs.back();
    }
    for (auto& p : law.probs) p /= total;
    mean_sum += law.mean();
  }
  if (mean_sum == 0.0) {
    laws[0].values[0] = 1.0;
    mean_sum = laws[0].mean();
  }
  for (auto& law : laws) {
    for (auto& v : law.values) v /= mean_sum;
  }
  return laws;
}

// ---------------------------------------------------------------------------

double conditional_second_moment(const ModelSpec& spec, const MeanKernel& mk,
                                 const WeightField& rho) {
  const int d = spec.dim;
  const auto offsets = column_offsets(spec, mk);
  std::vector<SiteKey> columns;
  for (const auto& e : rho.entries()) {
    for (const auto& o : offsets) columns.push_back(translate(e.key, offset_delta(o, d)));
  }
  std::sort(columns.begin(), columns.end());
  columns.erase(std::unique(columns.begin(), columns.end()), columns.end());

  double total = 0.0;
  std::vector<std::pair<SitePoint, double>> sources;
  for (SiteKey ky : columns) {
    const SitePoint y = unpack_site(ky, d);
    sources.clear();
    for (const auto& o : offsets) {
      SitePoint x = y;
      for (int j = 0; j < d; ++j) x.x[j] -= o.x[j];
      const double w = rho.at(x);
      if (w > 0.0) sources.emplace_back(x, w);
    }
    for (const auto& [x, wx] : sources) {
      for (const auto& [xt, wxt] : sources) {
        SitePoint o1 = y, o2 = y;
        for (int j = 0; j < d; ++j) {
          o1.x[j] -= x.x[j];
          o2.x[j] -= xt.x[j];
        }
        const double cov =
            column_second_moment(spec, mk, x, xt, y) - mk.a.at(o1) * mk.a.at(o2);
        total += wx * wxt * cov;
      }
    }
  }
  return total / (mk.norm_a * mk.norm_a);
}

FrozenStateMoments frozen_state_moments(const ModelSpec& spec, const WeightField& rho,
                                        std::size_t n_samples, std::uint64_t seed) {
  const Stepper stepper(spec);
  FrozenStateMoments out;
  out.overlap = replica_overlap(rho);
  out.closed_form_second = conditional_second_moment(spec, stepper.mean(), rho);
  NormalizedState state;
  state.rho = rho;
  double m2 = 0, s2 = 0, m3 = 0, s3 = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const DisorderStream stream(seed, static_cast<std::uint32_t>(i));
    const auto next = stepper.step(state, stream, 1);
    const double dy = next.extinct ? -1.0 : std::expm1(next.log_mass);
    const double v2 = dy * dy, v3 = std::abs(dy) * v2;
    // Welford updates.
    const double n = static_cast<double>(i + 1);
    const double d2 = v2 - m2;
    m2 += d2 / n;
    s2 += d2 * (v2 - m2);
    const double d3 = v3 - m3;
    m3 += d3 / n;
    s3 += d3 * (v3 - m3);
  }
  const double n = static_cast<double>(n_samples);
  out.second = {m2, n > 1 ? std::sqrt(s2 / (n - 1) / n) : 0.0, n_samples};
  out.third = {m3, n > 1 ? std::sqrt(s3 / (n - 1) / n) : 0.0, n_samples};
  return out;
}

MomentBracket overlap_moment_bracket(const ModelSpec& spec, std::size_t n_samples,
                                     std::uint64_t seed) {
  const int d = spec.dim;
  const MeanKernel mk = mean_kernel(spec);
  std::vector<WeightField> states;
  states.push_back(WeightField::point_mass(d));
  const int spacing = 2 * mk.range + 2;
  for (int k : {2, 4, 8}) {
    std::vector<std::pair<SitePoint, double>> pts;
    for (int i = 0; i < k; ++i) {
      SitePoint s;
      s.x[0] = i * spacing;
      pts.emplace_back(s, 1.0 / k);
    }
    states.push_back(WeightField::from_points(d, pts));
  }
  {
    const Stepper stepper(spec);
    const DisorderStream stream(seed ^ 0x9e3779b97f4a7c15ULL, 0);
    auto state = NormalizedState::initial(d);
    for (std::int64_t t = 1; t <= 40 && !state.extinct; ++t) {
      state = stepper.step(state, stream, t);
      if (!state.extinct && (t == 5 || t == 10 || t == 20 || t == 40)) {
        states.push_back(state.rho);
      }
    }
  }

  MomentBracket out;
  out.c2 = std::numeric_limits<double>::infinity();
  std::uint64_t sub = 0;
  for (const auto& rho : states) {
    auto m = frozen_state_moments(spec, rho, n_samples, seed + 1000 * ++sub);
    out.c1 = std::max(out.c1, std::max(m.second.mean, m.third.mean) / m.overlap);
    out.c2 = std::min(out.c2, m.second.mean / m.overlap);
    out.states.push_back(std::move(m));
  }
  return out;
}

}  // namespace lse
