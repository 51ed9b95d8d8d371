#include "lse/rwalk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>

#include "lse/disorder.hpp"

namespace lse {

namespace {

double box_volume(const Kernel& b, std::int64_t t) {
  const int r = b.coord_radius();
  return std::pow(2.0 * static_cast<double>(t) * r + 1.0, b.dim());
}

bool nearly_symmetric(const Kernel& b) {
  const Kernel refl = b.reflected();
  if (refl.support_size() != b.support_size()) return false;
  for (std::size_t i = 0; i < b.support_size(); ++i) {
    const auto& x = b.entries()[i];
    const auto& y = refl.entries()[i];
    if (x.key != y.key || std::abs(x.weight - y.weight) > 1e-12 * std::max(x.weight, y.weight)) {
      return false;
    }
  }
  return true;
}

bool symmetric_in_axis(const Kernel& b, int axis) {
  const int d = b.dim();
  for (const auto& e : b.entries()) {
    SitePoint s = unpack_site(e.key, d);
    s.x[axis] = -s.x[axis];
    const double w = b.at(s);
    if (std::abs(w - e.weight) > 1e-12 * e.weight) return false;
  }
  return true;
}

std::int64_t spectral_modulus(const Kernel& b, std::int64_t t_max) {
  const std::int64_t r = std::max(1, b.coord_radius());
  std::int64_t m = t_max * r + 1;
  return m % 2 == 0 ? m + 1 : m;
}

double spectral_grid_points(const Kernel& b, std::int64_t t_max) {
  const auto m = static_cast<double>(spectral_modulus(b, t_max));
  double points = 1.0;
  for (int j = 0; j < b.dim(); ++j) {
    points *= (j == 0 || symmetric_in_axis(b, j)) ? (m + 1) / 2 : m;
  }
  return points;
}

// Iterated convolution; stops early (without throwing) when `lenient` and the
// budget runs out.
std::vector<double> iterate_return_probs(const Kernel& b, std::int64_t t_max,
                                         const SeriesBudget& budget, bool lenient,
                                         double stop_at = std::numeric_limits<double>::infinity()) {
  std::vector<double> out;
  if (t_max < 1) return out;
  const SiteKey origin = origin_key(b.dim());
  out.reserve(static_cast<std::size_t>(t_max));
  Kernel cur = b;
  double work = 0.0, partial = 0.0;
  for (std::int64_t t = 1; t <= t_max; ++t) {
    out.push_back(cur.at(origin));
    partial += out.back();
    if (t == t_max || partial >= stop_at) break;
    work += static_cast<double>(cur.support_size()) * static_cast<double>(b.support_size());
    if (work > budget.max_work || box_volume(b, t + 1) > 64.0 * budget.max_support) {
      if (lenient) break;
      throw BudgetExceeded("collision series: work budget exhausted at t = " + std::to_string(t));
    }
    cur = convolve(cur, b);
    if (static_cast<double>(cur.support_size()) > budget.max_support) {
      if (lenient) {
        // cur is valid; record it and stop.
        out.push_back(cur.at(origin));
        break;
      }
      throw BudgetExceeded("collision series: support budget exhausted at t = " +
                           std::to_string(t + 1));
    }
  }
  return out;
}

}  // namespace

Kernel collision_kernel(const Kernel& a) {
  const Kernel abar = a.scaled(1.0 / a.total_mass());
  return convolve(abar, abar.reflected());
}

Kernel collision_kernel(const MeanKernel& a) { return collision_kernel(a.a); }

const char* to_string(SeriesMethod m) {
  switch (m) {
    case SeriesMethod::automatic: return "automatic";
    case SeriesMethod::convolution: return "convolution";
    case SeriesMethod::spectral: return "spectral";
  }
  return "?";
}

double pi_from_partial_sum(double s) { return 1.0 - 1.0 / (1.0 + s); }

double CollisionProfile::partial_sum(std::int64_t horizon) const {
  const auto it = std::find(horizons.begin(), horizons.end(), horizon);
  if (it == horizons.end()) {
    throw std::out_of_range("collision profile: horizon " + std::to_string(horizon) +
                            " not tabulated");
  }
  return partial_sums[static_cast<std::size_t>(it - horizons.begin())];
}

std::vector<double> return_probabilities(const Kernel& b, std::int64_t t_max,
                                         const SeriesBudget& budget) {
  const double predicted_work = static_cast<double>(t_max) / (b.dim() + 1) *
                                box_volume(b, t_max) * static_cast<double>(b.support_size());
  if (predicted_work > 4.0 * budget.max_work) {
    throw BudgetExceeded("collision series: predicted convolution work exceeds the budget");
  }
  return iterate_return_probs(b, t_max, budget, false);
}

std::vector<double> partial_sums_spectral(const Kernel& b,
                                          const std::vector<std::int64_t>& horizons,
                                          const SeriesBudget& budget) {
  if (!nearly_symmetric(b)) {
    throw std::invalid_argument("spectral collision series requires a symmetric kernel");
  }
  const int d = b.dim();
  const std::int64_t t_max = *std::max_element(horizons.begin(), horizons.end());
  const std::int64_t m = spectral_modulus(b, t_max);
  const std::int64_t half = (m - 1) / 2;

  // Axis 0 always folds (phi(theta) = phi(-theta)); other axes fold when b is
  // invariant under flipping that coordinate alone.
  std::array<bool, kMaxDim> fold{};
  double points = 1.0;
  for (int j = 0; j < d; ++j) {
    fold[j] = j == 0 || symmetric_in_axis(b, j);
    points *= static_cast<double>(fold[j] ? half + 1 : m);
  }
  if (points > budget.max_grid_points) {
    throw BudgetExceeded("spectral collision series: grid of " + std::to_string(points) +
                         " points exceeds the budget");
  }

  // 1 - phi(theta) = sum_x 2 b(x) sin^2(theta.x / 2), theta.x = 2 pi (k.x) / m.
  std::vector<double> sin2(static_cast<std::size_t>(m));
  for (std::int64_t k = 0; k < m; ++k) {
    const double s = std::sin(std::numbers::pi * static_cast<double>(k) / static_cast<double>(m));
    sin2[k] = s * s;
  }
  struct Atom {
    std::array<std::int64_t, kMaxDim> x;
    double w2;
  };
  std::vector<Atom> atoms;
  for (const auto& e : b.entries()) {
    const SitePoint s = unpack_site(e.key, d);
    if (l1_norm(s, d) == 0) continue;  // contributes 0 to 1 - phi
    Atom a{};
    for (int j = 0; j < d; ++j) a.x[j] = ((s.x[j] % m) + m) % m;
    a.w2 = 2.0 * e.weight;
    atoms.push_back(a);
  }

  std::vector<long double> acc(horizons.size(), 0.0L);
  std::vector<double> row(horizons.size());
  std::array<std::int64_t, kMaxDim> k{};
  std::vector<std::int64_t> phase(atoms.size());
  auto extent = [&](int j) { return fold[j] ? half + 1 : m; };
  const int last = d - 1;
  // Outer coordinates by odometer; the last coordinate advances each atom's
  // phase incrementally.
  for (;;) {
    double outer_weight = 1.0;
    for (int j = 0; j < last; ++j) {
      if (fold[j] && k[j] != 0) outer_weight *= 2.0;
    }
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      std::int64_t ph = 0;
      for (int j = 0; j < last; ++j) ph += atoms[i].x[j] * k[j];
      phase[i] = ph % m;
    }
    std::fill(row.begin(), row.end(), 0.0);
    const std::int64_t ext = extent(last);
    for (std::int64_t kl = 0; kl < ext; ++kl) {
      double u = 0.0;
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        u += atoms[i].w2 * sin2[static_cast<std::size_t>(phase[i])];
        phase[i] += atoms[i].x[last];
        if (phase[i] >= m) phase[i] -= m;
      }
      const double weight = fold[last] && kl != 0 ? 2.0 : 1.0;
      const double rr = 1.0 - u;
      if (u <= 0.0) {
        for (std::size_t h = 0; h < horizons.size(); ++h) {
          row[h] += weight * static_cast<double>(horizons[h]);
        }
      } else if (rr > 0.0) {
        const double log_r = std::log1p(-u);
        const double scale = weight * rr / u;
        for (std::size_t h = 0; h < horizons.size(); ++h) {
          row[h] -= scale * std::expm1(static_cast<double>(horizons[h]) * log_r);
        }
      } else {
        for (std::size_t h = 0; h < horizons.size(); ++h) {
          row[h] += weight * rr * (1.0 - std::pow(rr, static_cast<double>(horizons[h]))) / u;
        }
      }
    }
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      acc[h] += static_cast<long double>(outer_weight * row[h]);
    }
    int j = last - 1;
    while (j >= 0 && ++k[j] == extent(j)) k[j--] = 0;
    if (j < 0) break;
  }
  std::vector<double> out;
  const long double norm = std::pow(static_cast<long double>(m), d);
  for (auto a : acc) out.push_back(static_cast<double>(a / norm));
  return out;
}

CollisionProfile collision_series(const Kernel& b, std::int64_t t_max, const SeriesBudget& budget,
                                  SeriesMethod method, std::vector<std::int64_t> extra_horizons) {
  if (t_max < 1) throw std::invalid_argument("collision series: T must be >= 1");
  CollisionProfile prof;
  prof.b = b;
  prof.t_max = t_max;

  if (method == SeriesMethod::automatic) {
    const double support = box_volume(b, t_max);
    const double conv_work = static_cast<double>(t_max) / (b.dim() + 1) * support *
                             static_cast<double>(b.support_size());
    const bool conv_ok = support <= 64.0 * budget.max_support && conv_work <= budget.max_work;
    const double spec_work =
        spectral_grid_points(b, t_max) * static_cast<double>(b.support_size() + 8);
    const bool spec_ok = nearly_symmetric(b) &&
                         spectral_grid_points(b, t_max) <= budget.max_grid_points;
    if (conv_ok && spec_ok) {
      method = conv_work <= spec_work ? SeriesMethod::convolution : SeriesMethod::spectral;
    } else {
      method = conv_ok ? SeriesMethod::convolution : SeriesMethod::spectral;
    }
  }
  prof.method = method;

  if (method == SeriesMethod::convolution) {
    prof.return_probs = return_probabilities(b, t_max, budget);
    double s = 0.0;
    for (std::int64_t t = 1; t <= t_max; ++t) {
      s += prof.return_probs[t - 1];
      prof.horizons.push_back(t);
      prof.partial_sums.push_back(s);
    }
  } else {
    extra_horizons.push_back(t_max);
    std::erase_if(extra_horizons, [&](std::int64_t h) { return h < 1 || h > t_max; });
    std::sort(extra_horizons.begin(), extra_horizons.end());
    extra_horizons.erase(std::unique(extra_horizons.begin(), extra_horizons.end()),
                         extra_horizons.end());
    prof.horizons = extra_horizons;
    prof.partial_sums = partial_sums_spectral(b, prof.horizons, budget);
  }
  prof.pi_series = pi_from_partial_sum(prof.partial_sums.back());
  return prof;
}

// ---------------------------------------------------------------------------

namespace {

struct StepTable {
  std::vector<double> cumulative;
  std::vector<SitePoint> sites;

  explicit StepTable(const Kernel& a) {
    const double norm = a.total_mass();
    double c = 0.0;
    for (const auto& e : a.entries()) {
      c += e.weight / norm;
      cumulative.push_back(c);
      sites.push_back(unpack_site(e.key, a.dim()));
    }
  }

  const SitePoint& draw(double u) const {
    for (std::size_t i = 0; i + 1 < cumulative.size(); ++i) {
      if (u < cumulative[i]) return sites[i];
    }
    return sites.back();
  }
};

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Advances the difference walk D = S - S~ of pair `walk` to time t_max and
// calls visit(t, D) after every step.
template <typename Visit>
void run_pair(const StepTable& table, int d, std::uint64_t seed, std::uint32_t walk,
              std::int64_t t_max, Visit&& visit) {
  const DisorderStream stream(seed, walk);
  SitePoint diff;
  for (std::int64_t t = 1; t <= t_max; ++t) {
    const auto w = stream.raw(t, 0, 0);
    const SitePoint& s = table.draw(to_unit(w[0], w[1]));
    const SitePoint& st = table.draw(to_unit(w[2], w[3]));
    for (int j = 0; j < d; ++j) diff.x[j] += s.x[j] - st.x[j];
    visit(t, diff);
  }
}

}  // namespace

PiMonteCarlo pi_monte_carlo(const Kernel& a, std::size_t n_walks, std::int64_t t_max,
                            std::uint64_t seed, unsigned workers) {
  if (n_walks < 100) throw std::invalid_argument("pi_monte_carlo: n_walks must be >= 100");
  const StepTable table(a);
  const int d = a.dim();
  std::vector<std::uint32_t> visits(n_walks, 0);
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < n_walks; i += workers) {
      std::uint32_t v = 0;
      run_pair(table, d, seed, static_cast<std::uint32_t>(i), t_max,
               [&](std::int64_t, const SitePoint& diff) {
                 if (diff == SitePoint{}) ++v;
               });
      visits[i] = v;
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  PiMonteCarlo out;
  out.n_walks = n_walks;
  out.t_max = t_max;
  std::size_t hit = 0;
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (auto v : visits) {
    if (v > 0) ++hit;
    if (out.visit_histogram.size() <= v) out.visit_histogram.resize(v + 1, 0);
    ++out.visit_histogram[v];
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  out.ci = wilson_interval(hit, n_walks);
  out.pi_mc = out.ci.estimate;
  out.mean_visits = mean;
  out.visits_std_error = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  out.pi_from_visits = pi_from_partial_sum(mean);
  out.pi_from_visits_std_error = out.visits_std_error / ((1.0 + mean) * (1.0 + mean));
  return out;
}

Kernel empirical_difference_law(const Kernel& a, std::size_t n, std::int64_t t,
                                std::uint64_t seed) {
  const StepTable table(a);
  const int d = a.dim();
  std::vector<WeightEntry> tally;
  tally.reserve(n);
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    run_pair(table, d, seed, static_cast<std::uint32_t>(i), t,
             [&](std::int64_t s, const SitePoint& diff) {
               if (s == t) tally.push_back({pack_site(diff, d), w});
             });
  }
  return Kernel::from_entries(d, std::move(tally));
}

GeometricFit geometric_chi_square(const std::vector<std::size_t>& histogram, double pi_hat,
                                  double min_expected) {
  GeometricFit fit;
  fit.pi_hat = pi_hat;
  std::size_t n = 0;
  for (auto c : histogram) n += c;
  const double nn = static_cast<double>(n);
  auto observed_tail_count = [&](std::size_t k) {
    std::size_t c = 0;
    for (std::size_t i = k; i < histogram.size(); ++i) c += histogram[i];
    return static_cast<double>(c);
  };
  for (std::size_t k = 0; k < std::max<std::size_t>(histogram.size(), 6); ++k) {
    fit.observed_tail.push_back(observed_tail_count(k) / nn);
    fit.expected_tail.push_back(std::pow(pi_hat, static_cast<double>(k)));
  }

  // Bins 0..K-1 individually plus the tail [K, inf).
  std::size_t bins = 1;
  while (nn * (1 - pi_hat) * std::pow(pi_hat, bins) >= min_expected &&
         nn * std::pow(pi_hat, bins + 1) >= min_expected) {
    ++bins;
  }
  double chi2 = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double expected = nn * (1 - pi_hat) * std::pow(pi_hat, static_cast<double>(k));
    const double observed = k < histogram.size() ? static_cast<double>(histogram[k]) : 0.0;
    chi2 += (observed - expected) * (observed - expected) / expected;
  }
  const double tail_expected = nn * std::pow(pi_hat, static_cast<double>(bins));
  const double tail_observed = observed_tail_count(bins);
  chi2 += (tail_observed - tail_expected) * (tail_observed - tail_expected) / tail_expected;

  fit.chi_square = chi2;
  fit.dof = static_cast<int>(bins) - 1;  // bins + 1 cells, minus total, minus fitted pi
  if (fit.dof >= 1) {
    boost::math::chi_squared_distribution<double> dist(fit.dof);
    fit.p_value = boost::math::cdf(boost::math::complement(dist, chi2));
  } else {
    fit.p_value = 1.0;
  }
  return fit;
}

// ---------------------------------------------------------------------------

const char* to_string(T0Selection::Status s) {
  switch (s) {
    case T0Selection::Status::found: return "found";
    case T0Selection::Status::infeasible: return "infeasible";
    case T0Selection::Status::horizon_exhausted: return "horizon_exhausted";
  }
  return "?";
}

namespace {

std::int64_t default_horizon(const Kernel& b, const T0Options& o) {
  if (o.max_horizon > 0) return o.max_horizon;
  return b.dim() <= 2 ? 10'000 : 400;
}

T0Selection scan_threshold(const std::vector<double>& probs, double gamma, double epsilon) {
  T0Selection sel;
  sel.epsilon = epsilon;
  sel.threshold = (1.0 + epsilon) / (gamma - 1.0);
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    s += probs[i];
    if (s >= sel.threshold) {
      sel.status = T0Selection::Status::found;
      sel.t0 = static_cast<std::int64_t>(i + 1);
      sel.reached = s;
      sel.horizon = sel.t0;
      return sel;
    }
  }
  sel.status = T0Selection::Status::horizon_exhausted;
  sel.reached = s;
  sel.horizon = static_cast<std::int64_t>(probs.size());
  return sel;
}

// Checks gamma > 1/pi for d >= 3; fills pi_hat and returns false if violated.
bool feasible(const Kernel& b, double gamma, const T0Options& o, double& pi_hat) {
  pi_hat = 1.0;
  if (b.dim() <= 2) return true;
  pi_hat = collision_series(b, o.pi_horizon).pi_series;
  return gamma * pi_hat > 1.0;
}

}  // namespace

T0Selection select_t0(const Kernel& b, double gamma, double epsilon, const T0Options& options) {
  if (!(gamma > 1.0)) throw std::invalid_argument("select_t0: gamma must exceed 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("select_t0: epsilon must be positive");
  double pi_hat = 1.0;
  if (!feasible(b, gamma, options, pi_hat)) {
    T0Selection sel;
    sel.status = T0Selection::Status::infeasible;
    sel.epsilon = epsilon;
    sel.threshold = (1.0 + epsilon) / (gamma - 1.0);
    sel.pi_hat = pi_hat;
    return sel;
  }
  const auto probs = iterate_return_probs(b, default_horizon(b, options), options.budget, true,
                                          (1.0 + epsilon) / (gamma - 1.0));
  auto sel = scan_threshold(probs, gamma, epsilon);
  sel.pi_hat = pi_hat;
  return sel;
}

T0Selection select_t0_auto(const Kernel& b, double gamma, const T0Options& options) {
  if (b.dim() <= 2) return select_t0(b, gamma, 1.0, options);
  if (!(gamma > 1.0)) throw std::invalid_argument("select_t0: gamma must exceed 1");
  double pi_hat = 1.0;
  if (!feasible(b, gamma, options, pi_hat)) {
    T0Selection sel;
    sel.status = T0Selection::Status::infeasible;
    sel.epsilon = 0.01;
    sel.threshold = 1.01 / (gamma - 1.0);
    sel.pi_hat = pi_hat;
    return sel;
  }
  const auto probs = iterate_return_probs(b, default_horizon(b, options), options.budget, true,
                                          2.0 / (gamma - 1.0));
  T0Selection last;
  for (double eps : {1.0, 0.5, 0.1, 0.01}) {
    last = scan_threshold(probs, gamma, eps);
    last.pi_hat = pi_hat;
    if (last.status == T0Selection::Status::found) return last;
  }
  return last;
}

Kernel collision_sum_kernel(const Kernel& b, std::int64_t t0) {
  if (t0 < 1) throw std::invalid_argument("collision_sum_kernel: t0 must be >= 1");
  std::vector<WeightEntry> terms;
  Kernel cur = b;
  for (std::int64_t s = 1; s <= t0; ++s) {
    for (const auto& e : cur.entries()) terms.push_back(e);
    if (s < t0) cur = convolve(cur, b);
  }
  return Kernel::from_entries(b.dim(), std::move(terms));
}

// ---------------------------------------------------------------------------

double BirknerResult::window_max(std::int64_t lo, std::int64_t hi) const {
  double m = 0.0;
  for (std::int64_t t = std::max<std::int64_t>(lo, 1);
       t <= hi && t <= static_cast<std::int64_t>(per_t.size()); ++t) {
    m = std::max(m, per_t[t - 1]);
  }
  return m;
}

BirknerResult birkner_ratio(const Kernel& a, std::int64_t t_max, int radius,
                            const SeriesBudget& budget) {
  const int d = a.dim();
  const Kernel abar = a.scaled(1.0 / a.total_mass());
  BirknerResult out;
  Kernel p = abar;
  for (std::int64_t t = 1; t <= t_max; ++t) {
    const double collide = p.sum_of_squares();
    double best = 0.0;
    for (const auto& e : p.entries()) {
      if (l1_norm(unpack_site(e.key, d), d) <= radius) best = std::max(best, e.weight);
    }
    const double ratio = best / collide;
    out.per_t.push_back(ratio);
    if (ratio > out.ratio) {
      out.ratio = ratio;
      out.argmax_t = t;
    }
    if (t == t_max) break;
    p = convolve(p, abar);
    if (static_cast<double>(p.support_size()) > budget.max_support) {
      throw BudgetExceeded("birkner_ratio: support budget exhausted at t = " +
                           std::to_string(t + 1));
    }
  }
  return out;
}

}  // namespace lse
