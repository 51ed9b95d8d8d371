#pragma once

// The random walk with step law a/|a|, its difference walk S - S~ (step law b)
// and the collision quantities derived from them.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lse/lattice.hpp"
#include "lse/models.hpp"
#include "lse/statistics.hpp"

namespace lse {

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// b(x) = |a|^{-2} sum_y a(y) a(y - x): the law of S_1 - S~_1.
Kernel collision_kernel(const MeanKernel& a);
Kernel collision_kernel(const Kernel& a);

struct SeriesBudget {
  /// Largest support of an intermediate convolution power.
  double max_support = 4e6;
  /// Rough cap on multiply-adds spent on iterated convolution.
  double max_work = 2e9;
  /// Largest (folded) Fourier grid for the spectral route.
  double max_grid_points = 6e8;
};

enum class SeriesMethod { automatic, convolution, spectral };

const char* to_string(SeriesMethod m);

/// Partial sums s_T = sum_{t<=T} b_t(0) and the estimate pi = 1 - 1/(1 + s_T).
///
/// Two exact routes: iterated sparse self-convolution of b (every t), and a
/// Fourier route that integrates the trigonometric polynomial
/// sum_{t<=T} phi_b^t on a grid fine enough for the quadrature to be exact
/// (only the requested horizons).
struct CollisionProfile {
  Kernel b;
  std::int64_t t_max = 0;
  SeriesMethod method = SeriesMethod::convolution;
  std::vector<std::int64_t> horizons;  // increasing
  std::vector<double> partial_sums;    // s_T at each horizon
  std::vector<double> return_probs;    // b_t(0), t = 1..t_max (convolution route only)
  double pi_series = 0.0;

  /// s_T for a horizon present in the table.
  double partial_sum(std::int64_t horizon) const;
};

double pi_from_partial_sum(double s);

CollisionProfile collision_series(const Kernel& b, std::int64_t t_max,
                                  const SeriesBudget& budget = {},
                                  SeriesMethod method = SeriesMethod::automatic,
                                  std::vector<std::int64_t> extra_horizons = {});

/// b_t(0) for t = 1..t_max by iterated convolution; throws BudgetExceeded.
std::vector<double> return_probabilities(const Kernel& b, std::int64_t t_max,
                                         const SeriesBudget& budget = {});

/// Same quantity by the Fourier route, for each horizon. Requires b symmetric.
std::vector<double> partial_sums_spectral(const Kernel& b,
                                          const std::vector<std::int64_t>& horizons,
                                          const SeriesBudget& budget = {});

// ---------------------------------------------------------------------------

struct PiMonteCarlo {
  std::size_t n_walks = 0;
  std::int64_t t_max = 0;
  double pi_mc = 0.0;  // fraction of pairs that meet at some 1 <= t <= t_max
  ProportionInterval ci;
  double mean_visits = 0.0;  // mean of V_{t_max} = #{1 <= t <= t_max : S_t = S~_t}
  double visits_std_error = 0.0;
  double pi_from_visits = 0.0;  // 1 - 1/(1 + mean_visits), same estimand as pi_series
  double pi_from_visits_std_error = 0.0;
  std::vector<std::size_t> visit_histogram;  // counts of V = 0, 1, 2, ...
};

/// Simulates independent pairs (S, S~) from the origin with step law a/|a|.
PiMonteCarlo pi_monte_carlo(const Kernel& a, std::size_t n_walks, std::int64_t t_max,
                            std::uint64_t seed, unsigned workers = 1);

/// Empirical law of S_t - S~_t from n pairs (frequencies, summing to 1).
Kernel empirical_difference_law(const Kernel& a, std::size_t n, std::int64_t t,
                                std::uint64_t seed);

struct GeometricFit {
  double pi_hat = 0.0;
  double chi_square = 0.0;
  int dof = 0;
  double p_value = 0.0;
  std::vector<double> observed_tail;  // P(V >= k), k = 0..
  std::vector<double> expected_tail;  // pi_hat^k
};

/// Pearson chi-square of a visit histogram against the law P(V = k) = (1-pi) pi^k.
/// Bins are merged from the right so every expected count is at least `min_expected`.
GeometricFit geometric_chi_square(const std::vector<std::size_t>& histogram, double pi_hat,
                                  double min_expected = 5.0);

// ---------------------------------------------------------------------------

struct T0Selection {
  enum class Status { found, infeasible, horizon_exhausted };
  Status status = Status::horizon_exhausted;
  std::int64_t t0 = 0;
  double epsilon = 0.0;
  double threshold = 0.0;  // (1 + eps) / (gamma - 1)
  double reached = 0.0;    // s_T at the last horizon examined
  std::int64_t horizon = 0;
  double pi_hat = 1.0;     // pi_series used by the d >= 3 feasibility check
};

const char* to_string(T0Selection::Status s);

struct T0Options {
  /// 0 selects the default horizon: 10^4 for d <= 2, 400 for d >= 3.
  std::int64_t max_horizon = 0;
  std::int64_t pi_horizon = 400;
  /// g = sum_{s<=t0} b_s is materialized and applied at every step, so the
  /// search stops well before the general series budget.
  SeriesBudget budget{2e5, 2e8, 6e8};
};

/// Smallest t0 with s_{t0} >= (1 + eps)/(gamma - 1); for d >= 3 first checks
/// gamma > 1/pi using pi_series.
T0Selection select_t0(const Kernel& b, double gamma, double epsilon, const T0Options& options = {});

/// eps = 1 for d <= 2; otherwise the largest of {1, 0.5, 0.1, 0.01} that is
/// satisfiable within the horizon.
T0Selection select_t0_auto(const Kernel& b, double gamma, const T0Options& options = {});

/// g = sum_{s=1}^{t0} b_s.
Kernel collision_sum_kernel(const Kernel& b, std::int64_t t0);

struct BirknerResult {
  double ratio = 0.0;  // max over t <= t_max, |x| <= radius
  std::int64_t argmax_t = 0;
  std::vector<double> per_t;  // max_x ratio for each t = 1..t_max
  /// Max of per_t over [lo, hi].
  double window_max(std::int64_t lo, std::int64_t hi) const;
};

/// sup_{t,x} P(S_t = x) / P(S_t = S~_t) over a finite window, both computed
/// exactly from the t-fold convolution p_t of a/|a| (P(S_t = S~_t) = |p_t^2|).
BirknerResult birkner_ratio(const Kernel& a, std::int64_t t_max, int radius,
                            const SeriesBudget& budget = {});

}  // namespace lse
