#pragma once

// Pathwise checks on the normalized-mass martingale: the product
// representation X_t = prod (1 + dY_s), the f-surrogate bound, elementary
// factor bounds, and exhaustive checks of two moment inequalities for ratios
// of independent nonnegative variables.

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "lse/models.hpp"

namespace lse {

class MartingaleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// f(u) = u^2 / (2 + u) for u >= -1.
double f_surrogate(double u);

struct MartingalePath {
  std::vector<double> increments;    // dY_t >= -1, t = 1..n
  std::vector<double> log_products;  // ln X_t, -inf once X hits 0

  /// X_t = prod_{s<=t} (1 + dY_s).
  static MartingalePath from_increments(const std::vector<double>& increments);
  /// From ln|N̄_t|, t = 0..n (X_t = |N̄_t|); nullopt marks extinction.
  static MartingalePath from_log_masses(const std::vector<std::optional<double>>& log_masses);

  std::size_t size() const { return increments.size(); }
  double product(std::size_t t) const;  // t = 1..n
  /// Increments and products agree to `rel_tol`, and 0 is absorbing.
  bool consistent(double rel_tol = 1e-12) const;
};

struct PathwiseVerdict {
  std::size_t steps = 0;
  std::size_t violations = 0;
  std::int64_t first_violation = 0;  // 0 when none
  /// max_t (ln X_t - ln bound_t); <= 0 up to slack when the bound holds.
  double max_log_excess = -std::numeric_limits<double>::infinity();
  bool ok() const { return violations == 0; }
};

/// X_t <= exp(Y_t - 1/4 sum_{s<=t} f(dY_s)) for every t, with relative slack.
PathwiseVerdict pathwise_product_bound(const MartingalePath& path, double rel_slack = 1e-10);

struct FactorBound {
  double u = 0.0;
  double middle = 0.0;  // 1 - (1 + u) e^{-u}
  double upper = 0.0;   // (e/2) u^2
  bool lower_ok = true;
  bool upper_ok = true;
  bool ok() const { return lower_ok && upper_ok; }
};

/// 0 <= 1 - (1 + u) e^{-u} <= (e/2) u^2.
FactorBound elementary_factor_bounds(double u, double slack = 1e-15);

/// Sweeps u over [lo, hi] with the given step; returns the number of violations.
std::size_t elementary_factor_sweep(double lo, double hi, double step);

// ---------------------------------------------------------------------------

struct ChReport {
  double lhs12 = 0.0;  // P[U1 U2 / U^2 : U > 0]
  double rhs12 = 0.0;  // m1 m2 - 2 m2 var(U1) - 2 m1 var(U2)
  double lhs11 = 0.0;  // P[U1^2 / U^2 : U > 0]
  double rhs11 = 0.0;  // P[U1^2](1 + 2 m1) - 2 P[U1^3]
  std::size_t outcomes = 0;
  bool holds12 = false;
  bool holds11 = false;
  bool ok() const { return holds12 && holds11; }
};

/// Exhaustive evaluation over the product of atoms of 2..6 independent laws
/// with at most 6 atoms each and means summing to 1.
ChReport ch_inequality_check(const std::vector<DiscreteLaw>& laws, double slack = 1e-12);

/// Random admissible configuration (some atoms at 0, means rescaled to sum 1).
std::vector<DiscreteLaw> random_ch_configuration(std::mt19937_64& rng);

// ---------------------------------------------------------------------------

/// E[dY^2 | rho] = |a|^{-2} sum_y sum_{x,x~} rho(x) rho(x~) (P[A_xy A_x~y] - a a~)
/// from the closed-form column moments.
double conditional_second_moment(const ModelSpec& spec, const MeanKernel& mk,
                                 const WeightField& rho);

struct FrozenStateMoments {
  double overlap = 0.0;  // R of the frozen state
  MonteCarloEstimate second;  // E[dY^2 | rho]
  MonteCarloEstimate third;   // E[|dY|^3 | rho]
  double closed_form_second = 0.0;
};

/// Fresh one-step disorder at a fixed rho, n_samples times.
FrozenStateMoments frozen_state_moments(const ModelSpec& spec, const WeightField& rho,
                                        std::size_t n_samples, std::uint64_t seed);

struct MomentBracket {
  std::vector<FrozenStateMoments> states;
  double c1 = 0.0;  // max over states of max(E dY^2, E |dY|^3) / R
  double c2 = 0.0;  // min over states of E dY^2 / R
  bool ok() const { return c2 > 0.0; }
};

/// States: point mass, k far-separated sites (k = 2, 4, 8), and states taken
/// from one simulated trajectory.
MomentBracket overlap_moment_bracket(const ModelSpec& spec, std::size_t n_samples,
                                     std::uint64_t seed = 1);

}  // namespace lse
