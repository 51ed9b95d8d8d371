#pragma once

// Per-trajectory observables (replica overlap, max density, smoothed overlap,
// localization functional) and ensemble diagnostics built on them.

#include <optional>
#include <stdexcept>
#include <vector>

#include "lse/lattice.hpp"

namespace lse {

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// R = sum_x rho(x)^2.
double replica_overlap(const WeightField& rho);
/// rho* = max_x rho(x).
double max_density(const WeightField& rho);

struct SmoothedOverlap {
  WeightField rho1;
  double overlap = 0.0;
};
/// rho_1 = rho * abar and R_1 = |rho_1^2|.
SmoothedOverlap smoothed_overlap(const WeightField& rho, const Kernel& abar);

/// X = <g * rho, rho>.
double localization_functional(const WeightField& rho, const Kernel& g);

struct StepObservables {
  std::int64_t t = 0;
  double overlap = 0.0;           // R_t
  double rho_star = 0.0;          // rho*_t
  double smoothed_overlap = 0.0;  // R_{t,1}
  double localization = 0.0;      // X_t (0 when no g is configured)
  std::optional<double> log_nbar;  // ln|N̄_t|, absent after extinction
  std::size_t support = 0;
  bool survived = true;
  double sum_overlap = 0.0;     // sum_{s<=t} R_s
  double sum_overlap_32 = 0.0;  // sum_{s<=t} R_s^{3/2}
};

/// Time series of one trajectory, stored through t_end (= horizon, or the
/// extinction time); later times are frozen at the last entry.
struct TrajectoryRecord {
  std::uint32_t replica = 0;
  std::int64_t horizon = 0;
  std::vector<StepObservables> steps;
  std::size_t pathwise_violations = 0;

  bool survived() const { return !steps.empty() && steps.back().survived; }
  std::int64_t end_time() const { return steps.empty() ? 0 : steps.back().t; }
  /// Observables at time t, frozen after extinction.
  StepObservables at(std::int64_t t) const;
  /// Appends the observables for time t, extending the running sums.
  void push(StepObservables obs);
};

struct DecayRegressionOptions {
  /// Fit over times in [(1 - fraction) * horizon, horizon].
  double fraction = 0.5;
  std::size_t min_trajectories = 10;
  std::int64_t min_horizon = 50;
  /// Windows whose cumulative-overlap spread is below this are not fitted.
  double min_spread = 1e-6;
};

struct DecayRegression {
  bool applicable = false;
  double median_slope = 0.0;
  double fraction_positive = 0.0;
  std::size_t fitted = 0;
  std::size_t skipped = 0;
  std::vector<double> slopes;
};

/// Least-squares slope of -ln|N̄_t| against sum_{s<t} R_s per surviving trajectory.
DecayRegression decay_regression(const std::vector<TrajectoryRecord>& records,
                                 const DecayRegressionOptions& options = {});

struct LocalizationOptions {
  /// Window [ (1 - fraction) * horizon, horizon ] for the lim sup surrogate.
  double window_fraction = 0.5;
  std::vector<double> thresholds{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
};

struct TrajectoryLocalization {
  double limsup_estimate = 0.0;  // max R_t over the window
  double sum_overlap = 0.0;
  double sum_overlap_32 = 0.0;
  double ratio_32 = 0.0;  // sum R^{3/2} / sum R
  std::vector<std::size_t> exceed_counts;  // #{t : R_t >= c}
  bool survived = false;
};

struct LocalizationSummary {
  std::vector<double> thresholds;
  std::vector<TrajectoryLocalization> trajectories;
  /// Per threshold: fraction of surviving trajectories whose window max is >= c.
  std::vector<double> frac_window_exceeds;
  std::size_t survivors = 0;
};

TrajectoryLocalization localize_trajectory(const TrajectoryRecord& record,
                                           const LocalizationOptions& options);
LocalizationSummary localization_summary(const std::vector<TrajectoryRecord>& records,
                                         const LocalizationOptions& options = {});

/// Median of a copy of the values; NaN for an empty input.
double median(std::vector<double> values);

struct ProportionInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};
/// Wilson score interval.
ProportionInterval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96);

}  // namespace lse
