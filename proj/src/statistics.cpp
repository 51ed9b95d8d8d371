#include "lse/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lse {

double replica_overlap(const WeightField& rho) { return rho.sum_of_squares(); }

double max_density(const WeightField& rho) { return rho.max_weight(); }

SmoothedOverlap smoothed_overlap(const WeightField& rho, const Kernel& abar) {
  SmoothedOverlap out;
  out.rho1 = convolve(rho, abar);
  out.overlap = out.rho1.sum_of_squares();
  return out;
}

double localization_functional(const WeightField& rho, const Kernel& g) {
  if (rho.empty() || g.empty()) return 0.0;
  const Kernel smoothed = convolve(g, rho);
  double x = 0.0;
  for (const auto& e : rho.entries()) x += smoothed.at(e.key) * e.weight;
  return x;
}

// ---------------------------------------------------------------------------

StepObservables TrajectoryRecord::at(std::int64_t t) const {
  if (steps.empty()) return {};
  if (t <= steps.back().t) return steps[static_cast<std::size_t>(t)];
  StepObservables frozen = steps.back();
  frozen.t = t;
  return frozen;
}

void TrajectoryRecord::push(StepObservables obs) {
  const double prev = steps.empty() ? 0.0 : steps.back().sum_overlap;
  const double prev32 = steps.empty() ? 0.0 : steps.back().sum_overlap_32;
  obs.sum_overlap = prev + obs.overlap;
  obs.sum_overlap_32 = prev32 + obs.overlap * std::sqrt(obs.overlap);
  steps.push_back(std::move(obs));
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ProportionInterval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  ProportionInterval out;
  if (trials == 0) {
    out.upper = 1.0;
    return out;
  }
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  out.estimate = p;
  out.lower = std::max(0.0, centre - half);
  out.upper = std::min(1.0, centre + half);
  return out;
}

DecayRegression decay_regression(const std::vector<TrajectoryRecord>& records,
                                 const DecayRegressionOptions& options) {
  std::vector<const TrajectoryRecord*> eligible;
  for (const auto& r : records) {
    if (r.survived() && r.end_time() >= options.min_horizon && r.end_time() == r.horizon) {
      eligible.push_back(&r);
    }
  }
  if (eligible.size() < options.min_trajectories) {
    throw InsufficientData("decay regression needs at least " +
                           std::to_string(options.min_trajectories) +
                           " surviving trajectories with horizon >= " +
                           std::to_string(options.min_horizon) + ", got " +
                           std::to_string(eligible.size()));
  }

  DecayRegression out;
  for (const auto* r : eligible) {
    const std::int64_t h = r->end_time();
    const auto lo = std::max<std::int64_t>(
        1, h - static_cast<std::int64_t>(std::floor(options.fraction * static_cast<double>(h))));
    double sx = 0, sy = 0;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    std::size_t n = 0;
    for (std::int64_t t = lo; t <= h; ++t) {
      const double x = r->steps[t - 1].sum_overlap;
      const double y = -*r->steps[t].log_nbar;
      sx += x;
      sy += y;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ++n;
    }
    if (n < 2 || xmax - xmin < options.min_spread) {
      ++out.skipped;
      continue;
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::int64_t t = lo; t <= h; ++t) {
      const double dx = r->steps[t - 1].sum_overlap - mx;
      sxx += dx * dx;
      sxy += dx * (-*r->steps[t].log_nbar - my);
    }
    out.slopes.push_back(sxy / sxx);
  }
  out.fitted = out.slopes.size();
  out.applicable = out.fitted > 0;
  if (out.applicable) {
    out.median_slope = median(out.slopes);
    const auto positive = std::count_if(out.slopes.begin(), out.slopes.end(),
                                        [](double s) { return s > 0.0; });
    out.fraction_positive = static_cast<double>(positive) / static_cast<double>(out.fitted);
  }
  return out;
}

TrajectoryLocalization localize_trajectory(const TrajectoryRecord& record,
                                           const LocalizationOptions& options) {
  TrajectoryLocalization out;
  out.exceed_counts.assign(options.thresholds.size(), 0);
  if (record.steps.empty()) return out;
  const std::int64_t h = record.horizon;
  const auto lo =
      h - static_cast<std::int64_t>(std::floor(options.window_fraction * static_cast<double>(h)));
  for (std::int64_t t = lo; t <= h; ++t) {
    out.limsup_estimate = std::max(out.limsup_estimate, record.at(t).overlap);
  }
  const auto last = record.at(h);
  out.sum_overlap = last.sum_overlap;
  out.sum_overlap_32 = last.sum_overlap_32;
  out.ratio_32 = out.sum_overlap > 0 ? out.sum_overlap_32 / out.sum_overlap : 0.0;
  for (const auto& s : record.steps) {
    for (std::size_t k = 0; k < options.thresholds.size(); ++k) {
      if (s.overlap >= options.thresholds[k]) ++out.exceed_counts[k];
    }
  }
  out.survived = record.survived() && record.end_time() >= h;
  return out;
}

LocalizationSummary localization_summary(const std::vector<TrajectoryRecord>& records,
                                         const LocalizationOptions& options) {
  LocalizationSummary out;
  out.thresholds = options.thresholds;
  out.frac_window_exceeds.assign(options.thresholds.size(), 0.0);
  std::vector<std::size_t> hits(options.thresholds.size(), 0);
  for (const auto& r : records) {
    auto loc = localize_trajectory(r, options);
    if (loc.survived) {
      ++out.survivors;
      for (std::size_t k = 0; k < options.thresholds.size(); ++k) {
        if (loc.limsup_estimate >= options.thresholds[k]) ++hits[k];
      }
    }
    out.trajectories.push_back(std::move(loc));
  }
  if (out.survivors > 0) {
    for (std::size_t k = 0; k < hits.size(); ++k) {
      out.frac_window_exceeds[k] =
          static_cast<double>(hits[k]) / static_cast<double>(out.survivors);
    }
  }
  return out;
}

}  // namespace lse
