#pragma once

// Experiment configuration, ensemble orchestration, and JSONL / CSV output.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lse/models.hpp"
#include "lse/rwalk.hpp"
#include "lse/statistics.hpp"

namespace lse {

using Json = nlohmann::ordered_json;

inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr const char* kRunSchema = "lse.run/1";
inline constexpr const char* kTrajectorySchema = "lse.trajectory/1";
inline constexpr const char* kSummarySchema = "lse.summary/1";
inline constexpr const char* kDiagnosticSchema = "lse.diagnostic/1";
inline constexpr const char* kOracleSchema = "lse.oracle/1";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitCheckFailed = 3, kExitIo = 4 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ObservableToggles {
  bool smoothed_overlap = true;
  /// X_t = <g * rho_t, rho_t>, with g from the t0 selection.
  bool localization = false;
};

struct OutputPaths {
  std::string jsonl;
  std::string csv;
  bool trace = false;  // per-step series in every JSONL record
};

struct ScanSpec {
  std::string parameter;  // "p", "q" or "beta"
  std::vector<double> values;
};

struct DiagnoseOptions {
  std::int64_t series_horizon = 0;  // 0: 10^4 for d <= 2, 400 for d >= 3
  std::size_t mc_walks = 20'000;
  std::int64_t mc_horizon = 0;  // 0: 400
  std::int64_t birkner_horizon = 50;
  int birkner_radius = 5;
  std::size_t pathwise_trajectories = 20;
  std::int64_t pathwise_horizon = 0;  // 0: 100 for d = 1, 50 for d = 2, 25 for d >= 3
  std::size_t ch_configurations = 200;
  std::size_t oracle_seeds = 10;
  std::int64_t oracle_t = 0;  // 0: 6 for d = 1, 4 for d >= 2
  /// Test fixture: run the simulator side of the oracle check with a
  /// deliberately wrong stream layout.
  bool corrupt_layout = false;
};

struct OracleOptions {
  std::size_t seeds = 20;
  std::int64_t t = 0;             // 0: 8 for d = 1, 5 for d >= 2
  std::int64_t exhaustive_t = 0;  // 0: largest t within the bit budget (percolation models)
  int max_bits = 24;
};

struct ExperimentConfig {
  ModelSpec model = ModelSpec::osp(1, 0.8);
  std::int64_t t_max = 100;
  std::size_t replicas = 100;
  std::uint64_t seed = 1;
  ObservableToggles observables;
  double window_fraction = 0.5;
  std::vector<double> thresholds{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  DecayRegressionOptions decay;
  /// Horizon of the collision series behind the phase criteria (0: module default).
  std::int64_t series_horizon = 0;
  OutputPaths output;
  unsigned workers = 0;  // 0: LSE_WORKERS, else 1
  ScanSpec scan;
  DiagnoseOptions diagnose;
  OracleOptions oracle;
};

/// Parses and validates; field-level messages in ConfigError.
ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);
/// Checks ranges and the model; throws ConfigError.
void validate_config(const ExperimentConfig& config);

Json model_to_json(const ModelSpec& spec);
ModelSpec model_from_json(const Json& j);

/// config.workers, else LSE_WORKERS, else 1.
unsigned resolve_workers(const ExperimentConfig& config);

// ---------------------------------------------------------------------------

struct PhaseCriteria {
  double sg_margin = 0.0;
  bool sg_slow_growth = false;  // margin > 0
  double gamma = 0.0;
  bool correlation = false;  // gamma > 1
  std::int64_t series_horizon = 0;
  double partial_sum = 0.0;
  double pi_hat = 0.0;
  double gamma_pi_margin = 0.0;  // gamma * pi_hat - 1
  bool collision_condition = false;
  std::optional<T0Selection> t0;  // when gamma > 1
};

PhaseCriteria compute_phase_criteria(const ModelSpec& spec, std::int64_t series_horizon = 0);
Json criteria_to_json(const PhaseCriteria& c);

/// Everything a JSONL trajectory record carries; enough to rebuild the summary.
struct TrajectoryFinal {
  std::uint32_t replica = 0;
  std::int64_t horizon = 0;
  bool survived = false;
  std::int64_t end_time = 0;
  std::optional<double> final_log_nbar;
  double final_overlap = 0.0;
  double final_rho_star = 0.0;
  std::size_t final_support = 0;
  double sum_overlap = 0.0;
  double sum_overlap_32 = 0.0;
  double limsup_estimate = 0.0;
  std::vector<std::size_t> exceed_counts;
  std::size_t pathwise_violations = 0;
  bool decay_eligible = false;
  std::optional<double> decay_slope;
};

struct EnsembleSummary {
  std::size_t replicas = 0;
  std::int64_t t_max = 0;
  std::size_t survivors = 0;
  ProportionInterval survival;
  std::optional<double> mean_final_log_nbar;
  std::optional<double> median_final_log_nbar;
  std::vector<double> thresholds;
  std::vector<double> frac_window_exceeds;
  std::optional<double> median_ratio_32;
  DecayRegression decay;
  std::string decay_note;  // why the regression is not applicable
  std::size_t pathwise_violations = 0;
  std::optional<PhaseCriteria> criteria;
};

struct EnsembleRun {
  ExperimentConfig config;
  EnsembleSummary summary;
  std::vector<TrajectoryFinal> finals;
  std::vector<TrajectoryRecord> records;  // when kept
};

/// One trajectory from N_0 = delta_0 to t_max or extinction.
TrajectoryRecord simulate_trajectory(const Stepper& stepper, const ExperimentConfig& config,
                                     std::uint32_t replica, const Kernel* g = nullptr);
TrajectoryFinal finalize(const TrajectoryRecord& record, const ExperimentConfig& config);

/// Localization kernel g for the configured model, when t0 selection succeeds.
std::optional<Kernel> localization_kernel(const ModelSpec& spec, const PhaseCriteria& criteria);

EnsembleSummary summarize(const std::vector<TrajectoryFinal>& finals,
                          const ExperimentConfig& config);

/// Runs the ensemble on resolve_workers() threads; output is independent of
/// the worker count.
EnsembleRun run_ensemble(const ExperimentConfig& config, bool keep_records = false,
                         bool with_criteria = true);

Json trajectory_to_json(const TrajectoryFinal& f, const TrajectoryRecord* trace);
TrajectoryFinal trajectory_from_json(const Json& j);
Json summary_to_json(const EnsembleSummary& s);

/// Header line (run schema, version, config) followed by one line per trajectory.
void write_jsonl(const EnsembleRun& run, std::ostream& out);
struct JsonlContents {
  ExperimentConfig config;
  std::vector<TrajectoryFinal> finals;
};
JsonlContents read_jsonl(std::istream& in);

std::string summary_csv_header(const ExperimentConfig& config, bool with_scan_column = false);
std::string summary_csv_row(const ExperimentConfig& config, const EnsembleSummary& s,
                            std::optional<double> scan_value = std::nullopt);

// ---------------------------------------------------------------------------

struct PhaseScanRow {
  double value = 0.0;
  EnsembleSummary summary;
};

ModelSpec with_parameter(ModelSpec spec, const std::string& name, double value);
std::vector<PhaseScanRow> phase_scan(const ExperimentConfig& config);
void write_phase_scan_csv(const ExperimentConfig& config, const std::vector<PhaseScanRow>& rows,
                          std::ostream& out);

struct CheckReport {
  Json document;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Collision profile, pi estimates and their cross-check, t0, Birkner ratio,
/// pathwise and CH checks, oracle spot checks.
CheckReport diagnose(const ExperimentConfig& config);

/// Oracle equivalence over config.oracle.seeds replicas, plus the exhaustive
/// martingale check for percolation models.
CheckReport oracle_verify(const ExperimentConfig& config);

/// Writes text to a file, throwing IoError.
void write_file(const std::string& path, const std::string& text);

}  // namespace lse
