// lsesim: command-line front end for ensembles, phase scans, diagnostics and
// oracle checks. Settings come from defaults, then the --config file, then flags.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "lse/harness.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::string> model;
  std::optional<int> dim;
  std::optional<double> p, q, beta;
  std::optional<std::int64_t> t_max;
  std::optional<std::size_t> replicas;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> jsonl, csv;
  bool trace = false;
  bool allow_degenerate = false;
  bool localization = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file");
  cmd->add_option("--model", o.model, "osp | gosp | gobp | dpre | bcpp | multiplicative");
  cmd->add_option("--dim", o.dim, "lattice dimension");
  cmd->add_option("--p", o.p, "parameter p");
  cmd->add_option("--q", o.q, "parameter q");
  cmd->add_option("--beta", o.beta, "inverse temperature");
  cmd->add_option("--t-max", o.t_max, "horizon");
  cmd->add_option("--replicas", o.replicas, "number of trajectories");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--workers", o.workers, "worker threads (default: LSE_WORKERS or 1)");
  cmd->add_flag("--allow-degenerate", o.allow_degenerate, "accept trivial or reducible models");
}

lse::Json merged_config(const Overrides& o) {
  lse::Json j = lse::Json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw lse::IoError("cannot open config file '" + o.config_path + "'");
    try {
      j = lse::Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw lse::ConfigError(o.config_path + ": " + e.what());
    }
    if (!j.is_object()) throw lse::ConfigError(o.config_path + ": expected a JSON object");
  }
  auto& m = j["model"];
  if (m.is_null()) m = lse::Json::object();
  if (o.model) m["kind"] = *o.model;
  if (o.dim) m["dim"] = *o.dim;
  if (o.p) m["p"] = *o.p;
  if (o.q) m["q"] = *o.q;
  if (o.beta) m["beta"] = *o.beta;
  if (o.allow_degenerate) m["allow_degenerate"] = true;
  if (o.t_max) j["t_max"] = *o.t_max;
  if (o.replicas) j["replicas"] = *o.replicas;
  if (o.seed) j["seed"] = *o.seed;
  if (o.workers) j["workers"] = *o.workers;
  if (o.jsonl) j["output"]["jsonl"] = *o.jsonl;
  if (o.csv) j["output"]["csv"] = *o.csv;
  if (o.trace) j["output"]["trace"] = true;
  if (o.localization) j["observables"]["localization"] = true;
  return j;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    lse::write_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear stochastic evolution simulator"};
  app.require_subcommand(1);
  Overrides o;

  auto* simulate = app.add_subcommand("simulate", "run an ensemble; write JSONL and CSV");
  add_common(simulate, o);
  simulate->add_option("--jsonl", o.jsonl, "per-trajectory JSONL output");
  simulate->add_option("--csv", o.csv, "ensemble summary CSV output");
  simulate->add_flag("--trace", o.trace, "include per-step series in JSONL");
  simulate->add_flag("--localization", o.localization, "record X_t with the selected g");

  auto* scan = app.add_subcommand("phase-scan", "ensembles over a one-parameter grid");
  add_common(scan, o);
  std::optional<std::string> scan_param;
  std::vector<double> scan_values;
  scan->add_option("--param", scan_param, "p | q | beta");
  scan->add_option("--values", scan_values, "grid values")->delimiter(',');
  scan->add_option("--csv", o.csv, "table output (default stdout)");

  auto* diag = app.add_subcommand("diagnose", "collision, criteria and consistency report");
  add_common(diag, o);
  std::string diag_out;
  bool corrupt = false;
  std::optional<std::int64_t> series_horizon;
  diag->add_option("-o,--out", diag_out, "report path (default stdout)");
  diag->add_option("--series-horizon", series_horizon, "collision series horizon");
  diag->add_flag("--corrupt-layout", corrupt, "test fixture: wrong stream layout in the simulator");

  auto* oracle = app.add_subcommand("oracle-verify", "simulator vs path enumeration");
  add_common(oracle, o);
  std::string oracle_out;
  std::optional<std::size_t> oracle_seeds;
  std::optional<std::int64_t> oracle_t;
  oracle->add_option("-o,--out", oracle_out, "report path (default stdout)");
  oracle->add_option("--seeds", oracle_seeds, "number of replicas to compare");
  oracle->add_option("--t", oracle_t, "time of comparison (<= 10)");
  oracle->add_flag("--corrupt-layout", corrupt, "test fixture: wrong stream layout in the simulator");

  auto* report = app.add_subcommand("report", "re-aggregate an existing JSONL file");
  std::string report_in, report_csv, report_out;
  report->add_option("-i,--input", report_in, "JSONL file")->required();
  report->add_option("--csv", report_csv, "summary CSV output");
  report->add_option("-o,--out", report_out, "summary JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? lse::kExitOk : lse::kExitConfig;
  }

  try {
    if (report->parsed()) {
      std::ifstream in(report_in);
      if (!in) throw lse::IoError("cannot open '" + report_in + "'");
      const auto contents = lse::read_jsonl(in);
      auto summary = lse::summarize(contents.finals, contents.config);
      summary.criteria =
          lse::compute_phase_criteria(contents.config.model, contents.config.series_horizon);
      if (!report_csv.empty()) {
        lse::write_file(report_csv, lse::summary_csv_header(contents.config) + "\n" +
                                        lse::summary_csv_row(contents.config, summary) + "\n");
      }
      emit(report_out, lse::summary_to_json(summary).dump(2) + "\n");
      return lse::kExitOk;
    }

    lse::Json j = merged_config(o);
    if (scan->parsed()) {
      if (scan_param) j["scan"]["parameter"] = *scan_param;
      if (!scan_values.empty()) j["scan"]["values"] = scan_values;
    }
    if (corrupt) j["diagnose"]["corrupt_layout"] = true;
    if (series_horizon) j["diagnose"]["series_horizon"] = *series_horizon;
    if (oracle_seeds) j["oracle"]["seeds"] = *oracle_seeds;
    if (oracle_t) j["oracle"]["t"] = *oracle_t;
    const lse::ExperimentConfig config = lse::config_from_json(j);

    if (simulate->parsed()) {
      const auto run = lse::run_ensemble(config);
      if (!config.output.jsonl.empty()) {
        std::ostringstream os;
        lse::write_jsonl(run, os);
        lse::write_file(config.output.jsonl, os.str());
      }
      if (!config.output.csv.empty()) {
        lse::write_file(config.output.csv, lse::summary_csv_header(config) + "\n" +
                                               lse::summary_csv_row(config, run.summary) + "\n");
      }
      std::cout << lse::summary_to_json(run.summary).dump(2) << "\n";
      return run.summary.pathwise_violations == 0 ? lse::kExitOk : lse::kExitCheckFailed;
    }
    if (scan->parsed()) {
      const auto rows = lse::phase_scan(config);
      std::ostringstream os;
      lse::write_phase_scan_csv(config, rows, os);
      emit(config.output.csv, os.str());
      return lse::kExitOk;
    }
    if (diag->parsed()) {
      const auto r = lse::diagnose(config);
      emit(diag_out, r.document.dump(2) + "\n");
      for (const auto& f : r.failures) std::cerr << "check failed: " << f << "\n";
      return r.ok() ? lse::kExitOk : lse::kExitCheckFailed;
    }
    if (oracle->parsed()) {
      const auto r = lse::oracle_verify(config);
      emit(oracle_out, r.document.dump(2) + "\n");
      for (const auto& f : r.failures) std::cerr << "check failed: " << f << "\n";
      return r.ok() ? lse::kExitOk : lse::kExitCheckFailed;
    }
  } catch (const lse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return lse::kExitConfig;
  } catch (const lse::ModelError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return lse::kExitConfig;
  } catch (const lse::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return lse::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lse::kExitCheckFailed;
  }
  return lse::kExitOk;
}
