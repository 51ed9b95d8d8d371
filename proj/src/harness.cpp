#include "lse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "lse/martingale.hpp"
#include "lse/oracle.hpp"

namespace lse {

namespace {

// ---- config parsing helpers ------------------------------------------------

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(path + "." + item.key() + ": unknown field");
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  const std::string where = path + "." + key;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a nonnegative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    }
    out = v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void read_doubles(const Json& j, const char* key, std::vector<double>& out,
                  const std::string& path) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  const std::string where = path + "." + key;
  if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
  out.clear();
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
}

std::string fmt(double v) {
  char buf[40];
  if (v == 0.0) v = 0.0;  // no "-0"
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

LocalizationOptions localization_options(const ExperimentConfig& c) {
  LocalizationOptions o;
  o.window_fraction = c.window_fraction;
  o.thresholds = c.thresholds;
  return o;
}

std::int64_t default_series_horizon(int dim) { return dim <= 2 ? 10'000 : 400; }

}  // namespace

// ---- model / config serialization -----------------------------------------

Json model_to_json(const ModelSpec& spec) {
  Json j;
  j["kind"] = to_string(spec.kind);
  j["dim"] = spec.dim;
  j["p"] = spec.p;
  j["q"] = spec.q;
  j["beta"] = spec.beta;
  Json env;
  switch (spec.env.kind) {
    case EnvLaw::Kind::gaussian: env["kind"] = "gaussian"; break;
    case EnvLaw::Kind::bernoulli:
      env["kind"] = "bernoulli";
      env["p"] = spec.env.bernoulli_p;
      break;
    case EnvLaw::Kind::tabulated:
      env["kind"] = "tabulated";
      env["values"] = spec.env.values;
      env["probs"] = spec.env.probs;
      break;
  }
  j["env"] = env;
  Json kernel = Json::array();
  for (const auto& e : spec.kernel.entries()) {
    const SitePoint s = unpack_site(e.key, spec.kernel.dim());
    Json site = Json::array();
    for (int k = 0; k < spec.kernel.dim(); ++k) site.push_back(s.x[k]);
    kernel.push_back({{"site", site}, {"weight", e.weight}});
  }
  j["kernel"] = kernel;
  j["disorder"] = {{"values", spec.disorder.values}, {"probs", spec.disorder.probs}};
  j["allow_degenerate"] = spec.allow_degenerate;
  return j;
}

ModelSpec model_from_json(const Json& j) {
  const std::string path = "model";
  check_keys(j, {"kind", "dim", "p", "q", "beta", "env", "kernel", "disorder", "allow_degenerate"},
             path);
  ModelSpec spec;
  std::string kind = "osp";
  read_field(j, "kind", kind, path);
  try {
    spec.kind = parse_model_kind(kind);
  } catch (const std::exception& e) {
    throw ConfigError(path + ".kind: " + e.what());
  }
  read_field(j, "dim", spec.dim, path);
  if (spec.dim < 1 || spec.dim > kMaxDim) {
    throw ConfigError(path + ".dim: must be in 1.." + std::to_string(kMaxDim));
  }
  read_field(j, "p", spec.p, path);
  read_field(j, "q", spec.q, path);
  read_field(j, "beta", spec.beta, path);
  read_field(j, "allow_degenerate", spec.allow_degenerate, path);
  if (j.contains("env")) {
    const Json& e = j.at("env");
    check_keys(e, {"kind", "p", "values", "probs"}, path + ".env");
    std::string ek = "gaussian";
    read_field(e, "kind", ek, path + ".env");
    if (ek == "gaussian") {
      spec.env = EnvLaw::gaussian();
    } else if (ek == "bernoulli") {
      double p = 0.5;
      read_field(e, "p", p, path + ".env");
      spec.env = EnvLaw::bernoulli(p);
    } else if (ek == "tabulated") {
      std::vector<double> values, probs;
      read_doubles(e, "values", values, path + ".env");
      read_doubles(e, "probs", probs, path + ".env");
      spec.env = EnvLaw::tabulated(values, probs);
    } else {
      throw ConfigError(path + ".env.kind: unknown law '" + ek + "'");
    }
  }
  spec.kernel = Kernel(spec.dim);
  if (j.contains("kernel")) {
    const Json& k = j.at("kernel");
    if (!k.is_array()) throw ConfigError(path + ".kernel: expected an array");
    std::vector<std::pair<SitePoint, double>> pts;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const std::string where = path + ".kernel[" + std::to_string(i) + "]";
      check_keys(k[i], {"site", "weight"}, where);
      if (!k[i].contains("site") || !k[i]["site"].is_array() ||
          k[i]["site"].size() != static_cast<std::size_t>(spec.dim)) {
        throw ConfigError(where + ".site: expected " + std::to_string(spec.dim) + " integers");
      }
      SitePoint s;
      for (int c = 0; c < spec.dim; ++c) {
        if (!k[i]["site"][c].is_number_integer()) {
          throw ConfigError(where + ".site: expected integers");
        }
        s.x[c] = k[i]["site"][c].get<std::int32_t>();
      }
      double w = 0.0;
      read_field(k[i], "weight", w, where);
      pts.emplace_back(s, w);
    }
    try {
      spec.kernel = Kernel::from_points(spec.dim, pts);
    } catch (const std::exception& e) {
      throw ConfigError(path + ".kernel: " + e.what());
    }
  }
  if (j.contains("disorder")) {
    check_keys(j.at("disorder"), {"values", "probs"}, path + ".disorder");
    read_doubles(j.at("disorder"), "values", spec.disorder.values, path + ".disorder");
    read_doubles(j.at("disorder"), "probs", spec.disorder.probs, path + ".disorder");
  }
  return spec;
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["model"] = model_to_json(c.model);
  j["t_max"] = c.t_max;
  j["replicas"] = c.replicas;
  j["seed"] = c.seed;
  j["observables"] = {{"smoothed_overlap", c.observables.smoothed_overlap},
                      {"localization", c.observables.localization}};
  j["window_fraction"] = c.window_fraction;
  j["thresholds"] = c.thresholds;
  j["decay"] = {{"fraction", c.decay.fraction},
                {"min_trajectories", c.decay.min_trajectories},
                {"min_horizon", c.decay.min_horizon},
                {"min_spread", c.decay.min_spread}};
  j["series_horizon"] = c.series_horizon;
  j["output"] = {{"jsonl", c.output.jsonl}, {"csv", c.output.csv}, {"trace", c.output.trace}};
  j["workers"] = c.workers;
  j["scan"] = {{"parameter", c.scan.parameter}, {"values", c.scan.values}};
  const auto& d = c.diagnose;
  j["diagnose"] = {{"series_horizon", d.series_horizon},
                   {"mc_walks", d.mc_walks},
                   {"mc_horizon", d.mc_horizon},
                   {"birkner_horizon", d.birkner_horizon},
                   {"birkner_radius", d.birkner_radius},
                   {"pathwise_trajectories", d.pathwise_trajectories},
                   {"pathwise_horizon", d.pathwise_horizon},
                   {"ch_configurations", d.ch_configurations},
                   {"oracle_seeds", d.oracle_seeds},
                   {"oracle_t", d.oracle_t},
                   {"corrupt_layout", d.corrupt_layout}};
  j["oracle"] = {{"seeds", c.oracle.seeds},
                 {"t", c.oracle.t},
                 {"exhaustive_t", c.oracle.exhaustive_t},
                 {"max_bits", c.oracle.max_bits}};
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  const std::string path = "config";
  check_keys(j, {"model", "t_max", "replicas", "seed", "observables", "window_fraction",
                 "thresholds", "decay", "series_horizon", "output", "workers", "scan",
                 "diagnose", "oracle"},
             path);
  ExperimentConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  read_field(j, "t_max", c.t_max, path);
  read_field(j, "replicas", c.replicas, path);
  read_field(j, "seed", c.seed, path);
  if (j.contains("observables")) {
    const Json& o = j.at("observables");
    check_keys(o, {"smoothed_overlap", "localization"}, path + ".observables");
    read_field(o, "smoothed_overlap", c.observables.smoothed_overlap, path + ".observables");
    read_field(o, "localization", c.observables.localization, path + ".observables");
  }
  read_field(j, "window_fraction", c.window_fraction, path);
  read_doubles(j, "thresholds", c.thresholds, path);
  if (j.contains("decay")) {
    const Json& o = j.at("decay");
    const std::string p = path + ".decay";
    check_keys(o, {"fraction", "min_trajectories", "min_horizon", "min_spread"}, p);
    read_field(o, "fraction", c.decay.fraction, p);
    read_field(o, "min_trajectories", c.decay.min_trajectories, p);
    read_field(o, "min_horizon", c.decay.min_horizon, p);
    read_field(o, "min_spread", c.decay.min_spread, p);
  }
  read_field(j, "series_horizon", c.series_horizon, path);
  if (j.contains("output")) {
    const Json& o = j.at("output");
    check_keys(o, {"jsonl", "csv", "trace"}, path + ".output");
    read_field(o, "jsonl", c.output.jsonl, path + ".output");
    read_field(o, "csv", c.output.csv, path + ".output");
    read_field(o, "trace", c.output.trace, path + ".output");
  }
  read_field(j, "workers", c.workers, path);
  if (j.contains("scan")) {
    const Json& o = j.at("scan");
    check_keys(o, {"parameter", "values"}, path + ".scan");
    read_field(o, "parameter", c.scan.parameter, path + ".scan");
    read_doubles(o, "values", c.scan.values, path + ".scan");
  }
  if (j.contains("diagnose")) {
    const Json& o = j.at("diagnose");
    const std::string p = path + ".diagnose";
    auto& d = c.diagnose;
    check_keys(o, {"series_horizon", "mc_walks", "mc_horizon", "birkner_horizon",
                   "birkner_radius", "pathwise_trajectories", "pathwise_horizon",
                   "ch_configurations", "oracle_seeds", "oracle_t", "corrupt_layout"},
               p);
    read_field(o, "series_horizon", d.series_horizon, p);
    read_field(o, "mc_walks", d.mc_walks, p);
    read_field(o, "mc_horizon", d.mc_horizon, p);
    read_field(o, "birkner_horizon", d.birkner_horizon, p);
    read_field(o, "birkner_radius", d.birkner_radius, p);
    read_field(o, "pathwise_trajectories", d.pathwise_trajectories, p);
    read_field(o, "pathwise_horizon", d.pathwise_horizon, p);
    read_field(o, "ch_configurations", d.ch_configurations, p);
    read_field(o, "oracle_seeds", d.oracle_seeds, p);
    read_field(o, "oracle_t", d.oracle_t, p);
    read_field(o, "corrupt_layout", d.corrupt_layout, p);
  }
  if (j.contains("oracle")) {
    const Json& o = j.at("oracle");
    const std::string p = path + ".oracle";
    check_keys(o, {"seeds", "t", "exhaustive_t", "max_bits"}, p);
    read_field(o, "seeds", c.oracle.seeds, p);
    read_field(o, "t", c.oracle.t, p);
    read_field(o, "exhaustive_t", c.oracle.exhaustive_t, p);
    read_field(o, "max_bits", c.oracle.max_bits, p);
  }
  if (!c.scan.parameter.empty() && !c.scan.values.empty()) {
    // The scanned parameter of the base model is a placeholder; check each grid point.
    for (double v : c.scan.values) {
      ExperimentConfig point = c;
      point.model = with_parameter(c.model, c.scan.parameter, v);
      point.model.allow_degenerate = true;
      validate_config(point);
    }
  } else {
    validate_config(c);
  }
  return c;
}

void validate_config(const ExperimentConfig& c) {
  try {
    validate(c.model);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.model: ") + e.what());
  }
  if (c.t_max < 0) throw ConfigError("config.t_max: must be >= 0");
  if (c.t_max >= (std::int64_t{1} << 24)) throw ConfigError("config.t_max: must be < 2^24");
  if (c.replicas > (std::size_t{1} << 32)) throw ConfigError("config.replicas: too large");
  if (!(c.window_fraction > 0.0 && c.window_fraction <= 1.0)) {
    throw ConfigError("config.window_fraction: must be in (0, 1]");
  }
  if (!(c.decay.fraction > 0.0 && c.decay.fraction <= 1.0)) {
    throw ConfigError("config.decay.fraction: must be in (0, 1]");
  }
  if (c.series_horizon < 0) throw ConfigError("config.series_horizon: must be >= 0");
  if (c.oracle.t < 0 || c.oracle.t > 10) throw ConfigError("config.oracle.t: must be in 0..10");
  if (c.diagnose.oracle_t < 0 || c.diagnose.oracle_t > 10) {
    throw ConfigError("config.diagnose.oracle_t: must be in 0..10");
  }
  if (c.diagnose.mc_walks < 100) throw ConfigError("config.diagnose.mc_walks: must be >= 100");
  if (c.oracle.max_bits < 0 || c.oracle.max_bits > 30) {
    throw ConfigError("config.oracle.max_bits: must be in 0..30");
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

unsigned resolve_workers(const ExperimentConfig& config) {
  if (config.workers > 0) return config.workers;
  if (const char* env = std::getenv("LSE_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v <= 1024) return static_cast<unsigned>(v);
  }
  return 1;
}

// ---- phase criteria --------------------------------------------------------

PhaseCriteria compute_phase_criteria(const ModelSpec& spec, std::int64_t series_horizon) {
  PhaseCriteria c;
  c.sg_margin = sg_log_margin(spec);
  c.sg_slow_growth = c.sg_margin > 0.0;
  c.gamma = gamma_constant(spec);
  c.correlation = satisfies_correlation_condition(c.gamma);
  const Kernel b = collision_kernel(mean_kernel(spec));
  c.series_horizon = series_horizon > 0 ? series_horizon : default_series_horizon(spec.dim);
  const auto profile = collision_series(b, c.series_horizon);
  c.partial_sum = profile.partial_sums.back();
  c.pi_hat = profile.pi_series;
  c.gamma_pi_margin = c.gamma * c.pi_hat - 1.0;
  c.collision_condition = c.gamma_pi_margin > 0.0;
  if (c.correlation) {
    T0Options opts;
    opts.max_horizon = c.series_horizon;
    opts.pi_horizon = spec.dim >= 3 ? c.series_horizon : opts.pi_horizon;
    c.t0 = select_t0_auto(b, c.gamma, opts);
  }
  return c;
}

Json criteria_to_json(const PhaseCriteria& c) {
  Json j;
  j["sg_margin"] = c.sg_margin;
  j["sg_slow_growth"] = c.sg_slow_growth;
  j["gamma"] = c.gamma;
  j["correlation_condition"] = c.correlation;
  j["series_horizon"] = c.series_horizon;
  j["partial_sum"] = c.partial_sum;
  j["pi_hat"] = c.pi_hat;
  j["gamma_pi_margin"] = c.gamma_pi_margin;
  j["collision_condition"] = c.collision_condition;
  if (c.t0) {
    j["t0"] = {{"status", to_string(c.t0->status)},
               {"t0", c.t0->t0},
               {"epsilon", c.t0->epsilon},
               {"threshold", c.t0->threshold},
               {"reached", c.t0->reached},
               {"horizon", c.t0->horizon}};
  } else {
    j["t0"] = nullptr;
  }
  return j;
}

std::optional<Kernel> localization_kernel(const ModelSpec& spec, const PhaseCriteria& c) {
  if (!c.t0 || c.t0->status != T0Selection::Status::found) return std::nullopt;
  return collision_sum_kernel(collision_kernel(mean_kernel(spec)), c.t0->t0);
}

// ---- trajectories ----------------------------------------------------------

TrajectoryRecord simulate_trajectory(const Stepper& stepper, const ExperimentConfig& config,
                                     std::uint32_t replica, const Kernel* g) {
  const int d = stepper.spec().dim;
  const Kernel abar = stepper.mean().normalized();
  const DisorderStream stream(config.seed, replica);
  TrajectoryRecord rec;
  rec.replica = replica;
  rec.horizon = config.t_max;

  auto observe = [&](const NormalizedState& s) {
    StepObservables o;
    o.t = s.time;
    if (s.extinct) {
      o.survived = false;
      return o;
    }
    o.overlap = replica_overlap(s.rho);
    o.rho_star = max_density(s.rho);
    if (config.observables.smoothed_overlap) {
      o.smoothed_overlap = smoothed_overlap(s.rho, abar).overlap;
    }
    if (g) o.localization = localization_functional(s.rho, *g);
    o.log_nbar = s.log_mass;
    o.support = s.rho.support_size();
    return o;
  };

  auto state = NormalizedState::initial(d);
  rec.push(observe(state));
  for (std::int64_t t = 1; t <= config.t_max; ++t) {
    state = stepper.step(state, stream, t);
    rec.push(observe(state));
    if (state.extinct) break;
  }

  std::vector<std::optional<double>> log_masses;
  log_masses.reserve(rec.steps.size());
  for (const auto& s : rec.steps) log_masses.push_back(s.log_nbar);
  rec.pathwise_violations = pathwise_product_bound(MartingalePath::from_log_masses(log_masses)).violations;
  return rec;
}

TrajectoryFinal finalize(const TrajectoryRecord& record, const ExperimentConfig& config) {
  TrajectoryFinal f;
  f.replica = record.replica;
  f.horizon = record.horizon;
  f.end_time = record.end_time();
  f.survived = record.survived() && f.end_time == record.horizon;
  const auto& last = record.steps.back();
  f.final_log_nbar = last.log_nbar;
  f.final_overlap = last.overlap;
  f.final_rho_star = last.rho_star;
  f.final_support = last.support;
  f.sum_overlap = last.sum_overlap;
  f.sum_overlap_32 = last.sum_overlap_32;
  const auto loc = localize_trajectory(record, localization_options(config));
  f.limsup_estimate = loc.limsup_estimate;
  f.exceed_counts = loc.exceed_counts;
  f.pathwise_violations = record.pathwise_violations;
  f.decay_eligible = f.survived && record.horizon >= config.decay.min_horizon;
  if (f.decay_eligible) {
    DecayRegressionOptions one = config.decay;
    one.min_trajectories = 1;
    const auto fit = decay_regression({record}, one);
    if (fit.fitted == 1) f.decay_slope = fit.slopes.front();
  }
  return f;
}

EnsembleSummary summarize(const std::vector<TrajectoryFinal>& finals,
                          const ExperimentConfig& config) {
  EnsembleSummary s;
  s.replicas = finals.size();
  s.t_max = config.t_max;
  s.thresholds = config.thresholds;
  s.frac_window_exceeds.assign(config.thresholds.size(), 0.0);
  std::vector<double> final_logs, ratios, slopes;
  std::size_t eligible = 0;
  for (const auto& f : finals) {
    s.pathwise_violations += f.pathwise_violations;
    if (f.decay_eligible) ++eligible;
    if (f.decay_slope) slopes.push_back(*f.decay_slope);
    if (!f.survived) continue;
    ++s.survivors;
    if (f.final_log_nbar) final_logs.push_back(*f.final_log_nbar);
    if (f.sum_overlap > 0) ratios.push_back(f.sum_overlap_32 / f.sum_overlap);
    for (std::size_t k = 0; k < config.thresholds.size(); ++k) {
      if (f.limsup_estimate >= config.thresholds[k]) s.frac_window_exceeds[k] += 1.0;
    }
  }
  s.survival = wilson_interval(s.survivors, s.replicas);
  if (s.survivors > 0) {
    for (auto& x : s.frac_window_exceeds) x /= static_cast<double>(s.survivors);
  }
  if (!final_logs.empty()) {
    double sum = 0.0;
    for (double x : final_logs) sum += x;  // replica-index order
    s.mean_final_log_nbar = sum / static_cast<double>(final_logs.size());
    s.median_final_log_nbar = median(final_logs);
  }
  if (!ratios.empty()) s.median_ratio_32 = median(ratios);

  if (eligible < config.decay.min_trajectories) {
    s.decay_note = "needs " + std::to_string(config.decay.min_trajectories) +
                   " surviving trajectories with horizon >= " +
                   std::to_string(config.decay.min_horizon) + ", got " + std::to_string(eligible);
  } else {
    s.decay.slopes = slopes;
    s.decay.fitted = slopes.size();
    s.decay.skipped = eligible - slopes.size();
    s.decay.applicable = s.decay.fitted > 0;
    if (s.decay.applicable) {
      s.decay.median_slope = median(slopes);
      const auto pos = std::count_if(slopes.begin(), slopes.end(), [](double x) { return x > 0; });
      s.decay.fraction_positive = static_cast<double>(pos) / static_cast<double>(slopes.size());
    } else {
      s.decay_note = "every window had a cumulative-overlap spread below min_spread";
    }
  }
  return s;
}

EnsembleRun run_ensemble(const ExperimentConfig& config, bool keep_records, bool with_criteria) {
  validate_config(config);
  EnsembleRun run;
  run.config = config;
  keep_records = keep_records || config.output.trace;

  const Stepper stepper(config.model);
  std::optional<PhaseCriteria> criteria;
  if (with_criteria || config.observables.localization) {
    criteria = compute_phase_criteria(config.model, config.series_horizon);
  }
  std::optional<Kernel> g;
  if (config.observables.localization && criteria) g = localization_kernel(config.model, *criteria);

  const std::size_t n = config.replicas;
  run.finals.resize(n);
  if (keep_records) run.records.resize(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        auto rec = simulate_trajectory(stepper, config, static_cast<std::uint32_t>(i),
                                       g ? &*g : nullptr);
        run.finals[i] = finalize(rec, config);
        if (keep_records) run.records[i] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  const unsigned workers = std::min<std::size_t>(resolve_workers(config), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  run.summary = summarize(run.finals, config);
  run.summary.criteria = criteria;
  return run;
}

// ---- JSONL / CSV -----------------------------------------------------------

Json trajectory_to_json(const TrajectoryFinal& f, const TrajectoryRecord* trace) {
  Json j;
  j["schema"] = kTrajectorySchema;
  j["replica"] = f.replica;
  j["horizon"] = f.horizon;
  j["survived"] = f.survived;
  j["end_time"] = f.end_time;
  j["final"] = {{"log_nbar", optional_json(f.final_log_nbar)},
                {"overlap", f.final_overlap},
                {"rho_star", f.final_rho_star},
                {"support", f.final_support}};
  j["sum_overlap"] = f.sum_overlap;
  j["sum_overlap_32"] = f.sum_overlap_32;
  j["limsup_overlap"] = f.limsup_estimate;
  j["exceed_counts"] = f.exceed_counts;
  j["pathwise_violations"] = f.pathwise_violations;
  j["decay"] = {{"eligible", f.decay_eligible}, {"slope", optional_json(f.decay_slope)}};
  if (trace) {
    Json steps = Json::array();
    for (const auto& s : trace->steps) {
      steps.push_back({{"t", s.t},
                       {"R", s.overlap},
                       {"rho_star", s.rho_star},
                       {"R1", s.smoothed_overlap},
                       {"X", s.localization},
                       {"log_nbar", optional_json(s.log_nbar)},
                       {"support", s.support}});
    }
    j["trace"] = steps;
  }
  return j;
}

TrajectoryFinal trajectory_from_json(const Json& j) {
  if (j.value("schema", "") != kTrajectorySchema) {
    throw IoError("trajectory record with unexpected schema");
  }
  TrajectoryFinal f;
  f.replica = j.at("replica").get<std::uint32_t>();
  f.horizon = j.at("horizon").get<std::int64_t>();
  f.survived = j.at("survived").get<bool>();
  f.end_time = j.at("end_time").get<std::int64_t>();
  const Json& fin = j.at("final");
  f.final_log_nbar = optional_from(fin.at("log_nbar"));
  f.final_overlap = fin.at("overlap").get<double>();
  f.final_rho_star = fin.at("rho_star").get<double>();
  f.final_support = fin.at("support").get<std::size_t>();
  f.sum_overlap = j.at("sum_overlap").get<double>();
  f.sum_overlap_32 = j.at("sum_overlap_32").get<double>();
  f.limsup_estimate = j.at("limsup_overlap").get<double>();
  f.exceed_counts = j.at("exceed_counts").get<std::vector<std::size_t>>();
  f.pathwise_violations = j.at("pathwise_violations").get<std::size_t>();
  f.decay_eligible = j.at("decay").at("eligible").get<bool>();
  f.decay_slope = optional_from(j.at("decay").at("slope"));
  return f;
}

Json summary_to_json(const EnsembleSummary& s) {
  Json j;
  j["schema"] = kSummarySchema;
  j["replicas"] = s.replicas;
  j["t_max"] = s.t_max;
  j["survivors"] = s.survivors;
  j["survival"] = {{"fraction", s.survival.estimate},
                   {"lower", s.survival.lower},
                   {"upper", s.survival.upper}};
  j["mean_final_log_nbar"] = optional_json(s.mean_final_log_nbar);
  j["median_final_log_nbar"] = optional_json(s.median_final_log_nbar);
  Json table = Json::array();
  for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
    table.push_back({{"threshold", s.thresholds[k]}, {"fraction", s.frac_window_exceeds[k]}});
  }
  j["window_exceedance"] = table;
  j["median_ratio_32"] = optional_json(s.median_ratio_32);
  j["decay_regression"] = {{"applicable", s.decay.applicable},
                           {"median_slope", s.decay.median_slope},
                           {"fraction_positive", s.decay.fraction_positive},
                           {"fitted", s.decay.fitted},
                           {"skipped", s.decay.skipped},
                           {"note", s.decay_note}};
  j["pathwise_violations"] = s.pathwise_violations;
  j["criteria"] = s.criteria ? criteria_to_json(*s.criteria) : Json(nullptr);
  return j;
}

void write_jsonl(const EnsembleRun& run, std::ostream& out) {
  Json header;
  header["schema"] = kRunSchema;
  header["version"] = kArtifactVersion;
  // The worker count is an execution detail; records must not depend on it.
  ExperimentConfig recorded = run.config;
  recorded.workers = 0;
  header["config"] = config_to_json(recorded);
  out << header.dump() << '\n';
  const bool trace = run.config.output.trace && run.records.size() == run.finals.size();
  for (std::size_t i = 0; i < run.finals.size(); ++i) {
    out << trajectory_to_json(run.finals[i], trace ? &run.records[i] : nullptr).dump() << '\n';
  }
}

JsonlContents read_jsonl(std::istream& in) {
  JsonlContents c;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!header) {
        if (j.value("schema", "") != kRunSchema) {
          throw IoError("line " + std::to_string(lineno) + ": missing run header");
        }
        c.config = config_from_json(j.at("config"));
        header = true;
      } else {
        c.finals.push_back(trajectory_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw IoError("empty trajectory file");
  return c;
}

std::string summary_csv_header(const ExperimentConfig& config, bool with_scan_column) {
  std::string h = with_scan_column ? "scan_value," : "";
  h +=
      "model,dim,p,q,beta,t_max,replicas,seed,survivors,survival_fraction,survival_lo,"
      "survival_hi,mean_final_log_nbar,median_final_log_nbar,median_ratio_32,decay_applicable,"
      "decay_median_slope,decay_fraction_positive,decay_fitted,pathwise_violations,sg_margin,"
      "gamma,pi_hat,gamma_pi_margin,t0_status,t0";
  for (double c : config.thresholds) h += ",exceed_" + fmt(c);
  return h;
}

std::string summary_csv_row(const ExperimentConfig& config, const EnsembleSummary& s,
                            std::optional<double> scan_value) {
  std::ostringstream os;
  if (scan_value) os << fmt(*scan_value) << ',';
  const auto& m = config.model;
  os << to_string(m.kind) << ',' << m.dim << ',' << fmt(m.p) << ',' << fmt(m.q) << ','
     << fmt(m.beta) << ',' << config.t_max << ',' << s.replicas << ',' << config.seed << ','
     << s.survivors << ',' << fmt(s.survival.estimate) << ',' << fmt(s.survival.lower) << ','
     << fmt(s.survival.upper) << ',' << fmt(s.mean_final_log_nbar) << ','
     << fmt(s.median_final_log_nbar) << ',' << fmt(s.median_ratio_32) << ','
     << (s.decay.applicable ? "true" : "false") << ','
     << (s.decay.applicable ? fmt(s.decay.median_slope) : "") << ','
     << (s.decay.applicable ? fmt(s.decay.fraction_positive) : "") << ',' << s.decay.fitted
     << ',' << s.pathwise_violations << ',';
  if (s.criteria) {
    const auto& c = *s.criteria;
    os << fmt(c.sg_margin) << ',' << fmt(c.gamma) << ',' << fmt(c.pi_hat) << ','
       << fmt(c.gamma_pi_margin) << ',' << (c.t0 ? to_string(c.t0->status) : "not_applicable")
       << ',' << (c.t0 && c.t0->status == T0Selection::Status::found ? std::to_string(c.t0->t0) : "");
  } else {
    os << ",,,,,";
  }
  for (double x : s.frac_window_exceeds) os << ',' << fmt(x);
  return os.str();
}

// ---- phase scan ------------------------------------------------------------

ModelSpec with_parameter(ModelSpec spec, const std::string& name, double value) {
  if (name == "p") {
    spec.p = value;
  } else if (name == "q") {
    spec.q = value;
  } else if (name == "beta") {
    spec.beta = value;
  } else {
    throw ConfigError("config.scan.parameter: must be one of p, q, beta");
  }
  return spec;
}

std::vector<PhaseScanRow> phase_scan(const ExperimentConfig& config) {
  if (config.scan.values.empty()) throw ConfigError("config.scan.values: empty grid");
  std::vector<PhaseScanRow> rows;
  for (double v : config.scan.values) {
    ExperimentConfig c = config;
    c.model = with_parameter(config.model, config.scan.parameter, v);
    // Trivial parameter points (beta = 0, p = 1, ...) are part of the portrait.
    c.model.allow_degenerate = true;
    validate_config(c);
    rows.push_back({v, run_ensemble(c, false, true).summary});
  }
  return rows;
}

void write_phase_scan_csv(const ExperimentConfig& config, const std::vector<PhaseScanRow>& rows,
                          std::ostream& out) {
  out << summary_csv_header(config, true) << '\n';
  for (const auto& r : rows) {
    const ModelSpec m = with_parameter(config.model, config.scan.parameter, r.value);
    ExperimentConfig c = config;
    c.model = m;
    out << summary_csv_row(c, r.summary, r.value) << '\n';
  }
}

// ---- diagnose --------------------------------------------------------------

namespace {

Json kernel_to_json(const Kernel& k) {
  Json arr = Json::array();
  for (const auto& e : k.entries()) {
    const SitePoint s = unpack_site(e.key, k.dim());
    Json site = Json::array();
    for (int c = 0; c < k.dim(); ++c) site.push_back(s.x[c]);
    arr.push_back({{"site", site}, {"weight", e.weight}});
  }
  return arr;
}

Json oracle_section(const ModelSpec& spec, std::uint64_t seed, std::size_t seeds, std::int64_t t,
                    StreamLayout layout, std::vector<std::string>& failures) {
  Json j;
  j["t"] = t;
  j["seeds"] = seeds;
  j["layout"] = layout == StreamLayout::canonical ? "canonical" : "swapped_slots";
  std::size_t matches = 0, extinct = 0;
  double max_rel = 0.0;
  Json first = nullptr;
  try {
    for (std::size_t i = 0; i < seeds; ++i) {
      const auto v = oracle_equivalence(spec, seed, static_cast<std::uint32_t>(i), t, layout);
      if (v.ok) {
        ++matches;
        if (v.extinct) ++extinct;
        max_rel = std::max(max_rel, v.max_rel_error);
      } else if (first.is_null()) {
        first = {{"replica", i}, {"message", v.message}};
      }
    }
  } catch (const OracleBudgetExceeded& e) {
    j["skipped"] = e.what();
    return j;
  }
  j["matches"] = matches;
  j["extinct"] = extinct;
  j["max_rel_error"] = max_rel;
  j["first_mismatch"] = first;
  if (matches != seeds) {
    failures.push_back("oracle equivalence: " + std::to_string(seeds - matches) + " of " +
                       std::to_string(seeds) + " trajectories diverge (" +
                       first["message"].get<std::string>() + ")");
  }
  return j;
}

}  // namespace

CheckReport diagnose(const ExperimentConfig& config) {
  validate_config(config);
  const auto& spec = config.model;
  const auto& opt = config.diagnose;
  const int d = spec.dim;
  CheckReport report;
  auto& doc = report.document;
  auto& failures = report.failures;
  doc["schema"] = kDiagnosticSchema;
  doc["version"] = kArtifactVersion;
  doc["model"] = model_to_json(spec);
  doc["description"] = spec.describe();

  const MeanKernel mk = mean_kernel(spec);
  const Kernel b = collision_kernel(mk);
  doc["kernel"] = {{"a", kernel_to_json(mk.a)},
                   {"norm_a", mk.norm_a},
                   {"norm_a2", mk.norm_a2},
                   {"range", mk.range},
                   {"irreducible", mk.irreducible},
                   {"b_support", b.support_size()}};

  // Collision series and the pi cross-check.
  const std::int64_t mc_t = opt.mc_horizon > 0 ? opt.mc_horizon : 400;
  std::int64_t horizon = opt.series_horizon > 0 ? opt.series_horizon : default_series_horizon(d);
  horizon = std::max(horizon, mc_t);
  std::vector<std::int64_t> extra{mc_t};
  for (std::int64_t h = 10; h < horizon; h *= 10) extra.push_back(h);
  const auto profile = collision_series(b, horizon, {}, SeriesMethod::automatic, extra);
  Json table = Json::array();
  for (std::int64_t h : extra) table.push_back({{"T", h}, {"s_T", profile.partial_sum(h)}});
  table.push_back({{"T", horizon}, {"s_T", profile.partial_sums.back()}});
  std::sort(table.begin(), table.end(),
            [](const Json& x, const Json& y) { return x["T"].get<std::int64_t>() < y["T"].get<std::int64_t>(); });
  table.erase(std::unique(table.begin(), table.end()), table.end());
  doc["collision_series"] = {{"method", to_string(profile.method)},
                             {"horizon", horizon},
                             {"s_T", table},
                             {"pi_series", profile.pi_series},
                             {"partial_sum_exceeds_10", profile.partial_sums.back() > 10.0}};

  const auto mc = pi_monte_carlo(mk.a, opt.mc_walks, mc_t, config.seed, resolve_workers(config));
  const double matched = pi_from_partial_sum(profile.partial_sum(mc_t));
  const double diff = std::abs(matched - mc.pi_from_visits);
  const double tol = 4.0 * mc.pi_from_visits_std_error + 1e-12;
  doc["pi_monte_carlo"] = {{"walks", mc.n_walks},
                           {"horizon", mc.t_max},
                           {"pi_mc", mc.pi_mc},
                           {"pi_mc_ci", {mc.ci.lower, mc.ci.upper}},
                           {"mean_visits", mc.mean_visits},
                           {"pi_from_visits", mc.pi_from_visits},
                           {"pi_from_visits_std_error", mc.pi_from_visits_std_error},
                           {"pi_series_matched", matched},
                           {"abs_difference", diff},
                           {"tolerance", tol},
                           {"agree", diff <= tol}};
  if (diff > tol) failures.push_back("pi cross-check: series and Monte Carlo disagree");
  if (d >= 3) {
    const auto fit = geometric_chi_square(mc.visit_histogram, mc.pi_mc);
    doc["geometric_visits"] = {{"pi_hat", fit.pi_hat},
                               {"chi_square", fit.chi_square},
                               {"dof", fit.dof},
                               {"p_value", fit.p_value},
                               {"passes_5pct", fit.p_value >= 0.05}};
  } else {
    doc["geometric_visits"] = nullptr;  // recurrent: V_inf is infinite
  }

  // Criteria and t0.
  const double gamma = gamma_constant(spec);
  const double sg = sg_log_margin(spec);
  Json t0 = nullptr;
  if (gamma > 1.0) {
    T0Options o;
    o.max_horizon = horizon;
    o.pi_horizon = d >= 3 ? horizon : o.pi_horizon;
    const auto sel = select_t0_auto(b, gamma, o);
    t0 = {{"status", to_string(sel.status)},
          {"t0", sel.t0},
          {"epsilon", sel.epsilon},
          {"threshold", sel.threshold},
          {"reached", sel.reached},
          {"horizon", sel.horizon}};
    if (sel.status == T0Selection::Status::found) {
      const Kernel g = collision_sum_kernel(b, sel.t0);
      t0["g_mass"] = g.total_mass();
      t0["g_support"] = g.support_size();
    }
  }
  doc["criteria"] = {{"sg_margin", sg},
                     {"sg_slow_growth", sg > 0.0},
                     {"gamma", gamma},
                     {"correlation_condition", gamma > 1.0},
                     {"pi_hat", profile.pi_series},
                     {"gamma_pi_margin", gamma * profile.pi_series - 1.0},
                     {"collision_condition", gamma * profile.pi_series > 1.0},
                     {"t0", t0}};

  try {
    const auto bk = birkner_ratio(mk.a, opt.birkner_horizon, opt.birkner_radius);
    const std::int64_t half = opt.birkner_horizon / 2;
    doc["birkner"] = {{"horizon", opt.birkner_horizon},
                      {"radius", opt.birkner_radius},
                      {"ratio", bk.ratio},
                      {"argmax_t", bk.argmax_t},
                      {"late_window_max", bk.window_max(half + 1, opt.birkner_horizon)}};
  } catch (const BudgetExceeded& e) {
    doc["birkner"] = {{"skipped", e.what()}};
  }

  // Martingale checks.
  {
    ExperimentConfig c = config;
    c.t_max = opt.pathwise_horizon > 0 ? opt.pathwise_horizon : (d == 1 ? 100 : d == 2 ? 50 : 25);
    c.observables.smoothed_overlap = false;
    const Stepper stepper(spec);
    std::size_t violations = 0, inconsistent = 0;
    for (std::size_t i = 0; i < opt.pathwise_trajectories; ++i) {
      const auto rec = simulate_trajectory(stepper, c, static_cast<std::uint32_t>(i));
      violations += rec.pathwise_violations;
      std::vector<std::optional<double>> lm;
      for (const auto& s : rec.steps) lm.push_back(s.log_nbar);
      if (!MartingalePath::from_log_masses(lm).consistent()) ++inconsistent;
    }
    const std::size_t factor = elementary_factor_sweep(-1.0, 10.0, 1e-3);
    std::mt19937_64 rng(config.seed);
    std::size_t ch_bad = 0;
    const DiscreteLaw half{{0.0, 1.0}, {0.5, 0.5}};
    if (!ch_inequality_check({half, half}).ok()) ++ch_bad;
    for (std::size_t i = 0; i < opt.ch_configurations; ++i) {
      if (!ch_inequality_check(random_ch_configuration(rng)).ok()) ++ch_bad;
    }
    doc["martingale"] = {{"pathwise_trajectories", opt.pathwise_trajectories},
                         {"pathwise_horizon", c.t_max},
                         {"pathwise_violations", violations},
                         {"inconsistent_paths", inconsistent},
                         {"factor_bound_violations", factor},
                         {"ch_configurations", opt.ch_configurations + 1},
                         {"ch_violations", ch_bad}};
    if (violations) failures.push_back("pathwise product bound violated");
    if (inconsistent) failures.push_back("martingale path inconsistent with its increments");
    if (factor) failures.push_back("elementary factor bounds violated");
    if (ch_bad) failures.push_back("CH inequalities violated");
  }

  const std::int64_t ot = opt.oracle_t > 0 ? opt.oracle_t : (d == 1 ? 6 : 4);
  doc["oracle"] = oracle_section(
      spec, config.seed, opt.oracle_seeds, ot,
      opt.corrupt_layout ? StreamLayout::swapped_slots : StreamLayout::canonical, failures);

  doc["failures"] = failures;
  doc["ok"] = failures.empty();
  return report;
}

CheckReport oracle_verify(const ExperimentConfig& config) {
  validate_config(config);
  const auto& spec = config.model;
  CheckReport report;
  auto& doc = report.document;
  doc["schema"] = kOracleSchema;
  doc["version"] = kArtifactVersion;
  doc["model"] = model_to_json(spec);
  const std::int64_t t = config.oracle.t > 0 ? config.oracle.t : (spec.dim == 1 ? 8 : 5);
  doc["equivalence"] = oracle_section(spec, config.seed, config.oracle.seeds, t,
                                      config.diagnose.corrupt_layout ? StreamLayout::swapped_slots
                                                                     : StreamLayout::canonical,
                                      report.failures);

  const bool percolation = spec.kind == ModelKind::osp || spec.kind == ModelKind::gosp ||
                           spec.kind == ModelKind::gobp;
  if (percolation) {
    std::optional<ExhaustiveLaw> law;
    if (config.oracle.exhaustive_t > 0) {
      law = exhaustive_distribution(spec, config.oracle.exhaustive_t, config.oracle.max_bits);
    } else {
      for (std::int64_t s = 1; s <= 10; ++s) {
        try {
          law = exhaustive_distribution(spec, s, config.oracle.max_bits);
        } catch (const OracleBudgetExceeded&) {
          break;
        }
      }
    }
    if (law) {
      doc["exhaustive"] = {{"t", law->t},
                           {"bits", law->bits},
                           {"outcomes", law->outcomes.size()},
                           {"total_probability", law->total_probability.str()},
                           {"mean_normalized_mass", law->mean_normalized_mass.str()},
                           {"martingale_exact", law->martingale_exact}};
      if (!law->martingale_exact) report.failures.push_back("exhaustive E|N̄_t| != 1");
      if (law->total_probability != 1) report.failures.push_back("exhaustive law not normalized");
    } else {
      doc["exhaustive"] = {{"skipped", "bit budget exceeded at t = 1"}};
    }
  } else {
    doc["exhaustive"] = nullptr;
  }
  doc["failures"] = report.failures;
  doc["ok"] = report.failures.empty();
  return report;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace lse
