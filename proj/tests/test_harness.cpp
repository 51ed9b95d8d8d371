#include <cmath>
#include <sstream>

#include "doctest.h"
#include "lse/harness.hpp"

using namespace lse;

namespace {

ExperimentConfig small_config(ModelSpec spec, std::int64_t t_max, std::size_t n) {
  ExperimentConfig c;
  c.model = std::move(spec);
  c.t_max = t_max;
  c.replicas = n;
  c.seed = 12;
  c.workers = 1;
  c.series_horizon = 200;
  return c;
}

std::string jsonl_of(const EnsembleRun& run) {
  std::ostringstream os;
  write_jsonl(run, os);
  return os.str();
}

DiagnoseOptions quick_diagnose() {
  DiagnoseOptions d;
  d.series_horizon = 1000;
  d.mc_walks = 2000;
  d.mc_horizon = 200;
  d.birkner_horizon = 20;
  d.pathwise_trajectories = 5;
  d.pathwise_horizon = 30;
  d.ch_configurations = 20;
  d.oracle_seeds = 5;
  return d;
}

}  // namespace

TEST_CASE("config parsing: defaults, round trip and field errors") {
  const auto def = config_from_json(Json::object());
  CHECK(def.model.kind == ModelKind::osp);
  CHECK(def.t_max == 100);

  const auto c = config_from_json(Json::parse(R"({
    "model": {"kind": "dpre", "dim": 2, "beta": 0.7, "env": {"kind": "bernoulli", "p": 0.3}},
    "t_max": 50, "replicas": 7, "seed": 99, "thresholds": [0.1, 0.3],
    "output": {"trace": true}
  })"));
  CHECK(c.model.kind == ModelKind::dpre);
  CHECK(c.model.env.kind == EnvLaw::Kind::bernoulli);
  CHECK(c.model.env.bernoulli_p == 0.3);
  CHECK(c.replicas == 7);
  CHECK(c.thresholds == std::vector<double>{0.1, 0.3});
  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));

  auto err = [](const char* text) -> std::string {
    try {
      config_from_json(Json::parse(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(err(R"({"t_maxx": 5})").find("t_maxx") != std::string::npos);
  CHECK(err(R"({"t_max": "long"})").find("config.t_max") != std::string::npos);
  CHECK(err(R"({"model": {"kind": "ising"}})").find("model.kind") != std::string::npos);
  CHECK(err(R"({"model": {"kind": "osp", "p": 1.5}})").find("config.model") != std::string::npos);
  CHECK(err(R"({"model": {"kind": "dpre", "env": {"kind": "bernoulli", "q": 1}}})")
            .find("model.env") != std::string::npos);
  CHECK(err(R"({"window_fraction": 0})").find("window_fraction") != std::string::npos);
  CHECK(err(R"({"t_max": -1})").find("t_max") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("multiplicative model config") {
  const auto c = config_from_json(Json::parse(R"({
    "model": {"kind": "multiplicative", "dim": 1,
              "kernel": [{"site": [-1], "weight": 0.4}, {"site": [1], "weight": 0.6}],
              "disorder": {"values": [0, 2], "probs": [0.5, 0.5]}}
  })"));
  CHECK(c.model.kernel.support_size() == 2);
  CHECK(gamma_constant(c.model) == doctest::Approx(2.0));
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({
    "model": {"kind": "multiplicative", "dim": 2,
              "kernel": [{"site": [1], "weight": 1.0}], "disorder": {"values": [1], "probs": [1]}}
  })")), ConfigError);
}

TEST_CASE("worker resolution") {
  ExperimentConfig c;
  c.workers = 3;
  CHECK(resolve_workers(c) == 3);
}

TEST_CASE("empty ensemble") {
  const auto run = run_ensemble(small_config(ModelSpec::osp(1, 0.8), 10, 0));
  CHECK(run.summary.replicas == 0);
  CHECK(run.summary.survivors == 0);
  CHECK(run.finals.empty());
  const auto text = jsonl_of(run);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);  // header only
}

TEST_CASE("subcritical percolation dies out") {
  const auto run = run_ensemble(small_config(ModelSpec::osp(1, 0.2), 100, 1000), false, false);
  MESSAGE("survival " << run.summary.survival.estimate);
  CHECK(run.summary.survival.estimate < 0.05);
}

TEST_CASE("output is independent of the worker count") {
  auto c = small_config(ModelSpec::gobp(1, 0.7, 0.3), 60, 40);
  c.output.trace = true;
  const auto one = jsonl_of(run_ensemble(c));
  for (unsigned w : {4u, 8u}) {
    c.workers = w;
    CHECK(jsonl_of(run_ensemble(c)) == one);
  }
  c.workers = 1;
  CHECK(jsonl_of(run_ensemble(c)) == one);  // and across repeated runs
}

TEST_CASE("JSONL round trip rebuilds the summary") {
  auto c = small_config(ModelSpec::dpre(1, 1.5), 80, 25);
  c.decay.min_trajectories = 5;
  const auto run = run_ensemble(c);
  std::istringstream in(jsonl_of(run));
  const auto back = read_jsonl(in);
  auto recorded = c;
  recorded.workers = 0;  // not part of the record
  CHECK(config_to_json(back.config) == config_to_json(recorded));
  REQUIRE(back.finals.size() == run.finals.size());
  auto rebuilt = summarize(back.finals, back.config);
  auto original = run.summary;
  original.criteria.reset();  // criteria are not per-trajectory data
  CHECK(summary_to_json(rebuilt).dump() == summary_to_json(original).dump());
  CHECK(summary_csv_row(c, rebuilt) == summary_csv_row(c, original));

  std::istringstream bad("{\"schema\": \"something/else\"}\n");
  CHECK_THROWS_AS(read_jsonl(bad), IoError);
}

TEST_CASE("records carry schemas and trajectory fields") {
  auto c = small_config(ModelSpec::bcpp(1, 0.8, 0.4), 30, 3);
  c.output.trace = true;
  std::istringstream in(jsonl_of(run_ensemble(c)));
  std::string line;
  std::getline(in, line);
  const auto header = Json::parse(line);
  CHECK(header["schema"] == kRunSchema);
  CHECK(header["version"] == kArtifactVersion);
  int n = 0;
  while (std::getline(in, line)) {
    const auto rec = Json::parse(line);
    CHECK(rec["schema"] == kTrajectorySchema);
    CHECK(rec.contains("replica"));
    CHECK(rec.contains("survived"));
    CHECK(rec.contains("trace"));
    ++n;
  }
  CHECK(n == 3);
}

TEST_CASE("phase criteria arithmetic") {
  SUBCASE("Gaussian DPRE d = 1") {
    const double bc = std::sqrt(2 * std::log(2.0));
    std::vector<std::pair<double, bool>> grid{{0.0, false}, {0.5, false}, {1.0, false}, {2.0, true}};
    for (auto [beta, slow] : grid) {
      auto s = ModelSpec::dpre(1, beta);
      s.allow_degenerate = true;
      CHECK((sg_log_margin(s) > 0) == slow);
    }
    CHECK(std::abs(sg_log_margin(ModelSpec::dpre(1, bc))) < 1e-12);
  }
  SUBCASE("OSP d = 1") {
    CHECK(compute_phase_criteria(ModelSpec::osp(1, 0.3), 200).sg_slow_growth);
    CHECK_FALSE(compute_phase_criteria(ModelSpec::osp(1, 0.5), 200).sg_slow_growth);
    CHECK_FALSE(compute_phase_criteria(ModelSpec::osp(1, 0.8), 200).sg_slow_growth);
  }
  SUBCASE("OSP d = 3 collision verdict") {
    const auto c = compute_phase_criteria(ModelSpec::osp(3, 0.9), 200);
    CHECK(c.gamma == doctest::Approx(1 / 0.9));
    CHECK(c.pi_hat == doctest::Approx(0.3259).epsilon(1e-3));
    CHECK(c.gamma_pi_margin == doctest::Approx(c.gamma * c.pi_hat - 1));
    CHECK_FALSE(c.collision_condition);
    REQUIRE(c.t0);
    CHECK(c.t0->status == T0Selection::Status::infeasible);
  }
}

TEST_CASE("phase scan") {
  auto c = small_config(ModelSpec::dpre(1, 1.0), 20, 10);
  c.scan = {"beta", {0.0, 0.5, 1.0, 2.0}};
  const auto rows = phase_scan(c);
  REQUIRE(rows.size() == 4);
  std::ostringstream os;
  write_phase_scan_csv(c, rows, os);
  const auto text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  CHECK(text.rfind("scan_value,", 0) == 0);
  for (const auto& r : rows) {
    REQUIRE(r.summary.criteria);
    CHECK(r.summary.criteria->sg_slow_growth == (r.value > 1.2));
  }
  c.scan = {"gamma", {1.0}};
  CHECK_THROWS_AS(phase_scan(c), ConfigError);
}

TEST_CASE("scan configs validate grid points, not the placeholder base value") {
  const Json j = Json::parse(R"({"model": {"kind": "osp", "dim": 1},
                                 "scan": {"parameter": "p", "values": [0.3, 0.5, 0.8]}})");
  const auto c = config_from_json(j);
  CHECK(c.model.p == 0.0);
  CHECK(c.scan.values.size() == 3);

  Json bad = j;
  bad["scan"]["values"] = {0.3, 1.5};
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  Json no_scan = j;
  no_scan.erase("scan");
  CHECK_THROWS_AS(config_from_json(no_scan), ConfigError);
}

TEST_CASE("diagnose: OSP d = 1") {
  auto c = small_config(ModelSpec::osp(1, 0.5), 10, 1);
  c.diagnose = quick_diagnose();
  c.diagnose.series_horizon = 10'000;
  const auto r = diagnose(c);
  for (const auto& f : r.failures) MESSAGE(f);
  CHECK(r.ok());
  const auto& doc = r.document;
  CHECK(doc["schema"] == kDiagnosticSchema);
  CHECK(doc["collision_series"]["pi_series"].get<double>() >= 0.98);
  CHECK(doc["criteria"]["t0"]["status"] == "found");
  CHECK(doc["criteria"]["t0"]["t0"] == 7);
  CHECK(doc["pi_monte_carlo"]["agree"] == true);
  CHECK(doc["oracle"]["matches"] == 5);
}

TEST_CASE("diagnose: trapped difference walk has s_T = T") {
  auto spec = ModelSpec::multiplicative(WeightField::point_mass(1, make_site({1})),
                                        DiscreteLaw{{0.0, 2.0}, {0.5, 0.5}});
  spec.allow_degenerate = true;
  auto c = small_config(spec, 10, 1);
  c.diagnose = quick_diagnose();
  const auto r = diagnose(c);
  for (const auto& f : r.failures) MESSAGE(f);
  CHECK(r.ok());
  for (const auto& row : r.document["collision_series"]["s_T"])
    CHECK(row["s_T"].get<double>() == doctest::Approx(row["T"].get<double>()));
  CHECK(r.document["pi_monte_carlo"]["pi_mc"] == 1.0);
}

TEST_CASE("diagnose and oracle-verify flag a corrupted stream layout") {
  auto c = small_config(ModelSpec::gosp(1, 0.5, 0.4), 10, 1);
  c.diagnose = quick_diagnose();
  c.diagnose.oracle_seeds = 10;
  c.diagnose.corrupt_layout = true;
  const auto r = diagnose(c);
  CHECK_FALSE(r.ok());
  CHECK(r.document["ok"] == false);
  c.oracle.seeds = 10;
  c.oracle.t = 6;
  const auto o = oracle_verify(c);
  CHECK_FALSE(o.ok());
  c.diagnose.corrupt_layout = false;
  const auto good = oracle_verify(c);
  CHECK(good.ok());
  CHECK(good.document["exhaustive"]["martingale_exact"] == true);
}
