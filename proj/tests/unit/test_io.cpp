#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfeig/benchmark.hpp"
#include "mfeig/config.hpp"
#include "mfeig/io.hpp"

using namespace mfeig;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("design JSON round trip is exact") {
  EstimatorDesign d;
  d.family = EstimatorFamily::ACVIS;
  d.active_models = {1, 2};
  const index_t extras[] = {123, 4567};
  d.allocation = acvis_allocation(89, extras);
  d.alpha = Eigen::VectorXd(2);
  d.alpha << -0.987654321234567891, -0.112233445566778899;
  d.n_in = {2500, 925, 2500};
  d.projected_variance = 9.6612345678901234e-5;
  d.projected_cost = 2.4999e6;

  const auto path = temp_path("design_rt.json");
  io::write_design_json(path, d);
  const auto r = io::read_design_json(path);
  CHECK(r.family == d.family);
  CHECK(r.active_models == d.active_models);
  CHECK(r.n_in == d.n_in);
  CHECK(r.alpha(0) == d.alpha(0));
  CHECK(r.alpha(1) == d.alpha(1));
  CHECK(r.projected_variance == d.projected_variance);
  REQUIRE(r.allocation.groups.size() == d.allocation.groups.size());
  for (std::size_t g = 0; g < d.allocation.groups.size(); ++g) {
    CHECK(r.allocation.groups[g].size == d.allocation.groups[g].size);
    CHECK(r.allocation.groups[g].in_z0 == d.allocation.groups[g].in_z0);
    CHECK(r.allocation.groups[g].in_zstar == d.allocation.groups[g].in_zstar);
    CHECK(r.allocation.groups[g].in_z == d.allocation.groups[g].in_z);
  }

  // Rewriting produces identical bytes.
  const auto path2 = temp_path("design_rt2.json");
  io::write_design_json(path2, r);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("pilot JSON round trip") {
  PilotResult p;
  p.designs = linspace_designs(0.0, 1.0, 3);
  p.n_pilot = 100;
  p.n_in = {64, 32, 16};
  p.cost_w = {65.0, 3.3, 0.17};
  p.sigma_bar = Eigen::MatrixXd(3, 3);
  p.sigma_bar << 1.0, 0.9, 0.8, 0.9, 1.1, 0.7, 0.8, 0.7, 1.2;
  p.sigma_per_design = {p.sigma_bar, p.sigma_bar, p.sigma_bar};
  p.measured_wg = {1e-6, 2e-7, 3e-8};
  p.rho0 = {1.0, 0.95, 0.9};
  p.degenerate = {0, 0, 1};

  const auto path = temp_path("pilot_rt.json");
  io::write_pilot_json(path, p, false);
  const auto r = io::read_pilot_json(path);
  CHECK(r.n_pilot == 100);
  CHECK(r.n_in == p.n_in);
  CHECK(r.cost_w == p.cost_w);
  CHECK((r.sigma_bar - p.sigma_bar).norm() == 0.0);
  CHECK(r.sigma_per_design.size() == 3);
  CHECK(r.degenerate == p.degenerate);
  CHECK(r.measured_wg.empty());  // excluded unless measured costs are in use

  io::write_pilot_json(path, p, true);
  CHECK(io::read_pilot_json(path).measured_wg == p.measured_wg);
}

TEST_CASE("CSV writers") {
  SweepResult sweep;
  sweep.designs = linspace_designs(0.0, 1.0, 2);
  sweep.estimates = Matrix(2, 2);
  sweep.estimates(0, 0) = 0.125;
  sweep.estimates(1, 0) = 0.25;
  sweep.estimates(0, 1) = 0.5;
  sweep.estimates(1, 1) = 1.0;
  sweep.mean = {0.1875, 0.75};
  sweep.variance = {1e-2, 2e-2};
  sweep.band_lo = {0., 0.};
  sweep.band_hi = {1., 1.};

  const auto spath = temp_path("sweep.csv");
  io::write_sweep_csv(spath, sweep);
  const auto text = slurp(spath);
  CHECK(text.find("design_index,design_value_0,trial,estimate\n") == 0);
  CHECK(text.find("0,0,0,0.125\n") != std::string::npos);
  CHECK(text.find("1,1,1,1\n") != std::string::npos);

  const auto rep = reduction_report(sweep, sweep);
  const auto rpath = temp_path("reduction.csv");
  io::write_reduction_csv(rpath, rep);
  const auto rtext = slurp(rpath);
  CHECK(rtext.find("design_index,baseline_var,mf_var,ratio\n") == 0);
  CHECK(rtext.find("0,0.01") != std::string::npos);

  const auto jpath = temp_path("summary.json");
  io::SummaryInfo info;
  info.mf = &sweep;
  info.baseline = &sweep;
  info.report = &rep;
  info.n_in = {10, 20};
  info.family = "ACVIS";
  io::write_summary_json(jpath, info);
  const auto jtext = slurp(jpath);
  CHECK(jtext.find("\"xi_star_index\":1") != std::string::npos);
  CHECK(jtext.find("\"avg_reduction_ratio\":1") != std::string::npos);
}

TEST_CASE("config loading") {
  const std::string good = R"({
    "master_seed": 11,
    "prior": [{"lower": 0.0, "upper": 1.0}],
    "noise": {"kind": "gaussian", "sigma": [0.01], "form": "additive"},
    "models": [
      {"id": 0, "kind": "benchmark", "fn": "case1_g0", "cost": 1.0},
      {"id": 1, "kind": "benchmark", "fn": "case1_g1", "cost": 0.1},
      {"id": 2, "kind": "benchmark", "fn": "case1_g2", "cost": 0.01}
    ],
    "designs": {"linspace": {"from": 0.0, "to": 1.0, "n": 41}},
    "budget": {"w_budget": 2.5e6, "n_in_0": 2500,
               "n_in_search_box": [[25, 4000], [25, 4000]], "strategy": "grid", "grid_points": 50},
    "n_in": [2500, 2500],
    "pilot": {"n_pilot": 500},
    "sweep": {"n_trials": 50},
    "reuse_inner": false,
    "output_dir": "out"
  })";
  const auto path = temp_path("config_ok.json");
  {
    std::ofstream f(path);
    f << good;
  }
  const auto cfg = load_config(path);
  CHECK(cfg.master_seed == 11);
  CHECK(cfg.designs.size() == 41);
  CHECK(cfg.designs[40].value[0] == doctest::Approx(1.0));
  CHECK(cfg.ensemble.size() == 3);
  CHECK(cfg.ensemble[1].n_in == 2500);
  CHECK(cfg.ensemble[1].cost() == doctest::Approx(2501 * 0.1));
  CHECK(cfg.budget.n_in_box.size() == 2);
  CHECK(cfg.n_trials == 50);

  SUBCASE("missing fields are config errors") {
    const auto bad_path = temp_path("config_bad.json");
    {
      std::ofstream f(bad_path);
      f << R"({"master_seed": 1})";
    }
    CHECK_THROWS_AS(static_cast<void>(load_config(bad_path)), ConfigError);
  }

  SUBCASE("duplicate model ids are rejected") {
    std::string dup = good;
    const auto pos = dup.find("\"id\": 1");
    dup.replace(pos, 7, "\"id\": 0");
    const auto dup_path = temp_path("config_dup.json");
    {
      std::ofstream f(dup_path);
      f << dup;
    }
    CHECK_THROWS_AS(static_cast<void>(load_config(dup_path)), ConfigError);
  }
}

TEST_CASE("integer axis covers both ends") {
  const auto axis = integer_axis(25, 4000, 50);
  CHECK(axis.size() == 50);
  CHECK(axis.front() == 25);
  CHECK(axis.back() == 4000);
  for (std::size_t i = 1; i < axis.size(); ++i) CHECK(axis[i] > axis[i - 1]);
}
