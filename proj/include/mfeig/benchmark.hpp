#pragma once

#include <cstdint>

#include "mfeig/config.hpp"
#include "mfeig/sweep.hpp"

namespace mfeig::bench {

// The bundled one-dimensional nonlinear benchmark: three analytic forward
// models of decreasing fidelity (costs 1, 0.1, 0.01), theta ~ U(0,1),
// sigma = 1e-2 Gaussian noise, 41 designs over [0,1], pilot of 500 samples
// per design, total budget 2.5e6 with the high-fidelity inner loop fixed at
// 2500, and 50 estimation trials.
struct Case1Options {
  NoiseForm form = NoiseForm::additive;
  bool optimize_n_in = false;  // grid-search the low-fidelity inner sizes
  bool reuse_inner = false;
  std::uint64_t seed = 7041991;
  index_t n_trials = 50;
  index_t n_pilot = 500;
  index_t n_designs = 41;
  double w_budget = 2.5e6;
  index_t n_in_0 = 2500;
  index_t grid_points = 50;
  index_t box_lo = 25;
  index_t box_hi = 4000;
  int workers = 0;
};

struct Case1Result {
  std::vector<UtilityModelSpec> specs;  // inner sizes as finally used
  std::vector<DesignPoint> designs;
  PilotResult pilot;
  EstimatorDesign design;
  std::vector<index_t> n_in;
  index_t baseline_n_out = 0;
  SweepResult mf;
  SweepResult baseline;
  ReductionReport report;
  Matrix search_surface;  // grid mode only
};

// Case 1 model ensemble at the given inner sizes (n_in.size() == 3).
std::vector<UtilityModelSpec> case1_specs(NoiseForm form, bool reuse, std::span<const index_t> n_in);

PriorSpec case1_prior();
NoiseSpec case1_noise();

// Full pilot -> design -> sweep -> report pipeline with the settings above.
Case1Result run_case1(const Case1Options& opt);

// All five reference estimator families.
std::span<const EstimatorFamily> all_families();

}  // namespace mfeig::bench
