#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfeig/design.hpp"
#include "mfeig/utility.hpp"

namespace mfeig {

// A fully validated run configuration, loaded from one JSON document.
struct RunConfig {
  std::uint64_t master_seed = 0;
  PriorSpec prior;
  NoiseSpec noise;
  NoiseForm form = NoiseForm::additive;
  std::vector<UtilityModelSpec> ensemble;  // model 0 first
  std::vector<DesignPoint> designs;

  BudgetSpec budget;
  std::optional<std::vector<index_t>> fixed_n_in;  // low-fidelity sizes; engages fixed-size design
  SearchStrategy strategy = SearchStrategy::grid;
  index_t grid_points = 50;

  index_t n_pilot = 0;
  std::vector<int> pilot_design_indices;  // empty = all designs

  index_t n_trials = 2;
  bool reuse_inner = false;
  std::string cost_source = "assigned";  // or "measured"
  std::string output_dir = "out";
  int workers = 0;
  std::vector<EstimatorFamily> families;  // candidate families; empty = all
};

RunConfig load_config(const std::string& path);

// Evenly spaced design grid over [lo, hi].
std::vector<DesignPoint> linspace_designs(double lo, double hi, index_t n);

// Baseline outer-loop size at equal budget, rounded up.
index_t baseline_n_out(double w_budget, double w0);

// Integer lattice axis with `points` evenly spaced values across [lo, hi].
std::vector<index_t> integer_axis(index_t lo, index_t hi, index_t points);

}  // namespace mfeig
