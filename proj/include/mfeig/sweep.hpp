#pragma once

#include <vector>

#include "mfeig/design.hpp"
#include "mfeig/utility.hpp"

namespace mfeig {

// Repeated-trial estimates over a design grid. Within a trial every design
// shares the same outer-sample streams (common random numbers); across
// trials only the trial label changes.
struct SweepResult {
  std::vector<DesignPoint> designs;
  Matrix estimates;  // n_trials x n_designs
  std::vector<double> mean;
  std::vector<double> variance;  // unbiased over trials; NaN when n_trials < 2
  std::vector<double> band_lo;   // mean -/+ 2 sd
  std::vector<double> band_hi;

  index_t n_trials() const { return estimates.rows(); }
};

// Evaluates the multi-fidelity estimator design at every (trial, design)
// pair. specs lists the full ensemble (model 0 first); the design's
// active_models selects which low-fidelity members participate.
SweepResult run_sweep(const std::vector<DesignPoint>& designs, const EstimatorDesign& est,
                      const std::vector<UtilityModelSpec>& specs, index_t n_trials, const RngStream& rng,
                      const NoiseSpec& noise, const PriorSpec& prior, int workers = 0);

// Single-fidelity NMC baseline: plain MC on u_0 with n_out outer samples.
SweepResult run_baseline_nmc(const std::vector<DesignPoint>& designs, index_t n_out, const UtilityModelSpec& spec0,
                             index_t n_trials, const RngStream& rng, const NoiseSpec& noise, const PriorSpec& prior,
                             int workers = 0);

struct ReductionReport {
  std::vector<double> baseline_var;
  std::vector<double> mf_var;
  std::vector<double> ratio;  // +inf marks zero multi-fidelity variance
  double avg_baseline_var = 0.0;
  double avg_mf_var = 0.0;
  double avg_ratio = 0.0;  // ratio of averaged variances
  index_t argmax_index = 0;
  DesignPoint argmax;
};

// Per-design and design-averaged variance reduction; designs with zero
// multi-fidelity variance are marked infinite and left out of the averages.
ReductionReport reduction_report(const SweepResult& baseline, const SweepResult& mf);

// Maximizer of the empirical mean; ties break toward the lowest index.
index_t argmax_design(const SweepResult& sweep);

}  // namespace mfeig
