#pragma once

#include <string>

#include "mfeig/design.hpp"
#include "mfeig/sweep.hpp"

namespace mfeig::io {

// Doubles are written as %.17g so files are byte-stable across reruns and
// round-trip to the exact bit pattern.
std::string format_double(double v);

void write_pilot_json(const std::string& path, const PilotResult& pilot, bool include_measured_costs);
PilotResult read_pilot_json(const std::string& path);

void write_design_json(const std::string& path, const EstimatorDesign& design);
EstimatorDesign read_design_json(const std::string& path);

void write_sweep_csv(const std::string& path, const SweepResult& sweep);
void write_reduction_csv(const std::string& path, const ReductionReport& report);

struct SummaryInfo {
  const SweepResult* mf = nullptr;
  const SweepResult* baseline = nullptr;  // optional
  const ReductionReport* report = nullptr;  // optional
  std::vector<index_t> n_in;
  std::string family;
};

void write_summary_json(const std::string& path, const SummaryInfo& summary);

}  // namespace mfeig::io
