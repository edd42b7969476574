#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfeig/common.hpp"

namespace mfeig {

// How observation noise enters the data model.
//   additive: y = g(theta, xi) + eps,         log|J^-1| = 0
//   scaled:   y = g(theta, xi) * (1 + eps),   log|J^-1| = -sum_i log|g_i|
enum class NoiseForm { additive, scaled };

// A design point: its coordinates plus its position in the run's design
// list (tabulated models are addressed by that index).
struct DesignPoint {
  std::vector<double> value;
  int index = -1;

  double scalar() const { return value.empty() ? 0.0 : value[0]; }
};

// Precomputed forward-model outputs: exact lookup keyed by
// (sample index, design index), no interpolation.
class TabulatedModel {
 public:
  TabulatedModel(Matrix thetas, std::vector<std::vector<double>> designs, index_t ny, Matrix outputs);

  index_t n_samples() const { return thetas_.rows(); }
  index_t n_designs() const { return static_cast<index_t>(designs_.size()); }
  index_t n_theta() const { return thetas_.cols(); }
  index_t ny() const { return ny_; }
  const std::vector<std::vector<double>>& designs() const { return designs_; }
  const Matrix& thetas() const { return thetas_; }

  std::span<const double> lookup(index_t sample, index_t design) const;

 private:
  Matrix thetas_;
  std::vector<std::vector<double>> designs_;
  index_t ny_;
  Matrix outputs_;  // n_samples x (n_designs * ny)
};

struct TabulatedManifest {
  index_t n_theta = 1;
  index_t ny = 1;
  std::vector<std::vector<double>> designs;
};

// CSV schema: header `sample_index,design_index,theta_0..,y_0..`; one row per
// (sample, design) pair, complete over the full grid, no NaN entries.
std::shared_ptr<const TabulatedModel> load_tabulated_model(const std::string& path, const TabulatedManifest& manifest);

// Analytic benchmark forward models.
enum class BenchmarkFn {
  case1_g0,        // theta^3 xi^2            + theta exp(-|0.2-xi|)
  case1_g1,        // k1 theta^2.5 xi^1.75    + theta exp(-|0.2-xi|), k1 = 0.5^0.5
  case1_g2,        // k2 theta^2   xi^1.5     + theta exp(-|0.2-xi|), k2 = 0.5
  linear_gaussian  // coeff * xi * Phi^-1(theta)
};

std::optional<BenchmarkFn> benchmark_fn_from_name(const std::string& name);
const char* benchmark_fn_name(BenchmarkFn fn);

// Descriptor of one member of the multi-fidelity ensemble. id 0 is the
// high-fidelity model; cost_g is the (assigned or measured) cost of one
// forward evaluation in budget units.
class ForwardModel {
 public:
  enum class Kind { benchmark, tabulated };

  static ForwardModel benchmark(int id, BenchmarkFn fn, double cost_g, double coeff = 1.0, double output_offset = 0.0);
  static ForwardModel tabulated(int id, std::shared_ptr<const TabulatedModel> table, double cost_g);

  int id() const { return id_; }
  Kind kind() const { return kind_; }
  double cost_g() const { return cost_g_; }
  void set_cost_g(double c) { cost_g_ = c; }
  BenchmarkFn fn() const { return fn_; }
  double coeff() const { return coeff_; }
  double output_offset() const { return output_offset_; }
  const std::shared_ptr<const TabulatedModel>& table() const { return table_; }

  index_t ny() const;
  index_t n_theta() const;

  // Deterministic forward evaluation g(theta, xi). Tabulated models read
  // theta[0] as the sample index and require xi.index to address the table.
  void eval(std::span<const double> theta, const DesignPoint& xi, std::span<double> out) const;
  std::vector<double> eval(std::span<const double> theta, const DesignPoint& xi) const;

  // Coefficients (a, b) with g = a * theta^e + b * theta + offset for the
  // kernel fast path; disengaged for non-polynomial models.
  struct PolyCoef {
    int power_kind;  // 3, 25 (meaning 2.5), or 2
    double a;
    double b;
    double shift;
  };
  std::optional<PolyCoef> poly_coef(const DesignPoint& xi) const;

 private:
  int id_ = 0;
  Kind kind_ = Kind::benchmark;
  double cost_g_ = 1.0;
  BenchmarkFn fn_ = BenchmarkFn::case1_g0;
  double coeff_ = 1.0;
  double output_offset_ = 0.0;
  std::shared_ptr<const TabulatedModel> table_;
};

// y = h(eps; theta, xi) under the given noise form.
std::vector<double> simulate_data(const ForwardModel& model, NoiseForm form, std::span<const double> theta,
                                  const DesignPoint& xi, std::span<const double> eps);

struct InverseResult {
  std::vector<double> eps;
  double log_abs_det_jinv;
};

// eps = h^-1(y; theta, xi) plus log|det J^-1|. Scaled form fails on any
// g_i(theta, xi) == 0 (non-invertible data model at that theta).
InverseResult inverse_noise(const ForwardModel& model, NoiseForm form, std::span<const double> y,
                            std::span<const double> theta, const DesignPoint& xi);

}  // namespace mfeig
