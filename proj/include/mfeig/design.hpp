#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mfeig/acv.hpp"
#include "mfeig/utility.hpp"

namespace mfeig {

// Budget and inner-loop search box. n_in_0 (the high-fidelity inner size) is
// fixed: it controls estimator bias, which variance minimization cannot see.
struct BudgetSpec {
  double w_budget = 0.0;
  index_t n_in_0 = 1;
  std::vector<std::pair<index_t, index_t>> n_in_box;  // per low-fidelity model
};

struct PilotResult {
  std::vector<DesignPoint> designs;
  std::vector<Eigen::MatrixXd> sigma_per_design;
  Eigen::MatrixXd sigma_bar;  // arithmetic mean of the per-design matrices
  std::vector<index_t> n_in;  // inner sizes the utility models were evaluated at
  std::vector<double> cost_w;       // utility-model costs (n_in + 1) * w^g
  std::vector<double> measured_wg;  // measured seconds per forward evaluation
  index_t n_pilot = 0;
  std::vector<std::uint8_t> degenerate;  // per design: some model had zero variance
  std::vector<double> rho0;              // design-averaged correlation of each u_m to u_0
};

// Evaluates every utility model on a shared pilot batch at each design and
// forms the per-design and design-averaged covariance matrices.
PilotResult run_pilot(const std::vector<UtilityModelSpec>& specs, const std::vector<DesignPoint>& designs,
                      index_t n_pilot, const RngStream& rng, const NoiseSpec& noise, const PriorSpec& prior,
                      int workers = 0);

// Unbiased sample covariance of the utility vectors; columns[m] points at n
// values of u_m.
Eigen::MatrixXd sample_covariance(std::span<const double* const> columns, index_t n);

// Total estimator cost: model 0 pays for z0, model m for z*_m u z_m.
double estimator_cost(std::span<const double> w, const AllocationMatrix& A);

struct EstimatorDesign {
  EstimatorFamily family = EstimatorFamily::MC;
  std::vector<int> active_models;  // low-fidelity ensemble indices used, ascending
  AllocationMatrix allocation;     // columns follow active_models order
  Eigen::VectorXd alpha;
  std::vector<index_t> n_in;  // all models 0..M
  double projected_variance = 0.0;
  double projected_cost = 0.0;
};

// Budget-constrained variance minimization: per family and (for M <= 4) per
// low-fidelity model subset, continuous group-size ratios are optimized,
// rounded down, and the best integer design returned. Ties break toward
// lower cost, then fewer models. MC is always a candidate.
EstimatorDesign optimize_allocation(const Eigen::MatrixXd& C, std::span<const double> w, const BudgetSpec& budget,
                                    std::span<const EstimatorFamily> families, std::span<const index_t> n_in_all);

// Source of pilot covariance/cost information for candidate inner sizes.
class PilotCovarianceSource {
 public:
  virtual ~PilotCovarianceSource() = default;
  // Batch warm-up for the value sets the caller is about to query.
  virtual void prepare(std::span<const std::vector<index_t>> axis_values) {}
  virtual std::pair<Eigen::MatrixXd, std::vector<double>> at(std::span<const index_t> n_in_lowfi) = 0;
};

enum class SearchStrategy { grid, coarse_to_fine };

struct InnerSearchSpec {
  SearchStrategy strategy = SearchStrategy::grid;
  std::vector<std::vector<index_t>> grid_axes;  // grid strategy lattice
  int cf_points = 6;                            // coarse-to-fine lattice points per axis
  int cf_rounds = 5;
};

struct InnerSizeResult {
  std::vector<index_t> n_in;  // all models 0..M
  EstimatorDesign design;
  // Grid strategy, M == 2: projected variance per lattice point (rows follow
  // axis 0). Empty otherwise.
  Matrix surface;
};

InnerSizeResult optimize_inner_sizes(PilotCovarianceSource& pilot, const BudgetSpec& budget,
                                     std::span<const EstimatorFamily> families, const InnerSearchSpec& search,
                                     int workers = 0);

// Pilot evaluation cache backing PilotCovarianceSource for real ensembles.
// One pilot batch is drawn per design; inner draws are generated once at the
// largest requested size and prefix-truncated per candidate, so utility
// values at size v match a direct evaluation at size v draw for draw.
class PilotEvaluations : public PilotCovarianceSource {
 public:
  PilotEvaluations(std::vector<UtilityModelSpec> specs, std::vector<DesignPoint> designs, index_t n_pilot,
                   const RngStream& rng, const NoiseSpec& noise, const PriorSpec& prior, index_t n_in_0,
                   int workers = 0);

  void prepare(std::span<const std::vector<index_t>> axis_values) override;
  std::pair<Eigen::MatrixXd, std::vector<double>> at(std::span<const index_t> n_in_lowfi) override;

  std::vector<Eigen::MatrixXd> sigma_per_design(std::span<const index_t> n_in_lowfi);
  std::vector<double> measured_wg() const { return measured_wg_; }
  std::vector<std::uint8_t> degenerate(std::span<const index_t> n_in_lowfi);
  std::vector<double> rho0(std::span<const index_t> n_in_lowfi);

  // Builds the plain pilot result at the given inner sizes.
  PilotResult pilot_result(std::span<const index_t> n_in_lowfi);

 private:
  void ensure_values(const std::vector<std::vector<index_t>>& per_model_values);
  const std::vector<double>& row(int model, index_t n_in) const;

  std::vector<UtilityModelSpec> specs_;
  std::vector<DesignPoint> designs_;
  index_t n_pilot_ = 0;
  index_t n_in_0_ = 1;
  RngStream rng_;
  const NoiseSpec* noise_ = nullptr;
  const PriorSpec* prior_ = nullptr;
  int workers_ = 0;
  bool reuse_ = false;
  // values_[m]: evaluated inner sizes -> u row (design-major, n_designs * n_pilot)
  std::vector<std::vector<std::pair<index_t, std::vector<double>>>> values_;
  std::vector<double> measured_wg_;
  std::vector<double> measured_evals_;
};

}  // namespace mfeig
