#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "mfeig/common.hpp"

namespace mfeig {

// Group-based sample allocation. Samples are partitioned into groups; each
// group carries membership flags for the high-fidelity set z0 and, per
// low-fidelity model m, for z*_m and z_m. All pairwise set intersections --
// the only quantities the variance algebra needs -- follow from the flags.
struct AllocationMatrix {
  struct Group {
    index_t size = 0;
    bool in_z0 = false;
    std::vector<std::uint8_t> in_zstar;  // one flag per low-fidelity model
    std::vector<std::uint8_t> in_z;
  };

  std::vector<Group> groups;

  int num_models() const { return groups.empty() ? 0 : static_cast<int>(groups.front().in_zstar.size()); }
  index_t total_samples() const;
  index_t z0_size() const;
  index_t zstar_size(int m) const;
  index_t z_size(int m) const;
  // Number of distinct samples model m must evaluate: |z*_m u z_m| for
  // low-fidelity m >= 1, |z0| for m == 0 (1-based model argument here uses
  // 0 for the high-fidelity model).
  index_t evaluations(int model) const;
  bool group_used_by(int model, index_t g) const;

  void validate() const;
};

struct CovarianceEstimate {
  Eigen::MatrixXd cov;   // (M+1) x (M+1) utility-model covariance
  index_t n_samples = 0;
};

struct ComponentCovariances {
  Eigen::MatrixXd cov_dd;  // M x M
  Eigen::VectorXd cov_d0;  // M
  double var_q0 = 0.0;
};

// Covariances of Delta_m = Qhat_m(z*_m) - Qhat_m(z_m) and Qhat_0(z0) from the
// i.i.d. overlap identity Cov[Qhat_m(A), Qhat_n(B)] = C_mn |A n B|/(|A||B|).
ComponentCovariances component_covariances(const Eigen::MatrixXd& C, const AllocationMatrix& A);

// alpha* = -Cov[Delta,Delta]^-1 Cov[Delta, Qhat_0]. A singular system gets a
// Tikhonov ridge of 1e-10 tr/M once; if the conditioning is still beyond
// 1e12 the models are redundant and the caller must drop one.
Eigen::VectorXd optimal_weights(const Eigen::MatrixXd& cov_dd, const Eigen::VectorXd& cov_d0);

// Estimator variance at the optimal weights / at given weights.
double estimator_variance(const Eigen::MatrixXd& C, const AllocationMatrix& A);
double estimator_variance_at(const Eigen::MatrixXd& C, const AllocationMatrix& A, const Eigen::VectorXd& alpha);

// Per-group utility values: values[g][m] holds one u per sample of group g
// for every model m that evaluates the group (m == 0 is the high-fidelity
// model); unused (group, model) slots stay empty.
using GroupedUValues = std::vector<std::vector<std::vector<double>>>;

// Qhat_0(z0) + sum_m alpha_m (Qhat_m(z*_m) - Qhat_m(z_m)), each mean taken
// over the union of its groups (size-weighted combination of group means).
double evaluate_acv(const GroupedUValues& values, const Eigen::VectorXd& alpha, const AllocationMatrix& A);
// Same, from per-(group, model) sums.
double evaluate_acv_from_sums(const Matrix& group_model_sums, const Eigen::VectorXd& alpha, const AllocationMatrix& A);

enum class EstimatorFamily { MC, MFMC, MLMC, ACVMF, ACVIS };
const char* family_name(EstimatorFamily f);

// Published special cases expressed in group form.
//  MFMC: nested prefixes, z*_m = z_{m-1}, sizes nondecreasing (sizes[0] = N0).
//  MLMC: disjoint level groups with telescoping pairs and alpha = -1.
AllocationMatrix mfmc_allocation(std::span<const index_t> sizes);
struct MlmcAllocation {
  AllocationMatrix allocation;
  Eigen::VectorXd alpha;  // all -1
};
MlmcAllocation mlmc_allocation(std::span<const index_t> level_sizes);
// ACV with independent sample sets: z*_m = z0, z_m = z0 plus a disjoint
// per-model block of extras[m] samples.
AllocationMatrix acvis_allocation(index_t n0, std::span<const index_t> extras);
// ACV-MF: z*_m = z0, z_m = leading sizes[m] samples of one nested sequence.
AllocationMatrix acvmf_allocation(index_t n0, std::span<const index_t> sizes);

}  // namespace mfeig
