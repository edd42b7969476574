#include "mfeig/acv.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "mfeig/kernels/kernels.hpp"

namespace mfeig {

namespace {

// Set selector: 0 -> z0, (m, star) -> z*_m or z_m.
struct SetRef {
  int model;  // 0 for z0, otherwise 1..M
  bool star;
};

bool in_set(const AllocationMatrix::Group& g, SetRef s) {
  if (s.model == 0) return g.in_z0;
  const auto& flags = s.star ? g.in_zstar : g.in_z;
  return flags[static_cast<std::size_t>(s.model - 1)] != 0;
}

index_t set_size(const AllocationMatrix& A, SetRef s) {
  index_t n = 0;
  for (const auto& g : A.groups)
    if (in_set(g, s)) n += g.size;
  return n;
}

index_t set_intersection(const AllocationMatrix& A, SetRef a, SetRef b) {
  index_t n = 0;
  for (const auto& g : A.groups)
    if (in_set(g, a) && in_set(g, b)) n += g.size;
  return n;
}

// Cov[Qhat_m(A), Qhat_n(B)] / C_mn for unit covariance.
double overlap(const AllocationMatrix& A, SetRef a, SetRef b) {
  const double na = static_cast<double>(set_size(A, a));
  const double nb = static_cast<double>(set_size(A, b));
  return static_cast<double>(set_intersection(A, a, b)) / (na * nb);
}

}  // namespace

index_t AllocationMatrix::total_samples() const {
  index_t n = 0;
  for (const auto& g : groups) n += g.size;
  return n;
}

index_t AllocationMatrix::z0_size() const { return set_size(*this, {0, false}); }
index_t AllocationMatrix::zstar_size(int m) const { return set_size(*this, {m, true}); }
index_t AllocationMatrix::z_size(int m) const { return set_size(*this, {m, false}); }

index_t AllocationMatrix::evaluations(int model) const {
  if (model == 0) return z0_size();
  index_t n = 0;
  for (const auto& g : groups)
    if (group_used_by(model, static_cast<index_t>(&g - groups.data()))) n += g.size;
  return n;
}

bool AllocationMatrix::group_used_by(int model, index_t g) const {
  const auto& grp = groups[static_cast<std::size_t>(g)];
  if (model == 0) return grp.in_z0;
  return grp.in_zstar[static_cast<std::size_t>(model - 1)] || grp.in_z[static_cast<std::size_t>(model - 1)];
}

void AllocationMatrix::validate() const {
  const int M = num_models();
  for (const auto& g : groups) {
    if (g.size < 0) throw ConfigError("allocation group sizes must be >= 0");
    if (static_cast<int>(g.in_zstar.size()) != M || static_cast<int>(g.in_z.size()) != M)
      throw ConfigError("allocation group flag widths disagree");
  }
  if (z0_size() <= 0) throw ConfigError("allocation requires a nonempty z0");
  for (int m = 1; m <= M; ++m) {
    if (zstar_size(m) <= 0 || z_size(m) <= 0)
      throw ConfigError("allocation requires nonempty z*_m and z_m for every retained model");
    // Identical sets would make Delta_m identically zero.
    bool same = true;
    for (const auto& g : groups) {
      if (g.size == 0) continue;
      if (in_set(g, {m, true}) != in_set(g, {m, false})) {
        same = false;
        break;
      }
    }
    if (same) throw ConfigError("allocation has z*_m == z_m for model " + std::to_string(m));
  }
}

ComponentCovariances component_covariances(const Eigen::MatrixXd& C, const AllocationMatrix& A) {
  A.validate();
  const int M = A.num_models();
  if (C.rows() != M + 1 || C.cols() != M + 1)
    throw ConfigError("covariance matrix size does not match the allocation's model count");
  ComponentCovariances out;
  out.cov_dd.resize(M, M);
  out.cov_d0.resize(M);
  out.var_q0 = C(0, 0) / static_cast<double>(A.z0_size());
  for (int m = 1; m <= M; ++m) {
    const SetRef ms{m, true}, mz{m, false};
    out.cov_d0(m - 1) = C(0, m) * (overlap(A, ms, {0, false}) - overlap(A, mz, {0, false}));
    for (int n = 1; n <= M; ++n) {
      const SetRef ns{n, true}, nz{n, false};
      out.cov_dd(m - 1, n - 1) =
          C(m, n) * (overlap(A, ms, ns) - overlap(A, ms, nz) - overlap(A, mz, ns) + overlap(A, mz, nz));
    }
  }
  return out;
}

Eigen::VectorXd optimal_weights(const Eigen::MatrixXd& cov_dd, const Eigen::VectorXd& cov_d0) {
  const int M = static_cast<int>(cov_dd.rows());
  if (M == 0) return Eigen::VectorXd();
  if (cov_dd.cols() != M || cov_d0.size() != M) throw ConfigError("optimal_weights: dimension mismatch");

  constexpr double cond_limit = 1e12;
  auto condition_of = [](const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
  };

  Eigen::MatrixXd S = cov_dd;
  if (condition_of(S) > cond_limit) {
    const double ridge = 1e-10 * S.trace() / static_cast<double>(M);
    S.diagonal().array() += ridge;
    std::cerr << "[mfeig] warning: near-singular Cov[Delta,Delta]; applying ridge " << ridge << "\n";
    if (condition_of(S) > cond_limit)
      throw NumericalError("Cov[Delta,Delta] is singular: models are redundant, drop one");
  }
  return S.ldlt().solve(-cov_d0);
}

double estimator_variance(const Eigen::MatrixXd& C, const AllocationMatrix& A) {
  const auto cc = component_covariances(C, A);
  if (A.num_models() == 0) return cc.var_q0;
  const Eigen::VectorXd alpha = optimal_weights(cc.cov_dd, cc.cov_d0);
  return cc.var_q0 + cc.cov_d0.dot(alpha);
}

double estimator_variance_at(const Eigen::MatrixXd& C, const AllocationMatrix& A, const Eigen::VectorXd& alpha) {
  const auto cc = component_covariances(C, A);
  if (alpha.size() != cc.cov_d0.size()) throw ConfigError("estimator_variance_at: alpha dimension mismatch");
  return cc.var_q0 + 2.0 * cc.cov_d0.dot(alpha) + alpha.dot(cc.cov_dd * alpha);
}

namespace {

double set_mean_from_sums(const Matrix& sums, const AllocationMatrix& A, SetRef s) {
  double acc = 0.0;
  index_t n = 0;
  for (std::size_t g = 0; g < A.groups.size(); ++g) {
    if (in_set(A.groups[g], s) && A.groups[g].size > 0) {
      acc += sums(static_cast<index_t>(g), s.model);
      n += A.groups[g].size;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

double evaluate_acv(const GroupedUValues& values, const Eigen::VectorXd& alpha, const AllocationMatrix& A) {
  A.validate();
  const int M = A.num_models();
  if (static_cast<int>(alpha.size()) != M) throw ConfigError("evaluate_acv: alpha size must equal model count");
  if (values.size() != A.groups.size()) throw ConfigError("evaluate_acv: one value set per group required");

  Matrix sums(static_cast<index_t>(A.groups.size()), M + 1);
  for (std::size_t g = 0; g < A.groups.size(); ++g) {
    if (static_cast<int>(values[g].size()) != M + 1)
      throw ConfigError("evaluate_acv: per-group values must cover models 0..M");
    for (int m = 0; m <= M; ++m) {
      const bool needed = A.groups[g].size > 0 && A.group_used_by(m, static_cast<index_t>(g));
      const auto& v = values[g][static_cast<std::size_t>(m)];
      if (needed && static_cast<index_t>(v.size()) != A.groups[g].size)
        throw NumericalError("evaluate_acv: missing evaluations for group " + std::to_string(g) + ", model " +
                             std::to_string(m));
      sums(static_cast<index_t>(g), m) = v.empty() ? 0.0 : kernels::active_ops().sum(v.data(), v.size());
    }
  }
  return evaluate_acv_from_sums(sums, alpha, A);
}

double evaluate_acv_from_sums(const Matrix& sums, const Eigen::VectorXd& alpha, const AllocationMatrix& A) {
  const int M = A.num_models();
  double est = set_mean_from_sums(sums, A, {0, false});
  for (int m = 1; m <= M; ++m)
    est += alpha(m - 1) * (set_mean_from_sums(sums, A, {m, true}) - set_mean_from_sums(sums, A, {m, false}));
  return est;
}

const char* family_name(EstimatorFamily f) {
  switch (f) {
    case EstimatorFamily::MC: return "MC";
    case EstimatorFamily::MFMC: return "MFMC";
    case EstimatorFamily::MLMC: return "MLMC";
    case EstimatorFamily::ACVMF: return "ACVMF";
    case EstimatorFamily::ACVIS: return "ACVIS";
  }
  return "?";
}

AllocationMatrix mfmc_allocation(std::span<const index_t> sizes) {
  const int M = static_cast<int>(sizes.size()) - 1;
  if (M < 0) throw ConfigError("mfmc_allocation needs at least N0");
  for (int m = 0; m < M; ++m)
    if (sizes[m] > sizes[m + 1]) throw ConfigError("mfmc_allocation requires nondecreasing sizes");
  if (sizes[0] < 1) throw ConfigError("mfmc_allocation requires N0 >= 1");
  // Group k holds samples (sizes[k-1], sizes[k]]; z_m = first sizes[m]
  // samples, z*_m = z_{m-1}.
  AllocationMatrix A;
  for (int k = 0; k <= M; ++k) {
    AllocationMatrix::Group g;
    g.size = sizes[static_cast<std::size_t>(k)] - (k == 0 ? 0 : sizes[static_cast<std::size_t>(k - 1)]);
    g.in_z0 = (k == 0);
    g.in_zstar.assign(static_cast<std::size_t>(M), 0);
    g.in_z.assign(static_cast<std::size_t>(M), 0);
    for (int m = 1; m <= M; ++m) {
      g.in_z[static_cast<std::size_t>(m - 1)] = (k <= m) ? 1 : 0;
      g.in_zstar[static_cast<std::size_t>(m - 1)] = (k <= m - 1) ? 1 : 0;
    }
    A.groups.push_back(std::move(g));
  }
  return A;
}

MlmcAllocation mlmc_allocation(std::span<const index_t> level_sizes) {
  const int M = static_cast<int>(level_sizes.size()) - 1;
  if (M < 0) throw ConfigError("mlmc_allocation needs at least one level");
  // Disjoint groups; group k couples model k (in z*_{k+1}... wording: group k
  // carries the telescoping difference Qhat_k - Qhat_{k+1}): group k is z_k
  // for model k (k >= 1) and z*_{k+1} for model k+1; group 0 is z0 and z*_1.
  AllocationMatrix A;
  for (int k = 0; k <= M; ++k) {
    if (level_sizes[static_cast<std::size_t>(k)] < 1) throw ConfigError("mlmc_allocation requires positive level sizes");
    AllocationMatrix::Group g;
    g.size = level_sizes[static_cast<std::size_t>(k)];
    g.in_z0 = (k == 0);
    g.in_zstar.assign(static_cast<std::size_t>(M), 0);
    g.in_z.assign(static_cast<std::size_t>(M), 0);
    if (k >= 1) g.in_z[static_cast<std::size_t>(k - 1)] = 1;
    if (k + 1 <= M) g.in_zstar[static_cast<std::size_t>(k)] = 1;
    A.groups.push_back(std::move(g));
  }
  MlmcAllocation out;
  out.allocation = std::move(A);
  out.alpha = Eigen::VectorXd::Constant(M, -1.0);
  return out;
}

AllocationMatrix acvis_allocation(index_t n0, std::span<const index_t> extras) {
  const int M = static_cast<int>(extras.size());
  if (n0 < 1) throw ConfigError("acvis_allocation requires N0 >= 1");
  AllocationMatrix A;
  {
    AllocationMatrix::Group g0;
    g0.size = n0;
    g0.in_z0 = true;
    g0.in_zstar.assign(static_cast<std::size_t>(M), 1);
    g0.in_z.assign(static_cast<std::size_t>(M), 1);  // z_m = z0 u extras_m
    A.groups.push_back(std::move(g0));
  }
  for (int m = 1; m <= M; ++m) {
    if (extras[static_cast<std::size_t>(m - 1)] < 1)
      throw ConfigError("acvis_allocation requires at least one extra sample per model");
    AllocationMatrix::Group g;
    g.size = extras[static_cast<std::size_t>(m - 1)];
    g.in_z0 = false;
    g.in_zstar.assign(static_cast<std::size_t>(M), 0);
    g.in_z.assign(static_cast<std::size_t>(M), 0);
    g.in_z[static_cast<std::size_t>(m - 1)] = 1;
    A.groups.push_back(std::move(g));
  }
  return A;
}

AllocationMatrix acvmf_allocation(index_t n0, std::span<const index_t> sizes) {
  const int M = static_cast<int>(sizes.size());
  if (n0 < 1) throw ConfigError("acvmf_allocation requires N0 >= 1");
  for (index_t s : sizes)
    if (s <= n0) throw ConfigError("acvmf_allocation requires z_m strictly larger than z0");
  // Nested prefixes over one sample sequence: boundaries at n0 and at each
  // distinct z_m size.
  std::vector<index_t> bounds(sizes.begin(), sizes.end());
  bounds.push_back(n0);
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
  AllocationMatrix A;
  index_t prev = 0;
  for (index_t b : bounds) {
    AllocationMatrix::Group g;
    g.size = b - prev;
    g.in_z0 = (prev < n0);
    g.in_zstar.assign(static_cast<std::size_t>(M), 0);
    g.in_z.assign(static_cast<std::size_t>(M), 0);
    for (int m = 1; m <= M; ++m) {
      g.in_zstar[static_cast<std::size_t>(m - 1)] = (prev < n0) ? 1 : 0;  // z*_m = z0
      g.in_z[static_cast<std::size_t>(m - 1)] = (b <= sizes[static_cast<std::size_t>(m - 1)]) ? 1 : 0;
    }
    A.groups.push_back(std::move(g));
    prev = b;
  }
  return A;
}

}  // namespace mfeig
