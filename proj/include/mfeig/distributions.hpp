#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mfeig/common.hpp"
#include "mfeig/rng.hpp"

namespace mfeig {

// Parameter prior p(theta). Two kinds, selected by tag:
//  - independent uniform components (the analytic benchmarks), and
//  - a finite pool of precomputed samples addressed by index (tabulated
//    ensembles, where "drawing theta" means drawing a table row).
class PriorSpec {
 public:
  struct Uniform {
    double lower;
    double upper;
  };

  static PriorSpec independent_uniform(std::vector<Uniform> components);
  static PriorSpec sample_pool(index_t pool_size);

  bool is_pool() const { return pool_size_ > 0; }
  index_t pool_size() const { return pool_size_; }
  index_t dim() const { return is_pool() ? 1 : static_cast<index_t>(components_.size()); }
  const std::vector<Uniform>& components() const { return components_; }

  // Draw n i.i.d. rows; row i consumes this stream's draws [i*dim, (i+1)*dim).
  // Pool priors return row indices (stored as doubles).
  Matrix sample(const RngStream& rng, index_t n) const;
  void sample_rows(kernels::StreamKey key, index_t first_row, index_t n, double* out) const;

 private:
  std::vector<Uniform> components_;
  index_t pool_size_ = 0;
};

// Zero-mean Gaussian observation noise with diagonal covariance. Sigma may
// optionally vary with the design (indexed into the run's design list).
class NoiseSpec {
 public:
  NoiseSpec() = default;
  explicit NoiseSpec(std::vector<double> sigma,
                     std::optional<std::vector<std::vector<double>>> per_design = std::nullopt);

  index_t ny() const { return static_cast<index_t>(sigma_.size()); }
  const std::vector<double>& sigma(int design_index = -1) const;

  // Draw n i.i.d. noise rows at the given design; row i consumes normal
  // draws [i*ny, (i+1)*ny). Shared streams across designs give common random
  // numbers: the underlying standard normals match, only the scale differs.
  Matrix sample(const RngStream& rng, int design_index, index_t n) const;

  // Exact Gaussian log density, sum over components of
  // -((eps_c)/sigma_c)^2/2 - log(sigma_c sqrt(2 pi)).
  double log_density(int design_index, std::span<const double> eps) const;

 private:
  std::vector<double> sigma_;
  std::optional<std::vector<std::vector<double>>> per_design_;
};

}  // namespace mfeig
