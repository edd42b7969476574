#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mfeig/distributions.hpp"
#include "mfeig/forward_models.hpp"
#include "mfeig/rng.hpp"

namespace mfeig {

// Stream labels shared by every batch-drawing entry point, so the same
// (root, sample index) always addresses the same draws regardless of which
// code path consumes them.
inline constexpr std::uint64_t kThetaStreamLabel = 0;
inline constexpr std::uint64_t kEpsStreamLabel = 1;
inline constexpr std::uint64_t kInnerStreamLabel = 2;

// One utility model u_m: forward model + noise form + inner-loop size.
// Its evaluation cost is (n_in + 1) forward evaluations.
struct UtilityModelSpec {
  ForwardModel model;
  NoiseForm form = NoiseForm::additive;
  index_t n_in = 1;
  bool reuse_inner = false;

  double cost() const { return static_cast<double>(n_in + 1) * model.cost_g(); }
};

// Paired outer-loop samples (eps, theta), jointly i.i.d. from
// p(eps, theta | xi) = p(eps | xi) p(theta).
struct SampleBatch {
  Matrix theta;  // n x n_theta
  Matrix eps;    // n x ny
  std::vector<std::uint64_t> stream_path;

  index_t size() const { return theta.rows(); }

  // Row i consumes theta-stream draws [i*n_theta, (i+1)*n_theta) and
  // eps-stream normal draws [i*ny, (i+1)*ny) of root's child streams.
  static SampleBatch draw(const PriorSpec& prior, const NoiseSpec& noise, int design_index, const RngStream& root,
                          index_t n);
};

// Inner-loop prior draws, materialized one matrix per outer sample. Under
// reuse a single matrix per outer sample serves every utility model, each
// consuming its leading n_in rows.
class InnerDraws {
 public:
  static InnerDraws generate(const RngStream& root, index_t n_outer, index_t n_rows, const PriorSpec& prior);

  index_t n_outer() const { return n_outer_; }
  index_t n_rows() const { return n_rows_; }
  index_t dim() const { return dim_; }
  // n_rows x dim block for outer sample i.
  const double* rows(index_t outer_index) const { return data_.data() + static_cast<std::size_t>(outer_index * n_rows_ * dim_); }

 private:
  index_t n_outer_ = 0, n_rows_ = 0, dim_ = 0;
  std::vector<double> data_;
};

// Reusable per-thread buffers for the evidence inner loop.
struct UtilityScratch {
  std::vector<double> theta_rows;  // inner draws
  std::vector<double> power;       // theta^e cache
  std::vector<double> g;           // forward outputs
  std::vector<double> l;           // log-likelihood terms
  std::vector<double> work;        // generic-path temporaries
};

// Per-sample NMC-style utility value
//   u = log p(eps|xi) + log|J^-1|(theta)
//       - logsumexp_j [ log p(eps_j|xi) + log|J^-1|(theta_j) ] + log n_in,
// with eps_j = h^-1(h(eps; theta, xi); theta_j, xi). Evaluated entirely in
// log space. `inner` holds spec.n_in rows of prior draws.
double nmc_utility(const UtilityModelSpec& spec, const DesignPoint& xi, std::span<const double> theta,
                   std::span<const double> eps, std::span<const double> inner, const NoiseSpec& noise);

// Batch evaluation. Without shared draws, the inner draws of outer sample i
// come from stream (inner_rng, i); re-evaluating with the same stream is
// bit-identical. With shared draws, model m consumes the first n_in rows of
// shared->rows(i).
std::vector<double> eval_utility_batch(const UtilityModelSpec& spec, const DesignPoint& xi, const SampleBatch& batch,
                                       const RngStream& inner_rng, const NoiseSpec& noise, const PriorSpec& prior,
                                       const InnerDraws* shared = nullptr);

struct NmcEstimate {
  double estimate = 0.0;
  std::vector<double> u;
};

// Single-fidelity baseline: mean utility over a fresh batch of n_out samples.
NmcEstimate nmc_estimator(const UtilityModelSpec& spec0, const DesignPoint& xi, index_t n_out, const RngStream& rng,
                          const NoiseSpec& noise, const PriorSpec& prior);

// Closed-form EIG for y = theta * xi + eps with theta ~ N(0, sigma_prior^2),
// eps ~ N(0, sigma_noise^2): log(1 + sigma_prior^2 xi^2 / sigma_noise^2) / 2.
double analytic_eig_linear_gaussian(double sigma_prior, double xi, double sigma_noise);

namespace detail {

// Per-(model, design) evaluation context with precomputed constants.
struct ModelDesignCtx {
  const UtilityModelSpec* spec = nullptr;
  DesignPoint xi;
  std::vector<double> sigma;
  double half_inv_var = 0.0;  // ny == 1 only
  bool fast = false;          // kernel fast path: poly model, ny==1, real prior
  ForwardModel::PolyCoef poly{3, 0.0, 0.0, 0.0};
  double log_n_in = 0.0;

  static ModelDesignCtx make(const UtilityModelSpec& spec, const DesignPoint& xi, const NoiseSpec& noise,
                             const PriorSpec& prior);
};

// u for one outer sample; `inner` holds spec.n_in rows. The power cache is
// optional (fast path): when given, it must hold theta^e for the model's
// exponent over the same inner rows.
double utility_point(const ModelDesignCtx& ctx, const NoiseSpec& noise, std::span<const double> theta,
                     std::span<const double> eps, const double* inner, const double* power_cache,
                     UtilityScratch& scratch);

// Fills scratch.power with inner^e for the context's exponent (fast path).
void fill_power_cache(int power_kind, const double* inner, index_t n, UtilityScratch& scratch);

}  // namespace detail

}  // namespace mfeig
