#include "mfeig/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfeig/kernels/kernels.hpp"
#include "mfeig/parallel.hpp"

namespace mfeig {

namespace {

constexpr index_t kSampleBlock = 256;

struct GroupRange {
  index_t group;
  index_t begin, end;  // global sample indices
};

}  // namespace

SweepResult run_sweep(const std::vector<DesignPoint>& designs, const EstimatorDesign& est,
                      const std::vector<UtilityModelSpec>& specs, index_t n_trials, const RngStream& rng,
                      const NoiseSpec& noise, const PriorSpec& prior, int workers) {
  if (designs.empty()) throw ConfigError("run_sweep: empty design grid");
  if (n_trials < 1) throw ConfigError("run_sweep: need at least one trial");
  if (specs.empty()) throw ConfigError("run_sweep: no utility models");
  const AllocationMatrix& A = est.allocation;
  A.validate();
  const int K = A.num_models();
  if (static_cast<int>(est.active_models.size()) != K)
    throw ConfigError("run_sweep: allocation width disagrees with active model list");
  for (int j = 0; j < K; ++j) {
    const int mi = est.active_models[static_cast<std::size_t>(j)];
    if (mi < 1 || mi >= static_cast<int>(specs.size()))
      throw ConfigError("run_sweep: active model index outside the ensemble");
  }
  const bool reuse = specs.front().reuse_inner;
  for (const auto& s : specs)
    if (s.reuse_inner != reuse) throw ConfigError("run_sweep: utility models disagree on inner-loop reuse");

  const index_t D = static_cast<index_t>(designs.size());
  const index_t n_groups = static_cast<index_t>(A.groups.size());
  const index_t dim = prior.dim();
  const index_t ny = noise.ny();

  // Ensemble-to-allocation slot mapping: slot 0 is the high-fidelity model,
  // slot j >= 1 is active_models[j-1].
  std::vector<const UtilityModelSpec*> slot_spec(static_cast<std::size_t>(K + 1));
  slot_spec[0] = &specs[0];
  for (int j = 1; j <= K; ++j) slot_spec[static_cast<std::size_t>(j)] = &specs[static_cast<std::size_t>(est.active_models[static_cast<std::size_t>(j - 1)])];

  // Participating slots per group.
  std::vector<std::vector<int>> group_slots(static_cast<std::size_t>(n_groups));
  for (index_t g = 0; g < n_groups; ++g)
    for (int slot = 0; slot <= K; ++slot)
      if (A.group_used_by(slot, g)) group_slots[static_cast<std::size_t>(g)].push_back(slot);

  // Per-(design, slot) evaluation contexts, shared across trials.
  std::vector<std::vector<detail::ModelDesignCtx>> ctx(static_cast<std::size_t>(D));
  for (index_t d = 0; d < D; ++d) {
    ctx[static_cast<std::size_t>(d)].reserve(static_cast<std::size_t>(K + 1));
    for (int slot = 0; slot <= K; ++slot)
      ctx[static_cast<std::size_t>(d)].push_back(
          detail::ModelDesignCtx::make(*slot_spec[static_cast<std::size_t>(slot)], designs[static_cast<std::size_t>(d)], noise, prior));
  }

  // Sample-block task list honoring group boundaries.
  std::vector<GroupRange> tasks;
  {
    index_t offset = 0;
    for (index_t g = 0; g < n_groups; ++g) {
      const index_t size = A.groups[static_cast<std::size_t>(g)].size;
      for (index_t b = 0; b < size; b += kSampleBlock)
        tasks.push_back({g, offset + b, offset + std::min(size, b + kSampleBlock)});
      offset += size;
    }
  }
  const index_t n_tasks = static_cast<index_t>(tasks.size());

  SweepResult result;
  result.designs = designs;
  result.estimates = Matrix(n_trials, D);

  // partials[task][d * (K+1) + slot]
  std::vector<std::vector<double>> partials(static_cast<std::size_t>(n_tasks));

  for (index_t t = 0; t < n_trials; ++t) {
    const auto trial_root = rng.child(static_cast<std::uint64_t>(t));
    const auto theta_key = trial_root.child(kThetaStreamLabel).raw();
    const auto eps_key = trial_root.child(kEpsStreamLabel).raw();
    const auto inner_root = trial_root.child(kInnerStreamLabel);

    parallel_for_blocks(n_tasks, workers, [&](index_t task, int) {
      UtilityScratch scratch;
      std::vector<double> inner;
      std::vector<double> theta_row(static_cast<std::size_t>(dim));
      std::vector<double> z_row(static_cast<std::size_t>(ny));
      std::vector<double> eps_row(static_cast<std::size_t>(ny));
      const GroupRange& range = tasks[static_cast<std::size_t>(task)];
      auto& acc = partials[static_cast<std::size_t>(task)];
      acc.assign(static_cast<std::size_t>(D * (K + 1)), 0.0);
      const auto& slots = group_slots[static_cast<std::size_t>(range.group)];
      index_t shared_rows = 0;
      if (reuse)
        for (int slot : slots) shared_rows = std::max(shared_rows, slot_spec[static_cast<std::size_t>(slot)]->n_in);

      for (index_t i = range.begin; i < range.end; ++i) {
        prior.sample_rows(theta_key, i, 1, theta_row.data());
        kernels::active_ops().fill_uniform01(eps_key, static_cast<std::uint64_t>(i * ny), z_row.data(),
                                             static_cast<std::size_t>(ny));
        for (index_t c = 0; c < ny; ++c) z_row[static_cast<std::size_t>(c)] = inv_std_normal_cdf(z_row[static_cast<std::size_t>(c)]);

        if (reuse) {
          inner.resize(static_cast<std::size_t>(shared_rows * dim));
          prior.sample_rows(derive_child_key(inner_root.raw(), static_cast<std::uint64_t>(i)), 0, shared_rows,
                            inner.data());
        }
        for (int slot : slots) {
          const UtilityModelSpec& spec = *slot_spec[static_cast<std::size_t>(slot)];
          const double* inner_ptr;
          if (reuse) {
            inner_ptr = inner.data();
          } else {
            scratch.theta_rows.resize(static_cast<std::size_t>(spec.n_in * dim));
            prior.sample_rows(derive_child_key(derive_child_key(inner_root.raw(), static_cast<std::uint64_t>(spec.model.id())),
                                               static_cast<std::uint64_t>(i)),
                              0, spec.n_in, scratch.theta_rows.data());
            inner_ptr = scratch.theta_rows.data();
          }
          // theta^e cache shared across designs for the kernel fast path.
          const bool fast = ctx[0][static_cast<std::size_t>(slot)].fast;
          const double* power_ptr = nullptr;
          if (fast) {
            detail::fill_power_cache(ctx[0][static_cast<std::size_t>(slot)].poly.power_kind, inner_ptr, spec.n_in, scratch);
            power_ptr = scratch.power.data();
          }
          for (index_t d = 0; d < D; ++d) {
            const auto& c = ctx[static_cast<std::size_t>(d)][static_cast<std::size_t>(slot)];
            for (index_t cc = 0; cc < ny; ++cc)
              eps_row[static_cast<std::size_t>(cc)] = z_row[static_cast<std::size_t>(cc)] * c.sigma[static_cast<std::size_t>(cc)];
            const double u = detail::utility_point(c, noise, theta_row, eps_row, inner_ptr, power_ptr, scratch);
            acc[static_cast<std::size_t>(d * (K + 1) + slot)] += u;
          }
        }
      }
    });

    // Deterministic assembly: task partials are reduced in task order.
    for (index_t d = 0; d < D; ++d) {
      Matrix sums(n_groups, K + 1);
      for (index_t g = 0; g < n_groups; ++g)
        for (int slot = 0; slot <= K; ++slot) sums(g, slot) = 0.0;
      for (index_t task = 0; task < n_tasks; ++task) {
        const index_t g = tasks[static_cast<std::size_t>(task)].group;
        for (int slot = 0; slot <= K; ++slot)
          sums(g, slot) += partials[static_cast<std::size_t>(task)][static_cast<std::size_t>(d * (K + 1) + slot)];
      }
      result.estimates(t, d) = evaluate_acv_from_sums(sums, est.alpha, A);
    }
  }

  // Trial statistics.
  result.mean.resize(static_cast<std::size_t>(D));
  result.variance.resize(static_cast<std::size_t>(D));
  result.band_lo.resize(static_cast<std::size_t>(D));
  result.band_hi.resize(static_cast<std::size_t>(D));
  for (index_t d = 0; d < D; ++d) {
    double acc = 0.0;
    for (index_t t = 0; t < n_trials; ++t) acc += result.estimates(t, d);
    const double mean = acc / static_cast<double>(n_trials);
    result.mean[static_cast<std::size_t>(d)] = mean;
    if (n_trials >= 2) {
      double ss = 0.0;
      for (index_t t = 0; t < n_trials; ++t) {
        const double dd = result.estimates(t, d) - mean;
        ss += dd * dd;
      }
      const double var = ss / static_cast<double>(n_trials - 1);
      result.variance[static_cast<std::size_t>(d)] = var;
      const double sd = std::sqrt(var);
      result.band_lo[static_cast<std::size_t>(d)] = mean - 2.0 * sd;
      result.band_hi[static_cast<std::size_t>(d)] = mean + 2.0 * sd;
    } else {
      result.variance[static_cast<std::size_t>(d)] = std::numeric_limits<double>::quiet_NaN();
      result.band_lo[static_cast<std::size_t>(d)] = std::numeric_limits<double>::quiet_NaN();
      result.band_hi[static_cast<std::size_t>(d)] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return result;
}

SweepResult run_baseline_nmc(const std::vector<DesignPoint>& designs, index_t n_out, const UtilityModelSpec& spec0,
                             index_t n_trials, const RngStream& rng, const NoiseSpec& noise, const PriorSpec& prior,
                             int workers) {
  if (n_out < 1) throw ConfigError("run_baseline_nmc: n_out must be >= 1");
  EstimatorDesign mc;
  mc.family = EstimatorFamily::MC;
  AllocationMatrix::Group g;
  g.size = n_out;
  g.in_z0 = true;
  mc.allocation.groups.push_back(g);
  mc.alpha = Eigen::VectorXd();
  mc.n_in = {spec0.n_in};
  return run_sweep(designs, mc, {spec0}, n_trials, rng, noise, prior, workers);
}

ReductionReport reduction_report(const SweepResult& baseline, const SweepResult& mf) {
  if (baseline.designs.size() != mf.designs.size())
    throw ConfigError("reduction_report: sweeps cover different design grids");
  const std::size_t D = mf.designs.size();
  ReductionReport r;
  r.baseline_var = baseline.variance;
  r.mf_var = mf.variance;
  r.ratio.resize(D);
  double acc_b = 0.0, acc_m = 0.0;
  std::size_t counted = 0;
  for (std::size_t d = 0; d < D; ++d) {
    if (mf.variance[d] == 0.0) {
      r.ratio[d] = std::numeric_limits<double>::infinity();
      continue;
    }
    r.ratio[d] = baseline.variance[d] / mf.variance[d];
    acc_b += baseline.variance[d];
    acc_m += mf.variance[d];
    ++counted;
  }
  if (counted > 0) {
    r.avg_baseline_var = acc_b / static_cast<double>(counted);
    r.avg_mf_var = acc_m / static_cast<double>(counted);
    r.avg_ratio = r.avg_baseline_var / r.avg_mf_var;
  } else {
    r.avg_baseline_var = r.avg_mf_var = 0.0;
    r.avg_ratio = std::numeric_limits<double>::infinity();
  }
  r.argmax_index = argmax_design(mf);
  r.argmax = mf.designs[static_cast<std::size_t>(r.argmax_index)];
  return r;
}

index_t argmax_design(const SweepResult& sweep) {
  if (sweep.designs.empty()) throw ConfigError("argmax_design: empty sweep");
  index_t best = 0;
  for (index_t d = 1; d < static_cast<index_t>(sweep.designs.size()); ++d)
    if (sweep.mean[static_cast<std::size_t>(d)] > sweep.mean[static_cast<std::size_t>(best)]) best = d;
  return best;
}

}  // namespace mfeig
