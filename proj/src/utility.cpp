#include "mfeig/utility.hpp"

#include <cmath>

#include "mfeig/kernels/kernels.hpp"

namespace mfeig {

SampleBatch SampleBatch::draw(const PriorSpec& prior, const NoiseSpec& noise, int design_index, const RngStream& root,
                              index_t n) {
  if (n < 0) throw ConfigError("sample batch size must be >= 0");
  SampleBatch b;
  b.stream_path = root.path();
  if (n == 0) {
    b.theta = Matrix(0, prior.dim());
    b.eps = Matrix(0, noise.ny());
    return b;
  }
  b.theta = prior.sample(root.child(kThetaStreamLabel), n);
  b.eps = noise.sample(root.child(kEpsStreamLabel), design_index, n);
  return b;
}

InnerDraws InnerDraws::generate(const RngStream& root, index_t n_outer, index_t n_rows, const PriorSpec& prior) {
  if (n_rows < 1) throw ConfigError("inner draws need n_rows >= 1");
  InnerDraws d;
  d.n_outer_ = n_outer;
  d.n_rows_ = n_rows;
  d.dim_ = prior.dim();
  d.data_.resize(static_cast<std::size_t>(n_outer * n_rows * d.dim_));
  const auto base = root.raw();
  for (index_t i = 0; i < n_outer; ++i) {
    prior.sample_rows(derive_child_key(base, static_cast<std::uint64_t>(i)), 0, n_rows,
                      d.data_.data() + static_cast<std::size_t>(i * n_rows * d.dim_));
  }
  return d;
}

namespace detail {

ModelDesignCtx ModelDesignCtx::make(const UtilityModelSpec& spec, const DesignPoint& xi, const NoiseSpec& noise,
                                    const PriorSpec& prior) {
  if (spec.n_in < 1) throw ConfigError("utility model requires n_in >= 1");
  ModelDesignCtx ctx;
  ctx.spec = &spec;
  ctx.xi = xi;
  ctx.sigma = noise.sigma(xi.index);
  ctx.log_n_in = std::log(static_cast<double>(spec.n_in));
  const auto coef = spec.model.poly_coef(xi);
  if (coef && spec.model.ny() == 1 && !prior.is_pool() && prior.dim() == 1) {
    ctx.fast = true;
    ctx.poly = *coef;
    const double s = ctx.sigma[0];
    ctx.half_inv_var = 0.5 / (s * s);
  }
  return ctx;
}

void fill_power_cache(int power_kind, const double* inner, index_t n, UtilityScratch& scratch) {
  scratch.power.resize(static_cast<std::size_t>(n));
  const auto& ops = kernels::active_ops();
  switch (power_kind) {
    case 3: ops.pow3(inner, static_cast<std::size_t>(n), scratch.power.data()); break;
    case 25: ops.pow25(inner, static_cast<std::size_t>(n), scratch.power.data()); break;
    case 2: ops.pow2(inner, static_cast<std::size_t>(n), scratch.power.data()); break;
    default: throw NumericalError("unknown power kind");
  }
}

namespace {

double utility_point_fast(const ModelDesignCtx& ctx, std::span<const double> theta, std::span<const double> eps,
                          const double* inner, const double* power_cache, UtilityScratch& scratch) {
  const auto& spec = *ctx.spec;
  const auto& ops = kernels::active_ops();
  const index_t n = spec.n_in;
  const auto& c = ctx.poly;

  const double t = theta[0];
  double tp = 0.0;
  switch (c.power_kind) {
    case 3: tp = t * t * t; break;
    case 25: tp = t * t * std::sqrt(t); break;
    case 2: tp = t * t; break;
  }
  const double g_theta = c.a * tp + c.b * t + c.shift;

  if (power_cache == nullptr) {
    fill_power_cache(c.power_kind, inner, n, scratch);
    power_cache = scratch.power.data();
  }

  double numerator, lse;
  if (spec.form == NoiseForm::additive) {
    const double y = g_theta + eps[0];
    numerator = -(eps[0] * eps[0]) * ctx.half_inv_var;
    lse = ops.evidence_additive_poly(y, power_cache, inner, static_cast<std::size_t>(n), c.a, c.b, c.shift,
                                     ctx.half_inv_var);
  } else {
    if (g_theta == 0.0) throw NumericalError("scaled data model is non-invertible at this theta (g = 0)");
    const double y = g_theta * (1.0 + eps[0]);
    numerator = -(eps[0] * eps[0]) * ctx.half_inv_var - std::log(std::fabs(g_theta));
    double min_abs_g;
    lse = ops.evidence_scaled_poly(y, power_cache, inner, static_cast<std::size_t>(n), c.a, c.b, c.shift,
                                   ctx.half_inv_var, &min_abs_g);
    if (min_abs_g == 0.0) throw NumericalError("scaled data model is non-invertible at an inner draw (g = 0)");
  }
  const double u = numerator - lse + ctx.log_n_in;
  if (!std::isfinite(u)) throw NumericalError("utility evaluation produced a non-finite value (degenerate evidence)");
  return u;
}

double utility_point_generic(const ModelDesignCtx& ctx, const NoiseSpec& noise, std::span<const double> theta,
                             std::span<const double> eps, const double* inner, UtilityScratch& scratch) {
  const auto& spec = *ctx.spec;
  const auto& ops = kernels::active_ops();
  const index_t n = spec.n_in;
  const index_t dim = spec.model.n_theta();

  const auto y = simulate_data(spec.model, spec.form, theta, ctx.xi, eps);
  double numerator = noise.log_density(ctx.xi.index, eps);
  if (spec.form == NoiseForm::scaled) {
    const auto g = spec.model.eval(theta, ctx.xi);
    for (double gi : g) {
      if (gi == 0.0) throw NumericalError("scaled data model is non-invertible at this theta (g = 0)");
      numerator -= std::log(std::fabs(gi));
    }
  }

  scratch.l.resize(static_cast<std::size_t>(n));
  for (index_t j = 0; j < n; ++j) {
    const auto inv = inverse_noise(spec.model, spec.form, y, {inner + j * dim, static_cast<std::size_t>(dim)}, ctx.xi);
    scratch.l[static_cast<std::size_t>(j)] = noise.log_density(ctx.xi.index, inv.eps) + inv.log_abs_det_jinv;
  }
  const double m = ops.max(scratch.l.data(), static_cast<std::size_t>(n));
  const double s = ops.exp_sum(scratch.l.data(), static_cast<std::size_t>(n), m);
  const double u = numerator - m - std::log(s) + ctx.log_n_in;
  if (!std::isfinite(u)) throw NumericalError("utility evaluation produced a non-finite value (degenerate evidence)");
  return u;
}

}  // namespace

double utility_point(const ModelDesignCtx& ctx, const NoiseSpec& noise, std::span<const double> theta,
                     std::span<const double> eps, const double* inner, const double* power_cache,
                     UtilityScratch& scratch) {
  if (ctx.fast) return utility_point_fast(ctx, theta, eps, inner, power_cache, scratch);
  return utility_point_generic(ctx, noise, theta, eps, inner, scratch);
}

}  // namespace detail

double nmc_utility(const UtilityModelSpec& spec, const DesignPoint& xi, std::span<const double> theta,
                   std::span<const double> eps, std::span<const double> inner, const NoiseSpec& noise) {
  if (static_cast<index_t>(inner.size()) != spec.n_in * spec.model.n_theta())
    throw ConfigError("nmc_utility: inner draws must hold exactly n_in rows");
  // Reference path: full log densities and Jacobians on both sides of the
  // ratio (the batch evaluator cancels shared constants instead).
  const auto y = simulate_data(spec.model, spec.form, theta, xi, eps);
  double numerator = noise.log_density(xi.index, eps);
  if (spec.form == NoiseForm::scaled) {
    const auto g = spec.model.eval(theta, xi);
    for (double gi : g) numerator -= std::log(std::fabs(gi));
  }
  const index_t dim = spec.model.n_theta();
  std::vector<double> l(static_cast<std::size_t>(spec.n_in));
  for (index_t j = 0; j < spec.n_in; ++j) {
    const auto inv = inverse_noise(spec.model, spec.form, y, inner.subspan(static_cast<std::size_t>(j * dim), static_cast<std::size_t>(dim)), xi);
    l[static_cast<std::size_t>(j)] = noise.log_density(xi.index, inv.eps) + inv.log_abs_det_jinv;
  }
  double m = l[0];
  for (double v : l)
    if (v > m) m = v;
  double s = 0.0;
  for (double v : l) s += std::exp(v - m);
  const double u = numerator - m - std::log(s) + std::log(static_cast<double>(spec.n_in));
  if (!std::isfinite(u)) throw NumericalError("nmc_utility produced a non-finite value (degenerate evidence)");
  return u;
}

std::vector<double> eval_utility_batch(const UtilityModelSpec& spec, const DesignPoint& xi, const SampleBatch& batch,
                                       const RngStream& inner_rng, const NoiseSpec& noise, const PriorSpec& prior,
                                       const InnerDraws* shared) {
  const index_t n = batch.size();
  std::vector<double> u(static_cast<std::size_t>(n));
  if (n == 0) return u;
  if (shared != nullptr && (shared->n_rows() < spec.n_in || shared->n_outer() < n))
    throw ConfigError("shared inner draws are smaller than the utility model needs");

  const auto ctx = detail::ModelDesignCtx::make(spec, xi, noise, prior);
  UtilityScratch scratch;
  const index_t dim = prior.dim();
  const auto inner_base = inner_rng.raw();
  std::vector<double> rows;
  for (index_t i = 0; i < n; ++i) {
    const double* inner_ptr;
    if (shared != nullptr) {
      inner_ptr = shared->rows(i);
    } else {
      rows.resize(static_cast<std::size_t>(spec.n_in * dim));
      prior.sample_rows(derive_child_key(inner_base, static_cast<std::uint64_t>(i)), 0, spec.n_in, rows.data());
      inner_ptr = rows.data();
    }
    u[static_cast<std::size_t>(i)] = detail::utility_point(
        ctx, noise, {batch.theta.row(i), static_cast<std::size_t>(batch.theta.cols())},
        {batch.eps.row(i), static_cast<std::size_t>(batch.eps.cols())}, inner_ptr, nullptr, scratch);
  }
  return u;
}

NmcEstimate nmc_estimator(const UtilityModelSpec& spec0, const DesignPoint& xi, index_t n_out, const RngStream& rng,
                          const NoiseSpec& noise, const PriorSpec& prior) {
  if (n_out < 1) throw ConfigError("nmc_estimator requires n_out >= 1");
  const auto batch = SampleBatch::draw(prior, noise, xi.index, rng, n_out);
  NmcEstimate r;
  r.u = eval_utility_batch(spec0, xi, batch, rng.child(kInnerStreamLabel).child(static_cast<std::uint64_t>(spec0.model.id())),
                           noise, prior);
  // Pairwise reduction keeps the mean independent of evaluation order.
  r.estimate = kernels::active_ops().sum(r.u.data(), r.u.size()) / static_cast<double>(n_out);
  return r;
}

double analytic_eig_linear_gaussian(double sigma_prior, double xi, double sigma_noise) {
  if (!(sigma_prior > 0.0) || !(sigma_noise > 0.0))
    throw ConfigError("analytic_eig_linear_gaussian requires positive sigmas");
  const double r = sigma_prior * xi / sigma_noise;
  return 0.5 * std::log1p(r * r);
}

}  // namespace mfeig
