#include "mfeig/distributions.hpp"

#include <cmath>

namespace mfeig {

PriorSpec PriorSpec::independent_uniform(std::vector<Uniform> components) {
  if (components.empty()) throw ConfigError("prior needs at least one component");
  for (const auto& c : components) {
    if (!(c.lower < c.upper)) throw ConfigError("prior component requires lower < upper");
    if (!std::isfinite(c.lower) || !std::isfinite(c.upper)) throw ConfigError("prior bounds must be finite");
  }
  PriorSpec spec;
  spec.components_ = std::move(components);
  return spec;
}

PriorSpec PriorSpec::sample_pool(index_t pool_size) {
  if (pool_size < 1) throw ConfigError("sample pool prior needs a positive pool size");
  PriorSpec spec;
  spec.pool_size_ = pool_size;
  return spec;
}

void PriorSpec::sample_rows(kernels::StreamKey key, index_t first_row, index_t n, double* out) const {
  const index_t d = dim();
  kernels::active_ops().fill_uniform01(key, static_cast<std::uint64_t>(first_row * d), out,
                                       static_cast<std::size_t>(n * d));
  if (is_pool()) {
    for (index_t i = 0; i < n; ++i) {
      // Uniform row index; u in (0,1) never reaches pool_size after floor.
      out[i] = std::floor(out[i] * static_cast<double>(pool_size_));
    }
    return;
  }
  for (index_t i = 0; i < n; ++i) {
    for (index_t c = 0; c < d; ++c) {
      const auto& comp = components_[static_cast<std::size_t>(c)];
      double& v = out[i * d + c];
      v = comp.lower + v * (comp.upper - comp.lower);
    }
  }
}

Matrix PriorSpec::sample(const RngStream& rng, index_t n) const {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Matrix m(n, dim());
  sample_rows(rng.raw(), 0, n, m.data());
  return m;
}

NoiseSpec::NoiseSpec(std::vector<double> sigma, std::optional<std::vector<std::vector<double>>> per_design)
    : sigma_(std::move(sigma)), per_design_(std::move(per_design)) {
  if (sigma_.empty()) throw ConfigError("noise sigma must be non-empty");
  for (double s : sigma_)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("noise sigma must be positive and finite");
  if (per_design_) {
    for (const auto& row : *per_design_) {
      if (row.size() != sigma_.size()) throw ConfigError("per-design sigma rows must match noise dimension");
      for (double s : row)
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("per-design sigma must be positive and finite");
    }
  }
}

const std::vector<double>& NoiseSpec::sigma(int design_index) const {
  if (per_design_ && design_index >= 0 && static_cast<std::size_t>(design_index) < per_design_->size())
    return (*per_design_)[static_cast<std::size_t>(design_index)];
  return sigma_;
}

Matrix NoiseSpec::sample(const RngStream& rng, int design_index, index_t n) const {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  const auto& s = sigma(design_index);
  const index_t d = ny();
  Matrix m(n, d);
  rng.normal(0, std::span<double>(m.data(), static_cast<std::size_t>(n * d)));
  for (index_t i = 0; i < n; ++i)
    for (index_t c = 0; c < d; ++c) m(i, c) *= s[static_cast<std::size_t>(c)];
  return m;
}

double NoiseSpec::log_density(int design_index, std::span<const double> eps) const {
  const auto& s = sigma(design_index);
  if (eps.size() != s.size()) throw ConfigError("noise log-density dimension mismatch");
  constexpr double half_log_2pi = 0.91893853320467274178;  // log(sqrt(2*pi))
  double acc = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) {
    if (!std::isfinite(eps[c])) throw NumericalError("noise log-density requires finite epsilon");
    const double z = eps[c] / s[c];
    acc += -0.5 * z * z - std::log(s[c]) - half_log_2pi;
  }
  return acc;
}

}  // namespace mfeig
