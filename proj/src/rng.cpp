#include "mfeig/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mfeig {

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace

kernels::StreamKey root_key(std::uint64_t master_seed) {
  return {mix64(master_seed + 0x9E3779B97F4A7C15ull), mix64(master_seed ^ 0xD1B54A32D192ED03ull)};
}

kernels::StreamKey derive_child_key(kernels::StreamKey parent, std::uint64_t label) {
  // Two independent hash chains give the child an effectively 128-bit
  // identity, so distinct paths collide with negligible probability.
  const std::uint64_t a = mix64(parent.key ^ (mix64(label + 0x9E3779B97F4A7C15ull) + 0x165667B19E3779F9ull));
  const std::uint64_t b = mix64(parent.ctr_hi + (mix64(label ^ 0xC2B2AE3D27D4EB4Full) | 1ull));
  return {a, b};
}

RngStream::RngStream(std::uint64_t master_seed)
    : master_seed_(master_seed), path_(), key_(root_key(master_seed)) {}

RngStream RngStream::child(std::uint64_t label) const {
  std::vector<std::uint64_t> p = path_;
  p.push_back(label);
  return RngStream(master_seed_, std::move(p), derive_child_key(key_, label));
}

void RngStream::uniform(std::uint64_t start, std::span<double> out) const {
  kernels::active_ops().fill_uniform01(key_, start, out.data(), out.size());
}

double RngStream::uniform_at(std::uint64_t index) const {
  double u;
  kernels::active_ops().fill_uniform01(key_, index, &u, 1);
  return u;
}

void RngStream::normal(std::uint64_t start, std::span<double> out) const {
  uniform(start, out);
  for (double& v : out) v = inv_std_normal_cdf(v);
}

double inv_std_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inv_std_normal_cdf: p must lie in (0,1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num = q * (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
    const double den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                             3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                           5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                         4.2313330701600911252e+1) * r + 1.0);
    return num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    const double num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                             2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                           3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                         4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
    const double den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                             1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                           6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                         2.05319162663775882187e+0) * r + 1.0);
    value = num / den;
  } else {
    r -= 5.0;
    const double num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                             1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                           2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                         5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
    const double den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                             1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                           1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                         5.99832206555887937690e-1) * r + 1.0);
    value = num / den;
  }
  return (q < 0.0) ? -value : value;
}

}  // namespace mfeig
