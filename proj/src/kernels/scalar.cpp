#include <bit>
#include <cmath>
#include <limits>

#include "mfeig/kernels/kernels.hpp"

namespace mfeig::kernels {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t x[4], std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * x[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * x[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  x[0] = hi1 ^ x[1] ^ k0;
  x[1] = lo1;
  x[2] = hi0 ^ x[3] ^ k1;
  x[3] = lo0;
}

// Map 52 random bits to the open interval (0,1): set them as the mantissa of
// a double in [1,2) and shift down. Exactly reproducible on any backend.
inline double bits_to_unit(std::uint64_t v) {
  const std::uint64_t mant = (v >> 12) | 0x3FF0000000000000ull;
  return std::bit_cast<double>(mant) - (1.0 - 0x1p-53);
}

void fill_uniform01(StreamKey s, std::uint64_t start, double* out, std::size_t n) {
  const std::uint32_t key[2] = {static_cast<std::uint32_t>(s.key), static_cast<std::uint32_t>(s.key >> 32)};
  std::uint64_t i = 0;
  std::uint64_t draw = start;
  while (i < n) {
    const std::uint64_t block = draw / kDoublesPerBlock;
    std::uint32_t ctr[4] = {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                            static_cast<std::uint32_t>(s.ctr_hi), static_cast<std::uint32_t>(s.ctr_hi >> 32)};
    std::uint32_t r[4];
    philox4x32_10(ctr, key, r);
    const std::uint64_t w0 = (static_cast<std::uint64_t>(r[1]) << 32) | r[0];
    const std::uint64_t w1 = (static_cast<std::uint64_t>(r[3]) << 32) | r[2];
    if (draw % kDoublesPerBlock == 0 && i + 1 < n) {
      out[i++] = bits_to_unit(w0);
      out[i++] = bits_to_unit(w1);
      draw += 2;
    } else {
      out[i++] = bits_to_unit(draw % kDoublesPerBlock == 0 ? w0 : w1);
      ++draw;
    }
  }
}

void pow3(const double* theta, std::size_t n, double* p) {
  for (std::size_t j = 0; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t * t;
  }
}

void pow25(const double* theta, std::size_t n, double* p) {
  for (std::size_t j = 0; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t * std::sqrt(t);
  }
}

void pow2(const double* theta, std::size_t n, double* p) {
  for (std::size_t j = 0; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t;
  }
}

void eval_affine2(const double* p, const double* t, std::size_t n, double a, double b, double shift, double* g) {
  for (std::size_t j = 0; j < n; ++j) g[j] = a * p[j] + b * t[j] + shift;
}

double loglik_additive(double y, const double* g, std::size_t n, double half_inv_var, double* l) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double d = y - g[j];
    const double v = -(d * d) * half_inv_var;
    l[j] = v;
    if (v > m) m = v;
  }
  return m;
}

double loglik_scaled(double y, const double* g, std::size_t n, double half_inv_var, double* l) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double d = (y - g[j]) / g[j];
    const double v = -(d * d) * half_inv_var - std::log(std::fabs(g[j]));
    l[j] = v;
    if (v > m) m = v;
  }
  return m;
}

double loglik_additive_poly(double y, const double* p, const double* t, std::size_t n, double a, double b,
                            double shift, double half_inv_var, double* l) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double g = a * p[j] + b * t[j] + shift;
    const double d = y - g;
    const double v = -(d * d) * half_inv_var;
    l[j] = v;
    if (v > m) m = v;
  }
  return m;
}

double loglik_scaled_poly(double y, const double* p, const double* t, std::size_t n, double a, double b, double shift,
                          double half_inv_var, double* l, double* min_abs_g) {
  double m = -std::numeric_limits<double>::infinity();
  double gmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double g = a * p[j] + b * t[j] + shift;
    const double ag = std::fabs(g);
    if (ag < gmin) gmin = ag;
    const double d = (y - g) / g;
    const double v = -(d * d) * half_inv_var - std::log(ag);
    l[j] = v;
    if (v > m) m = v;
  }
  *min_abs_g = gmin;
  return m;
}

double exp_sum(const double* l, std::size_t n, double shift) {
  // Terms below exp(-60) ~ 9e-27 cannot move the sum (which is >= 1 when
  // shift is the max) at double precision, even for n ~ 1e6.
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double x = l[j] - shift;
    if (x >= -60.0) s += std::exp(x);
  }
  return s;
}

// Online combination of per-chunk (max, scaled sum) logsumexp pieces.
struct LseAccum {
  double m = -std::numeric_limits<double>::infinity();
  double s = 0.0;
  void merge(double cm, double cs) {
    if (cs == 0.0) return;
    if (s == 0.0) {
      m = cm;
      s = cs;
    } else if (cm > m) {
      s = s * std::exp(m - cm) + cs;
      m = cm;
    } else {
      s += cs * std::exp(cm - m);
    }
  }
  double value() const { return m + std::log(s); }
};

constexpr std::size_t kEvidenceChunk = 512;

double evidence_additive_poly(double y, const double* p, const double* t, std::size_t n, double a, double b,
                              double shift, double half_inv_var) {
  double l[kEvidenceChunk];
  LseAccum acc;
  for (std::size_t base = 0; base < n; base += kEvidenceChunk) {
    const std::size_t len = std::min(kEvidenceChunk, n - base);
    const double cm = loglik_additive_poly(y, p + base, t + base, len, a, b, shift, half_inv_var, l);
    acc.merge(cm, exp_sum(l, len, cm));
  }
  return acc.value();
}

double evidence_scaled_poly(double y, const double* p, const double* t, std::size_t n, double a, double b,
                            double shift, double half_inv_var, double* min_abs_g) {
  double l[kEvidenceChunk];
  LseAccum acc;
  double gmin = std::numeric_limits<double>::infinity();
  for (std::size_t base = 0; base < n; base += kEvidenceChunk) {
    const std::size_t len = std::min(kEvidenceChunk, n - base);
    double chunk_gmin;
    const double cm = loglik_scaled_poly(y, p + base, t + base, len, a, b, shift, half_inv_var, l, &chunk_gmin);
    if (chunk_gmin < gmin) gmin = chunk_gmin;
    acc.merge(cm, exp_sum(l, len, cm));
  }
  *min_abs_g = gmin;
  return acc.value();
}

double max_of(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (x[j] > m) m = x[j];
  return m;
}

double min_abs(const double* x, std::size_t n) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double a = std::fabs(x[j]);
    if (a < m) m = a;
  }
  return m;
}

double sum_of(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += x[j];
  return s;
}

}  // namespace

void philox4x32_10(std::uint32_t ctr[4], const std::uint32_t key[2], std::uint32_t out[4]) {
  std::uint32_t x[4] = {ctr[0], ctr[1], ctr[2], ctr[3]};
  std::uint32_t k0 = key[0];
  std::uint32_t k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    if (round != 0) {
      k0 += kPhiloxW0;
      k1 += kPhiloxW1;
    }
    philox_round(x, k0, k1);
  }
  out[0] = x[0];
  out[1] = x[1];
  out[2] = x[2];
  out[3] = x[3];
}

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",
      fill_uniform01,
      pow3,
      pow25,
      pow2,
      eval_affine2,
      loglik_additive,
      loglik_scaled,
      loglik_additive_poly,
      loglik_scaled_poly,
      evidence_additive_poly,
      evidence_scaled_poly,
      exp_sum,
      max_of,
      min_abs,
      sum_of,
  };
  return ops;
}

}  // namespace mfeig::kernels
