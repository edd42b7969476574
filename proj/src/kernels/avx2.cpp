#include <immintrin.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "mfeig/kernels/kernels.hpp"

// AVX2 variants of the inner-loop kernels. Eight Philox blocks are advanced
// per iteration in struct-of-arrays form; exp/log use polynomial evaluations
// accurate to a few ulp, so backends agree to ~1e-14 relative rather than
// bit-exactly (the uniform generator itself is bit-exact, being integer-only).

namespace mfeig::kernels {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

// 32x32 -> 64 multiply on all eight u32 lanes; *hi gets the high halves.
inline __m256i mul_hilo(__m256i x, __m256i m, __m256i* hi) {
  const __m256i pe = _mm256_mul_epu32(x, m);
  const __m256i po = _mm256_mul_epu32(_mm256_srli_epi64(x, 32), m);
  *hi = _mm256_blend_epi32(_mm256_srli_epi64(pe, 32), po, 0xAA);
  return _mm256_blend_epi32(pe, _mm256_slli_epi64(po, 32), 0xAA);
}

struct PhiloxState {
  __m256i x0, x1, x2, x3;
};

inline void philox_round8(PhiloxState& s, __m256i k0, __m256i k1) {
  const __m256i m0 = _mm256_set1_epi32(static_cast<int>(kPhiloxM0));
  const __m256i m1 = _mm256_set1_epi32(static_cast<int>(kPhiloxM1));
  __m256i hi0, hi1;
  const __m256i lo0 = mul_hilo(s.x0, m0, &hi0);
  const __m256i lo1 = mul_hilo(s.x2, m1, &hi1);
  s.x0 = _mm256_xor_si256(_mm256_xor_si256(hi1, s.x1), k0);
  s.x1 = lo1;
  s.x2 = _mm256_xor_si256(_mm256_xor_si256(hi0, s.x3), k1);
  s.x3 = lo0;
}

// Runs eight consecutive blocks [block, block+8) and returns the 16 output
// doubles through two u64 vector pairs in block order.
inline void philox8(StreamKey s, std::uint64_t block, __m256i out64[4]) {
  const __m256i inc_a = _mm256_setr_epi64x(0, 1, 2, 3);
  const __m256i inc_b = _mm256_setr_epi64x(4, 5, 6, 7);
  const __m256i base = _mm256_set1_epi64x(static_cast<long long>(block));
  const __m256i blk_a = _mm256_add_epi64(base, inc_a);
  const __m256i blk_b = _mm256_add_epi64(base, inc_b);

  const __m256i idx_lo = _mm256_setr_epi32(0, 2, 4, 6, 0, 2, 4, 6);
  const __m256i idx_hi = _mm256_setr_epi32(1, 3, 5, 7, 1, 3, 5, 7);
  const __m256i a_lo = _mm256_permutevar8x32_epi32(blk_a, idx_lo);
  const __m256i b_lo = _mm256_permutevar8x32_epi32(blk_b, idx_lo);
  const __m256i a_hi = _mm256_permutevar8x32_epi32(blk_a, idx_hi);
  const __m256i b_hi = _mm256_permutevar8x32_epi32(blk_b, idx_hi);

  PhiloxState st;
  st.x0 = _mm256_blend_epi32(a_lo, b_lo, 0xF0);
  st.x1 = _mm256_blend_epi32(a_hi, b_hi, 0xF0);
  st.x2 = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(s.ctr_hi)));
  st.x3 = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(s.ctr_hi >> 32)));

  std::uint32_t k0 = static_cast<std::uint32_t>(s.key);
  std::uint32_t k1 = static_cast<std::uint32_t>(s.key >> 32);
  for (int round = 0; round < 10; ++round) {
    if (round != 0) {
      k0 += kPhiloxW0;
      k1 += kPhiloxW1;
    }
    philox_round8(st, _mm256_set1_epi32(static_cast<int>(k0)), _mm256_set1_epi32(static_cast<int>(k1)));
  }

  // First double of each block: (x1:x0); second: (x3:x2).
  const __m256i d0_lohalf = _mm256_unpacklo_epi32(st.x0, st.x1);  // blocks 0,1,4,5
  const __m256i d0_hihalf = _mm256_unpackhi_epi32(st.x0, st.x1);  // blocks 2,3,6,7
  const __m256i d1_lohalf = _mm256_unpacklo_epi32(st.x2, st.x3);
  const __m256i d1_hihalf = _mm256_unpackhi_epi32(st.x2, st.x3);
  out64[0] = _mm256_permute2x128_si256(d0_lohalf, d0_hihalf, 0x20);  // d0 for blocks 0..3
  out64[1] = _mm256_permute2x128_si256(d0_lohalf, d0_hihalf, 0x31);  // d0 for blocks 4..7
  out64[2] = _mm256_permute2x128_si256(d1_lohalf, d1_hihalf, 0x20);  // d1 for blocks 0..3
  out64[3] = _mm256_permute2x128_si256(d1_lohalf, d1_hihalf, 0x31);  // d1 for blocks 4..7
}

inline __m256d bits_to_unit(__m256i v) {
  const __m256i mant = _mm256_or_si256(_mm256_srli_epi64(v, 12), _mm256_set1_epi64x(0x3FF0000000000000ll));
  return _mm256_sub_pd(_mm256_castsi256_pd(mant), _mm256_set1_pd(1.0 - 0x1p-53));
}

void fill_uniform01(StreamKey s, std::uint64_t start, double* out, std::size_t n) {
  // Scalar edges keep the draw-index mapping identical to the reference.
  const Ops& ref = scalar_ops();
  std::uint64_t draw = start;
  std::size_t produced = 0;
  if (draw % kDoublesPerBlock != 0 && produced < n) {
    ref.fill_uniform01(s, draw, out, 1);
    ++draw;
    ++produced;
  }
  while (n - produced >= 16) {
    __m256i w[4];
    philox8(s, draw / kDoublesPerBlock, w);
    const __m256d u_d0a = bits_to_unit(w[0]);
    const __m256d u_d0b = bits_to_unit(w[1]);
    const __m256d u_d1a = bits_to_unit(w[2]);
    const __m256d u_d1b = bits_to_unit(w[3]);
    // Interleave (d0, d1) per block into draw order.
    double tmp[16];
    _mm256_storeu_pd(tmp + 0, u_d0a);
    _mm256_storeu_pd(tmp + 4, u_d0b);
    _mm256_storeu_pd(tmp + 8, u_d1a);
    _mm256_storeu_pd(tmp + 12, u_d1b);
    double* o = out + produced;
    for (int b = 0; b < 8; ++b) {
      o[2 * b] = tmp[b];
      o[2 * b + 1] = tmp[8 + b];
    }
    draw += 16;
    produced += 16;
  }
  if (produced < n) ref.fill_uniform01(s, draw, out + produced, n - produced);
}

void pow3(const double* theta, std::size_t n, double* p) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d t = _mm256_loadu_pd(theta + j);
    _mm256_storeu_pd(p + j, _mm256_mul_pd(_mm256_mul_pd(t, t), t));
  }
  for (; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t * t;
  }
}

void pow25(const double* theta, std::size_t n, double* p) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d t = _mm256_loadu_pd(theta + j);
    _mm256_storeu_pd(p + j, _mm256_mul_pd(_mm256_mul_pd(t, t), _mm256_sqrt_pd(t)));
  }
  for (; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t * std::sqrt(t);
  }
}

void pow2(const double* theta, std::size_t n, double* p) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d t = _mm256_loadu_pd(theta + j);
    _mm256_storeu_pd(p + j, _mm256_mul_pd(t, t));
  }
  for (; j < n; ++j) {
    const double t = theta[j];
    p[j] = t * t;
  }
}

void eval_affine2(const double* p, const double* t, std::size_t n, double a, double b, double shift, double* g) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  const __m256d vs = _mm256_set1_pd(shift);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d bt = _mm256_fmadd_pd(vb, _mm256_loadu_pd(t + j), vs);
    _mm256_storeu_pd(g + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(p + j), bt));
  }
  for (; j < n; ++j) g[j] = a * p[j] + b * t[j] + shift;
}

inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m2 = _mm_max_pd(lo, hi);
  const __m128d m1 = _mm_max_sd(m2, _mm_unpackhi_pd(m2, m2));
  return _mm_cvtsd_f64(m1);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s2 = _mm_add_pd(lo, hi);
  const __m128d s1 = _mm_add_sd(s2, _mm_unpackhi_pd(s2, s2));
  return _mm_cvtsd_f64(s1);
}

double loglik_additive(double y, const double* g, std::size_t n, double half_inv_var, double* l) {
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vh = _mm256_set1_pd(-half_inv_var);
  __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d d = _mm256_sub_pd(vy, _mm256_loadu_pd(g + j));
    const __m256d v = _mm256_mul_pd(_mm256_mul_pd(d, d), vh);
    _mm256_storeu_pd(l + j, v);
    vmax = _mm256_max_pd(vmax, v);
  }
  double m = hmax(vmax);
  for (; j < n; ++j) {
    const double d = y - g[j];
    const double v = -(d * d) * half_inv_var;
    l[j] = v;
    if (v > m) m = v;
  }
  return m;
}

// log(x) for finite positive normal x: exponent split plus atanh series.
inline __m256d log_positive(__m256d x) {
  const __m256i bits = _mm256_castpd_si256(x);
  const __m256i exp_raw = _mm256_srli_epi64(bits, 52);
  // Mantissa in [1,2).
  const __m256i mant_bits =
      _mm256_or_si256(_mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFll)), _mm256_set1_epi64x(0x3FF0000000000000ll));
  __m256d m = _mm256_castsi256_pd(mant_bits);
  // Exponent as double via the 2^52 magic-number trick.
  const __m256i magic = _mm256_set1_epi64x(0x4330000000000000ll);
  const __m256d e_dbl = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(exp_raw, magic)),
                                      _mm256_castsi256_pd(magic));
  __m256d e = _mm256_sub_pd(e_dbl, _mm256_set1_pd(1023.0));
  // Fold m > sqrt(2) down one octave so t below stays small.
  const __m256d sqrt2 = _mm256_set1_pd(1.4142135623730951);
  const __m256d fold = _mm256_cmp_pd(m, sqrt2, _CMP_GT_OQ);
  m = _mm256_blendv_pd(m, _mm256_mul_pd(m, _mm256_set1_pd(0.5)), fold);
  e = _mm256_add_pd(e, _mm256_and_pd(fold, _mm256_set1_pd(1.0)));

  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d t = _mm256_div_pd(_mm256_sub_pd(m, one), _mm256_add_pd(m, one));
  const __m256d t2 = _mm256_mul_pd(t, t);
  // 2*atanh(t) = 2t * (1 + t^2/3 + t^4/5 + ... + t^16/17)
  __m256d p = _mm256_set1_pd(1.0 / 17.0);
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 15.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 13.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 11.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 9.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 7.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 5.0));
  p = _mm256_fmadd_pd(p, t2, _mm256_set1_pd(1.0 / 3.0));
  p = _mm256_fmadd_pd(p, t2, one);
  const __m256d log_m = _mm256_mul_pd(_mm256_add_pd(t, t), p);

  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  return _mm256_add_pd(_mm256_fmadd_pd(e, ln2_lo, log_m), _mm256_mul_pd(e, ln2_hi));
}

double loglik_scaled(double y, const double* g, std::size_t n, double half_inv_var, double* l) {
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vh = _mm256_set1_pd(-half_inv_var);
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFll));
  __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d gj = _mm256_loadu_pd(g + j);
    const __m256d d = _mm256_div_pd(_mm256_sub_pd(vy, gj), gj);
    const __m256d quad = _mm256_mul_pd(_mm256_mul_pd(d, d), vh);
    const __m256d v = _mm256_sub_pd(quad, log_positive(_mm256_and_pd(gj, abs_mask)));
    _mm256_storeu_pd(l + j, v);
    vmax = _mm256_max_pd(vmax, v);
  }
  double m = hmax(vmax);
  for (; j < n; ++j) {
    const double d = (y - g[j]) / g[j];
    const double v = -(d * d) * half_inv_var - std::log(std::fabs(g[j]));
    l[j] = v;
    if (v > m) m = v;
  }
  return m;
}

double loglik_additive_poly(double y, const double* p, const double* t, std::size_t n, double a, double b,
                            double shift, double half_inv_var, double* l) {
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vh = _mm256_set1_pd(-half_inv_var);
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  const __m256d vs = _mm256_set1_pd(shift);
  __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d g = _mm256_fmadd_pd(va, _mm256_loadu_pd(p + j), _mm256_fmadd_pd(vb, _mm256_loadu_pd(t + j), vs));
    const __m256d d = _mm256_sub_pd(vy, g);
    const __m256d v = _mm256_mul_pd(_mm256_mul_pd(d, d), vh);
    _mm256_storeu_pd(l + j, v);
    vmax = _mm256_max_pd(vmax, v);
  }
  double m = hmax(vmax);
  for (; j < n; ++j) {
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
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vh = _mm256_set1_pd(-half_inv_var);
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  const __m256d vs = _mm256_set1_pd(shift);
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFll));
  __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  __m256d vgmin = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d g = _mm256_fmadd_pd(va, _mm256_loadu_pd(p + j), _mm256_fmadd_pd(vb, _mm256_loadu_pd(t + j), vs));
    const __m256d ag = _mm256_and_pd(g, abs_mask);
    vgmin = _mm256_min_pd(vgmin, ag);
    const __m256d d = _mm256_div_pd(_mm256_sub_pd(vy, g), g);
    const __m256d v = _mm256_sub_pd(_mm256_mul_pd(_mm256_mul_pd(d, d), vh), log_positive(ag));
    _mm256_storeu_pd(l + j, v);
    vmax = _mm256_max_pd(vmax, v);
  }
  double m = hmax(vmax);
  const __m128d lo = _mm256_castpd256_pd128(vgmin);
  const __m128d hi = _mm256_extractf128_pd(vgmin, 1);
  const __m128d m2 = _mm_min_pd(lo, hi);
  double gmin = _mm_cvtsd_f64(_mm_min_sd(m2, _mm_unpackhi_pd(m2, m2)));
  for (; j < n; ++j) {
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

// exp(x) for x <= 0, flushed to zero below -708 (well under any logsumexp
// contribution that matters at double precision).
inline __m256d exp_nonpos(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d cut = _mm256_set1_pd(-708.0);
  const __m256d xc = _mm256_max_pd(x, cut);

  const __m256d nf = _mm256_round_pd(_mm256_mul_pd(xc, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(nf, ln2_hi, xc);
  r = _mm256_fnmadd_pd(nf, ln2_lo, r);

  // Degree-13 Taylor polynomial of exp on [-ln2/2, ln2/2].
  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

  // Scale by 2^n through the exponent field; n is in [-1022, 1].
  const __m128i n32 = _mm256_cvtpd_epi32(nf);
  const __m256i n64 = _mm256_cvtepi32_epi64(n32);
  const __m256i scale_bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  const __m256d scaled = _mm256_mul_pd(p, _mm256_castsi256_pd(scale_bits));

  const __m256d alive = _mm256_cmp_pd(x, cut, _CMP_GE_OQ);
  return _mm256_and_pd(scaled, alive);
}

double exp_sum(const double* l, std::size_t n, double shift) {
  // Blocks entirely below exp(-60) contribute < 1e-26 each and are skipped;
  // the scalar reference applies the same cutoff.
  const __m256d vs = _mm256_set1_pd(shift);
  const __m256d cut = _mm256_set1_pd(-60.0);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    const __m256d x0 = _mm256_sub_pd(_mm256_loadu_pd(l + j), vs);
    const __m256d x1 = _mm256_sub_pd(_mm256_loadu_pd(l + j + 4), vs);
    const __m256d alive0 = _mm256_cmp_pd(x0, cut, _CMP_GE_OQ);
    const __m256d alive1 = _mm256_cmp_pd(x1, cut, _CMP_GE_OQ);
    if (_mm256_testz_pd(_mm256_or_pd(alive0, alive1), _mm256_or_pd(alive0, alive1))) continue;
    if (!_mm256_testz_pd(alive0, alive0))
      acc0 = _mm256_add_pd(acc0, _mm256_and_pd(exp_nonpos(x0), alive0));
    if (!_mm256_testz_pd(alive1, alive1))
      acc1 = _mm256_add_pd(acc1, _mm256_and_pd(exp_nonpos(x1), alive1));
  }
  for (; j + 4 <= n; j += 4) {
    const __m256d x0 = _mm256_sub_pd(_mm256_loadu_pd(l + j), vs);
    const __m256d alive0 = _mm256_cmp_pd(x0, cut, _CMP_GE_OQ);
    if (!_mm256_testz_pd(alive0, alive0))
      acc0 = _mm256_add_pd(acc0, _mm256_and_pd(exp_nonpos(x0), alive0));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; j < n; ++j) {
    const double x = l[j] - shift;
    if (x >= -60.0) s += std::exp(x);
  }
  return s;
}

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
  alignas(32) double l[kEvidenceChunk];
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
  alignas(32) double l[kEvidenceChunk];
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
  __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) vmax = _mm256_max_pd(vmax, _mm256_loadu_pd(x + j));
  double m = hmax(vmax);
  for (; j < n; ++j)
    if (x[j] > m) m = x[j];
  return m;
}

double min_abs(const double* x, std::size_t n) {
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFll));
  __m256d vmin = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) vmin = _mm256_min_pd(vmin, _mm256_and_pd(_mm256_loadu_pd(x + j), abs_mask));
  const __m128d lo = _mm256_castpd256_pd128(vmin);
  const __m128d hi = _mm256_extractf128_pd(vmin, 1);
  const __m128d m2 = _mm_min_pd(lo, hi);
  double m = _mm_cvtsd_f64(_mm_min_sd(m2, _mm_unpackhi_pd(m2, m2)));
  for (; j < n; ++j) {
    const double a = std::fabs(x[j]);
    if (a < m) m = a;
  }
  return m;
}

double sum_of(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + j));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + j + 4));
  }
  for (; j + 4 <= n; j += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + j));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; j < n; ++j) s += x[j];
  return s;
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops = {
      "avx2",
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
