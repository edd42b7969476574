#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner-loop kernels. Every operation has a scalar reference
// implementation and, on x86-64, an AVX2 variant selected at runtime. The
// two backends agree to floating-point tolerance (bit-exactly for the
// counter-based generator, which is pure integer work); equivalence is
// enforced by tests/unit/test_kernels.cpp.

namespace mfeig::kernels {

// Identity of one random stream: a 64-bit Philox key plus the upper half of
// the 128-bit block counter. Both are derived by hashing (master_seed,
// stream_path); the lower counter half indexes blocks within the stream.
struct StreamKey {
  std::uint64_t key = 0;
  std::uint64_t ctr_hi = 0;
};

// One Philox4x32-10 block yields 128 bits = two finished doubles.
inline constexpr std::uint64_t kDoublesPerBlock = 2;

// Raw generator block, exposed for known-answer tests.
void philox4x32_10(std::uint32_t ctr[4], const std::uint32_t key[2], std::uint32_t out[4]);

struct Ops {
  const char* name;

  // out[i] = draw number (start + i) of the stream, uniform on the open
  // interval (0,1). Identical across backends bit for bit.
  void (*fill_uniform01)(StreamKey s, std::uint64_t start, double* out, std::size_t n);

  // Power batches for the benchmark forward models: p[j] = theta[j]^e with
  // e in {3, 2.5, 2}. Computed once per inner-draw buffer, then combined per
  // design with eval_affine2.
  void (*pow3)(const double* theta, std::size_t n, double* p);
  void (*pow25)(const double* theta, std::size_t n, double* p);
  void (*pow2)(const double* theta, std::size_t n, double* p);

  // g[j] = a * p[j] + b * t[j] + shift.
  void (*eval_affine2)(const double* p, const double* t, std::size_t n, double a, double b, double shift, double* g);

  // Unnormalized Gaussian log-likelihood terms for the evidence inner loop.
  // Additive noise: l[j] = -(y - g[j])^2 * half_inv_var.
  // Scaled noise:   l[j] = -((y - g[j]) / g[j])^2 * half_inv_var - log|g[j]|.
  // Both return max_j l[j] (quiet NaN if n == 0 is not allowed; n >= 1).
  double (*loglik_additive)(double y, const double* g, std::size_t n, double half_inv_var, double* l);
  double (*loglik_scaled)(double y, const double* g, std::size_t n, double half_inv_var, double* l);

  // Fused forward-model + log-likelihood passes over a power cache:
  // g[j] = a p[j] + b t[j] + shift evaluated on the fly.
  double (*loglik_additive_poly)(double y, const double* p, const double* t, std::size_t n, double a, double b,
                                 double shift, double half_inv_var, double* l);
  // Returns max; *min_abs_g gets min_j |g[j]| so callers can reject
  // non-invertible scaled transforms.
  double (*loglik_scaled_poly)(double y, const double* p, const double* t, std::size_t n, double a, double b,
                               double shift, double half_inv_var, double* l, double* min_abs_g);

  // One-shot evidence terms: logsumexp_j of the log-likelihood term, chunked
  // so the intermediate buffer stays cache-resident.
  double (*evidence_additive_poly)(double y, const double* p, const double* t, std::size_t n, double a, double b,
                                   double shift, double half_inv_var);
  double (*evidence_scaled_poly)(double y, const double* p, const double* t, std::size_t n, double a, double b,
                                 double shift, double half_inv_var, double* min_abs_g);

  // sum_j exp(l[j] - shift); requires l[j] <= shift for all j.
  double (*exp_sum)(const double* l, std::size_t n, double shift);

  double (*max)(const double* x, std::size_t n);
  double (*min_abs)(const double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
bool avx2_supported();
#if defined(MFEIG_HAVE_AVX2_BUILD)
const Ops& avx2_ops();
#endif
#endif

// Runtime-selected table. Defaults to the widest supported backend; the
// MFEIG_KERNELS environment variable ("scalar" | "avx2" | "auto") or
// set_backend() override it.
const Ops& active_ops();
void set_backend(const char* name);
const char* backend_name();

}  // namespace mfeig::kernels
