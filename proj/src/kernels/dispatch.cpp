#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "mfeig/kernels/kernels.hpp"

namespace mfeig::kernels {

#if defined(__x86_64__) || defined(_M_X64)
bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}
#endif

namespace {

const Ops* pick_default() {
#if defined(MFEIG_HAVE_AVX2_BUILD)
  if (avx2_supported()) return &avx2_ops();
#endif
  return &scalar_ops();
}

const Ops* resolve(const char* name) {
  if (name == nullptr || std::strcmp(name, "auto") == 0) return pick_default();
  if (std::strcmp(name, "scalar") == 0) return &scalar_ops();
#if defined(MFEIG_HAVE_AVX2_BUILD)
  if (std::strcmp(name, "avx2") == 0) {
    if (!avx2_supported()) throw std::runtime_error("AVX2 kernels requested but CPU lacks AVX2/FMA");
    return &avx2_ops();
  }
#endif
  throw std::runtime_error(std::string("unknown kernel backend: ") + name);
}

std::atomic<const Ops*>& slot() {
  static std::atomic<const Ops*> active{resolve(std::getenv("MFEIG_KERNELS"))};
  return active;
}

}  // namespace

const Ops& active_ops() { return *slot().load(std::memory_order_relaxed); }

void set_backend(const char* name) { slot().store(resolve(name), std::memory_order_relaxed); }

const char* backend_name() { return active_ops().name; }

}  // namespace mfeig::kernels
