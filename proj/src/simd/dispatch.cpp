#include <cstdlib>
#include <cstring>

#include "handfit/simd/kernels.hpp"

namespace handfit::simd {

#if defined(HANDFIT_WITH_AVX2)
const KernelTable* avx2_kernels_impl();
#endif

const KernelTable* avx2_kernels() {
#if defined(HANDFIT_WITH_AVX2)
  static const bool ok = __builtin_cpu_supports("avx2");
  return ok ? avx2_kernels_impl() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable& table = [&]() -> const KernelTable& {
    const char* env = std::getenv("HANDFIT_SIMD");
    if (env && std::strcmp(env, "scalar") == 0) return scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    return scalar_kernels();
  }();
  return table;
}

}  // namespace handfit::simd
