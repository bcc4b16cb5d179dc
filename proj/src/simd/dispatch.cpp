#include <atomic>
#include <cstdlib>
#include <string_view>

#include "atlascrf/simd.hpp"

namespace atlascrf::simd {

#ifdef ATLASCRF_HAVE_AVX2
const KernelTable* avx2_kernel_table() noexcept;
#endif

const KernelTable* avx2_kernels() noexcept {
#if defined(ATLASCRF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* initial_table() noexcept {
  const char* env = std::getenv("ATLASCRF_SIMD");
  const std::string_view want = env ? env : "auto";
  if (want == "scalar") return &scalar_kernels();
  if (const KernelTable* avx2 = avx2_kernels()) return avx2;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) noexcept {
  if (name == "scalar") {
    current().store(&scalar_kernels());
    return true;
  }
  if (name == "avx2" || name == "auto") {
    if (const KernelTable* avx2 = avx2_kernels()) {
      current().store(avx2);
      return true;
    }
    if (name == "auto") {
      current().store(&scalar_kernels());
      return true;
    }
  }
  return false;
}

}  // namespace atlascrf::simd
