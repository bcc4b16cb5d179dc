#pragma once

#include <cstddef>
#include <string_view>

namespace atlascrf::simd {

// Row-level primitives behind every convolution-shaped loop in the library.
// Each variant computes the same math; vector variants may differ from the
// scalar reference in the last bits because of FMA and summation order.
struct KernelTable {
  std::string_view name;
  /// y[i] += a * x[i]
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  /// y[i] += a[i] * b[i]
  void (*mul_acc)(std::size_t n, const double* a, const double* b, double* y);
  /// sum a[i] * b[i]
  double (*dot)(std::size_t n, const double* a, const double* b);
  /// y[i] *= a
  void (*scale)(std::size_t n, double a, double* y);
};

const KernelTable& scalar_kernels() noexcept;

/// nullptr when the library was built without AVX2 or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels() noexcept;

/// Kernel set used by the library. Chosen once from the CPU, overridable
/// with ATLASCRF_SIMD=scalar|avx2 or select().
const KernelTable& active() noexcept;

/// Returns false (and keeps the current table) when the name is unknown or
/// unsupported on this machine.
bool select(std::string_view name) noexcept;

}  // namespace atlascrf::simd
