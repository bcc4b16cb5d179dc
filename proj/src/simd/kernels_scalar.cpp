#include "atlascrf/simd.hpp"

namespace atlascrf::simd {
namespace {

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void mul_acc(std::size_t n, const double* a, const double* b, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

double dot(std::size_t n, const double* a, const double* b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void scale(std::size_t n, double a, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= a;
}

constexpr KernelTable kScalar{"scalar", axpy, mul_acc, dot, scale};

}  // namespace

const KernelTable& scalar_kernels() noexcept { return kScalar; }

}  // namespace atlascrf::simd
