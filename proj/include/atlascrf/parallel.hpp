#pragma once

#include <cstddef>
#include <vector>

#include <omp.h>

namespace atlascrf {

/// Worker count used by every parallel loop in the library. Initialized
/// from ATLASCRF_THREADS when set, otherwise the hardware concurrency.
int thread_count() noexcept;
void set_thread_count(int threads) noexcept;

/// In deterministic mode reductions are split into a fixed number of
/// chunks that does not depend on the thread count, so results are
/// bit-identical across runs and across --threads settings.
bool deterministic() noexcept;
void set_deterministic(bool flag) noexcept;

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const int threads = thread_count();
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) body(static_cast<std::size_t>(i));
}

/// Sums partial(begin, end) over a chunked split of [0, n); partials are
/// combined in chunk order.
template <class Partial>
double parallel_sum(std::size_t n, Partial&& partial) {
  if (n == 0) return 0.0;
  constexpr std::size_t kFixedChunks = 64;
  const std::size_t threads = static_cast<std::size_t>(thread_count());
  std::size_t chunks = deterministic() ? kFixedChunks : threads;
  if (chunks > n) chunks = n;
  if (chunks <= 1) return partial(std::size_t{0}, n);
  std::vector<double> sums(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    sums[c] = partial(begin, end);
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total;
}

}  // namespace atlascrf
