#include "atlascrf/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace atlascrf {
namespace {

int initial_threads() {
  if (const char* env = std::getenv("ATLASCRF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int>& threads_setting() {
  static std::atomic<int> value{initial_threads()};
  return value;
}

std::atomic<bool> g_deterministic{true};

}  // namespace

int thread_count() noexcept { return threads_setting().load(std::memory_order_relaxed); }

void set_thread_count(int threads) noexcept {
  threads_setting().store(threads < 1 ? 1 : threads, std::memory_order_relaxed);
}

bool deterministic() noexcept { return g_deterministic.load(std::memory_order_relaxed); }

void set_deterministic(bool flag) noexcept { g_deterministic.store(flag, std::memory_order_relaxed); }

}  // namespace atlascrf
