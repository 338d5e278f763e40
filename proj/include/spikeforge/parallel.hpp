#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace spikeforge {

/// Worker count: SPIKEFORGE_THREADS if set and positive, else the hardware
/// concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("SPIKEFORGE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads with a static
/// partition. Callers write results into per-index slots, so the outcome
/// does not depend on scheduling. The exception from the lowest failing
/// index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int workers = worker_count()) {
  if (n == 0) return;
  const std::size_t w = std::min<std::size_t>(std::max(1, workers), n);
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = k; i < n; i += w) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace spikeforge
