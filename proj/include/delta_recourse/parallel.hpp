#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

#include "text.hpp"

namespace delta_recourse {

/// Worker count: hardware concurrency, capped by DELTA_RECOURSE_THREADS.
inline unsigned thread_budget() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DELTA_RECOURSE_THREADS")) {
    if (auto cap = parse_int(env); cap && *cap >= 1) n = std::min(n, static_cast<unsigned>(*cap));
  }
  return n;
}

/// Calls fn(i) for i in [0, n) over contiguous chunks. fn must only write
/// to per-index state.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_budget(), n / 256 + 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

}  // namespace delta_recourse
