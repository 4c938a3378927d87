#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace paconv {

// Process-wide worker count for row-parallel loops. Results are bit-identical
// for any thread count: parallel regions only split independent output rows
// and every per-row reduction keeps a fixed order.
inline int& detail_num_threads() {
  static int n = 1;
  return n;
}

inline void set_num_threads(int n) { detail_num_threads() = std::max(1, n); }

inline int num_threads() { return detail_num_threads(); }

// Runs fn(lo, hi) over a partition of [0, n) into contiguous chunks.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = static_cast<std::size_t>(num_threads());
  workers = std::min(workers, n == 0 ? std::size_t{1} : n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t lo = std::min(n, t * chunk);
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace paconv
