#ifndef FASTVOL_THREADING_HPP
#define FASTVOL_THREADING_HPP

#include <cstddef>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace fastvol {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Block-partitioned parallel loop over [0, count). The functor receives
// (begin, end); partitioning depends only on (count, threads), so results
// written per-index are identical for any worker count.
template <class F>
void parallel_blocks(std::size_t count, int threads, F&& body) {
  threads = resolve_threads(threads);
  if (threads <= 1 || count < 2048) {
    body(std::size_t{0}, count);
    return;
  }
  std::size_t nblk = static_cast<std::size_t>(threads);
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::vector<std::exception_ptr> errs(nblk);
  pool.reserve(nblk);
  for (std::size_t b = 0; b < nblk; ++b) {
    std::size_t lo = count * b / nblk;
    std::size_t hi = count * (b + 1) / nblk;
    pool.emplace_back([&, lo, hi, b] {
      try {
        body(lo, hi);
      } catch (...) {
        errs[b] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// Pairwise sum of a contiguous array: O(log n) error growth, deterministic.
inline double pairwise_sum(const double* data, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

}  // namespace fastvol

#endif
