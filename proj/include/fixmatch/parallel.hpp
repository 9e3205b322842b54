#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace fixmatch {

/// Worker count: 0 = hardware concurrency. Results never depend on this —
/// work is cut into fixed chunks and callers reduce per-chunk results in
/// chunk order, so any worker count computes identical bytes.
inline int& parallel_workers() {
  static int workers = 0;
  return workers;
}

inline int effective_workers() {
  int w = parallel_workers();
  if (w <= 0) w = static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(w, 1, 64);
}

inline constexpr std::size_t kParallelChunk = 16;

/// Invokes fn(chunk_index, lo, hi) for fixed chunks of [0, n), distributed
/// over a transient worker set. fn must only write to chunk-owned slots.
template <typename Fn>
inline void parallel_chunks(std::size_t n, Fn&& fn,
                            std::size_t chunk_size = kParallelChunk) {
  if (n == 0) return;
  const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
  const int workers =
      static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(effective_workers()), n_chunks));

  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c)
      fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
    return;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers - 1));
  for (int i = 0; i < workers - 1; ++i) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fixmatch
