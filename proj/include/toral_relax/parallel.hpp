#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace toral_relax {

/// Worker count resolution: explicit request, then TORAL_RELAX_THREADS, then hardware.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TORAL_RELAX_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [begin, end) on a small worker pool. Tasks are claimed from an
/// atomic counter; callers that need determinism must write results indexed by i and
/// perform any reduction themselves in index order.
inline void parallel_for_index(std::int64_t begin, std::int64_t end,
                               const std::function<void(std::int64_t)>& fn, int threads = 0) {
  const std::int64_t count = end - begin;
  if (count <= 0) return;
  int workers = resolve_threads(threads);
  if (workers > count) workers = static_cast<int>(count);
  if (workers <= 1) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next(begin);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        std::int64_t i = next.fetch_add(1);
        if (i >= end) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace toral_relax
