#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace vqr {

inline int default_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(begin, end, worker_index) over a deterministic block partition of
// [0, n). Exceptions from workers are rethrown on the calling thread.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t, std::size_t, int)>& fn) {
  if (n == 0) return;
  if (workers < 1) workers = 1;
  std::size_t w = std::min<std::size_t>(workers, n);
  if (w <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  std::size_t chunk = (n + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    std::size_t begin = k * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end, k] {
      try {
        fn(begin, end, static_cast<int>(k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace vqr
