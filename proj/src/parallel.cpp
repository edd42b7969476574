#include "mfeig/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mfeig {

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MFEIG_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for_blocks(index_t n_blocks, int workers, const std::function<void(index_t, int)>& fn) {
  workers = resolve_workers(workers);
  if (n_blocks <= 0) return;
  if (workers <= 1 || n_blocks == 1) {
    for (index_t b = 0; b < n_blocks; ++b) fn(b, 0);
    return;
  }
  const int nthreads = static_cast<int>(std::min<index_t>(workers, n_blocks));
  std::atomic<index_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&](int tid) {
    for (;;) {
      const index_t b = next.fetch_add(1, std::memory_order_relaxed);
      if (b >= n_blocks) return;
      try {
        fn(b, tid);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_blocks, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads - 1));
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(body, t);
  body(0);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mfeig
