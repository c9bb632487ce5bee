#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace advlab {

// Calls fn(begin, end) for consecutive chunks of [0, n). Chunk boundaries
// depend only on `chunk`, never on `workers`, so results that are a pure
// function of each chunk are independent of the worker count. The first
// exception thrown by any chunk is rethrown after all workers stop.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t workers, Fn&& fn) {
  if (chunk == 0) chunk = n == 0 ? 1 : n;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(chunks, 1));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < chunks;) {
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(chunks);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace advlab
