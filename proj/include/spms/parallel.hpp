#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace spms {

/// Runs fn(i) for i in [0, job_count) over `workers` threads. Each job must
/// write only to its own slot; job results must not depend on scheduling
/// (callers use per-job RNG substreams), so any worker count produces
/// identical output. workers <= 1 runs inline.
inline void parallel_for(int job_count, int workers,
                         const std::function<void(int)>& fn) {
  if (job_count <= 0) return;
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  if (workers == 1 || job_count == 1) {
    for (int i = 0; i < job_count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    for (int i = next.fetch_add(1); i < job_count; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  int n = std::min(workers, job_count);
  threads.reserve(static_cast<size_t>(n));
  for (int w = 0; w < n; ++w) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace spms
