#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hiad {

/// Fixed-size pool of workers running index-parallel loops. Every index is
/// processed exactly once; callers write results into per-index slots, so the
/// outcome never depends on the worker count or schedule.
class WorkerPool {
 public:
  explicit WorkerPool(int workers = 1);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int workers() const noexcept { return workers_; }

  /// Runs fn(i) for i in [0, n). The first exception thrown by any task is
  /// rethrown on the calling thread after all workers finish.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

  /// Runs fn(begin, end) over contiguous chunks covering [0, n).
  void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

 private:
  void worker_loop();
  void run_tasks();

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_size_ = 0;
  std::size_t next_index_ = 0;
  std::size_t active_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

/// Single-worker pool shared by call sites that do not care about parallelism.
WorkerPool& serial_pool();

}  // namespace hiad
