#include "hiad/parallel.hpp"

#include <algorithm>

namespace hiad {

WorkerPool::WorkerPool(int workers) : workers_(std::max(1, workers)) {
  for (int i = 1; i < workers_; ++i) threads_.emplace_back([this] { worker_loop(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::run_tasks() {
  for (;;) {
    std::size_t index;
    {
      std::lock_guard lock(mutex_);
      if (next_index_ >= job_size_) return;
      index = next_index_++;
    }
    try {
      (*job_)(index);
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
      next_index_ = job_size_;
    }
  }
}

void WorkerPool::worker_loop() {
  std::size_t seen = 0;
  for (;;) {
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      ++active_;
    }
    run_tasks();
    {
      std::lock_guard lock(mutex_);
      --active_;
    }
    done_.notify_all();
  }
}

void WorkerPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (threads_.empty() || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  {
    std::lock_guard lock(mutex_);
    job_ = &fn;
    job_size_ = n;
    next_index_ = 0;
    error_ = nullptr;
    ++generation_;
  }
  wake_.notify_all();
  run_tasks();
  std::exception_ptr error;
  {
    std::unique_lock lock(mutex_);
    done_.wait(lock, [&] { return active_ == 0 && next_index_ >= job_size_; });
    job_ = nullptr;
    error = error_;
    error_ = nullptr;
  }
  if (error) std::rethrow_exception(error);
}

void WorkerPool::parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t chunks = std::min<std::size_t>(n, static_cast<std::size_t>(workers_) * 4);
  const std::size_t step = (n + chunks - 1) / chunks;
  parallel_for((n + step - 1) / step, [&](std::size_t c) {
    const std::size_t begin = c * step;
    fn(begin, std::min(n, begin + step));
  });
}

WorkerPool& serial_pool() {
  static WorkerPool pool(1);
  return pool;
}

}  // namespace hiad
