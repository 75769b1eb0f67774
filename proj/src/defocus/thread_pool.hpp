#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace defocus {

// Persistent worker pool with an index-claiming parallel_for. Work items write
// only to slots owned by their index, so results are independent of scheduling
// and thread count.
class ThreadPool {
 public:
  explicit ThreadPool(int threads = 0);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs body(i) for i in [0, n). Blocks until all items finish. The calling
  // thread participates. Exceptions from body propagate to the caller.
  void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

 private:
  void worker_loop();
  void run_items();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(std::int64_t)>* body_ = nullptr;
  std::int64_t total_ = 0;
  std::int64_t next_ = 0;
  std::int64_t active_ = 0;
  std::uint64_t generation_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

// <=0 requests hardware concurrency.
int resolve_threads(int requested);

}  // namespace defocus
