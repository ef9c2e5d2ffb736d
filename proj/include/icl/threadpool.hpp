#pragma once

// Persistent worker pool with a blocking parallel_for. The calling thread
// participates, so a pool of size 1 runs everything inline. The first
// exception thrown by a task is rethrown to the caller once every index has
// finished running.

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace icl {

class ThreadPool {
 public:
  explicit ThreadPool(std::size_t threads) : size_(threads < 1 ? 1 : threads) {
    for (std::size_t i = 0; i + 1 < size_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard lk(m_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t size() const { return size_; }

  void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (size_ == 1 || count == 1) {
      for (std::size_t i = 0; i < count; ++i) fn(i);
      return;
    }
    {
      std::lock_guard lk(m_);
      fn_ = &fn;
      count_ = count;
      completed_.store(0);
      next_.store(0);
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    run_share();
    std::unique_lock lk(m_);
    // completed_ counts indices that finished running fn, so fn_ stays alive
    // until every grabbed index is done.
    done_cv_.wait(lk, [this] { return completed_.load() == count_; });
    fn_ = nullptr;
    if (error_) {
      auto err = error_;
      error_ = nullptr;
      lk.unlock();
      std::rethrow_exception(err);
    }
  }

  static std::size_t default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
  }

 private:
  void run_share() {
    for (;;) {
      const std::size_t i = next_.fetch_add(1);
      if (i >= count_) break;
      try {
        (*fn_)(i);
      } catch (...) {
        std::lock_guard lk(m_);
        if (!error_) error_ = std::current_exception();
      }
      if (completed_.fetch_add(1) + 1 == count_) {
        std::lock_guard lk(m_);
        done_cv_.notify_all();
      }
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        if (fn_ == nullptr) continue;
      }
      run_share();
    }
  }

  const std::size_t size_;
  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* fn_ = nullptr;
  std::size_t count_ = 0;
  std::atomic<std::size_t> next_{0};
  std::atomic<std::size_t> completed_{0};
  std::exception_ptr error_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace icl
