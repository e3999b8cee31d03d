#include "tse/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace tse {
namespace {

thread_local bool t_inside_worker = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void set_threads(int n) {
    std::lock_guard<std::mutex> lock(api_mutex_);
    if (n <= 0) n = default_threads();
    if (n == threads_) return;
    shutdown();
    threads_ = n;
    spawn();
  }

  int threads() {
    std::lock_guard<std::mutex> lock(api_mutex_);
    ensure_started();
    return threads_;
  }

  void run(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    std::lock_guard<std::mutex> lock(api_mutex_);
    ensure_started();
    const int parts = static_cast<int>(std::min<std::int64_t>(threads_, n));
    if (parts <= 1) {
      body(0, n);
      return;
    }
    const std::int64_t chunk = (n + parts - 1) / parts;
    {
      std::unique_lock<std::mutex> task_lock(mutex_);
      body_ = &body;
      total_ = n;
      chunk_ = chunk;
      parts_ = parts;
      pending_ = threads_ - 1;  // every worker checks in once per epoch
      ++epoch_;
    }
    cv_.notify_all();
    t_inside_worker = true;  // nested parallel_for from the body runs inline
    body(0, std::min<std::int64_t>(chunk, n));  // caller takes slot 0
    t_inside_worker = false;
    std::unique_lock<std::mutex> task_lock(mutex_);
    done_cv_.wait(task_lock, [this] { return pending_ == 0; });
    body_ = nullptr;
  }

 private:
  Pool() = default;

  ~Pool() { shutdown(); }

  static int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::max(1u, hw));
  }

  void ensure_started() {
    if (threads_ == 0) {
      threads_ = default_threads();
      spawn();
    }
  }

  void spawn() {
    stop_ = false;
    for (int slot = 1; slot < threads_; ++slot) {
      workers_.emplace_back([this, slot] { worker_loop(slot); });
    }
  }

  void shutdown() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  void worker_loop(int slot) {
    t_inside_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
      std::int64_t begin = 0, end = 0;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || epoch_ != seen; });
        seen = epoch_;
        if (stop_) return;
        if (slot >= parts_) {
          if (--pending_ == 0) done_cv_.notify_one();
          continue;
        }
        body = body_;
        begin = std::min<std::int64_t>(slot * chunk_, total_);
        end = std::min<std::int64_t>(begin + chunk_, total_);
      }
      (*body)(begin, end);
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::mutex api_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> workers_;
  const std::function<void(std::int64_t, std::int64_t)>* body_ = nullptr;
  std::int64_t total_ = 0, chunk_ = 0;
  int parts_ = 0, pending_ = 0, threads_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

constexpr std::int64_t kSerialCutoff = 1 << 18;
constexpr std::int64_t kWorkCutoff = 1 << 18;

}  // namespace

void set_num_threads(int n) { Pool::instance().set_threads(n); }

int num_threads() { return Pool::instance().threads(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  if (n < kSerialCutoff || t_inside_worker) {
    body(0, n);
    return;
  }
  Pool::instance().run(n, body);
}

void parallel_for(std::int64_t n, std::int64_t work_per_item,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  if (n < 2 || n * work_per_item < kWorkCutoff || t_inside_worker) {
    body(0, n);
    return;
  }
  Pool::instance().run(n, body);
}

InlineParallelGuard::InlineParallelGuard() : prev_(t_inside_worker) { t_inside_worker = true; }

InlineParallelGuard::~InlineParallelGuard() { t_inside_worker = prev_; }

}  // namespace tse
