#include "voxcount/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace voxcount {

namespace {

thread_local bool inside_pool = false;

class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] {
        inside_pool = true;
        worker_loop();
      });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      done_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::int64_t n, std::int64_t grain,
           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    std::unique_lock<std::mutex> lk(mu_);
    job_fn_ = &fn;
    job_n_ = n;
    job_grain_ = grain;
    next_.store(0, std::memory_order_relaxed);
    pending_ = static_cast<int>(threads_.size());
    ++generation_;
    cv_.notify_all();
    // Caller participates.
    lk.unlock();
    drain(n, grain, fn);
    lk.lock();
    cv_done_.wait(lk, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
      std::int64_t n = 0, grain = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return done_ || generation_ != seen; });
        if (done_) return;
        seen = generation_;
        fn = job_fn_;
        n = job_n_;
        grain = job_grain_;
      }
      if (fn) drain(n, grain, *fn);
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  void drain(std::int64_t n, std::int64_t grain,
             const std::function<void(std::int64_t, std::int64_t)>& fn) {
    for (;;) {
      const std::int64_t begin = next_.fetch_add(grain, std::memory_order_relaxed);
      if (begin >= n) break;
      fn(begin, std::min(begin + grain, n));
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, cv_done_;
  const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_n_ = 0, job_grain_ = 0;
  std::atomic<std::int64_t> next_{0};
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool done_ = false;
};

int detect_threads() {
  if (const char* env = std::getenv("VOXCOUNT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

Pool& pool() {
  static Pool p(thread_count() - 1);
  return p;
}

}  // namespace

int thread_count() {
  static const int n = detect_threads();
  return n;
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = thread_count();
  if (workers <= 1 || inside_pool || n < 4) {
    fn(0, n);
    return;
  }
  const std::int64_t grain = std::max<std::int64_t>(1, n / (4 * workers));
  pool().run(n, grain, fn);
}

}  // namespace voxcount
