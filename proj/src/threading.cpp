#include "offnadir/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace offnadir {

namespace {

thread_local bool tl_in_task = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool p;
    return p;
  }

  void resize(int n) {
    std::lock_guard<std::mutex> outer(api_mu_);
    stop_workers();
    workers_wanted_ = n;
  }

  int size() {
    std::lock_guard<std::mutex> outer(api_mu_);
    return workers_wanted_;
  }

  void run(int64_t n, const std::function<void(int64_t)>& fn) {
    if (tl_in_task) {  // nested call: run inline on this worker
      for (int64_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::lock_guard<std::mutex> outer(api_mu_);
    if (workers_wanted_ <= 1 || n <= 1) {
      for (int64_t i = 0; i < n; ++i) fn(i);
      return;
    }
    ensure_started();
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      total_ = n;
      next_.store(0, std::memory_order_relaxed);
      remaining_ = n;
      ++job_id_;
    }
    cv_.notify_all();
    drain();  // calling thread participates
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [&] { return remaining_ == 0; });
    fn_ = nullptr;
    if (err_) {
      auto e = err_;
      err_ = nullptr;
      std::rethrow_exception(e);
    }
  }

  ~Pool() { stop_workers(); }

 private:
  void ensure_started() {
    if (!threads_.empty()) return;
    stopping_ = false;
    int extra = workers_wanted_ - 1;
    for (int i = 0; i < extra; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stopping_ = true;
      ++job_id_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || job_id_ != seen; });
        seen = job_id_;
        if (stopping_) return;
        if (!fn_) continue;
      }
      drain();
    }
  }

  void drain() {
    const std::function<void(int64_t)>* fn;
    int64_t total;
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn = fn_;
      total = total_;
    }
    if (!fn) return;
    int64_t did = 0;
    tl_in_task = true;
    for (;;) {
      int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= total) break;
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu_);
        if (!err_) err_ = std::current_exception();
      }
      ++did;
    }
    tl_in_task = false;
    if (did) {
      std::lock_guard<std::mutex> lk(mu_);
      remaining_ -= did;
      if (remaining_ == 0) done_cv_.notify_all();
    } else {
      std::lock_guard<std::mutex> lk(mu_);
      if (remaining_ == 0) done_cv_.notify_all();
    }
  }

  std::mutex api_mu_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  int workers_wanted_ = 1;
  bool stopping_ = false;
  uint64_t job_id_ = 0;
  const std::function<void(int64_t)>* fn_ = nullptr;
  int64_t total_ = 0;
  std::atomic<int64_t> next_{0};
  int64_t remaining_ = 0;
  std::exception_ptr err_;
};

}  // namespace

void set_threads(int n) {
  if (n < 1) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  Pool::instance().resize(n);
}

int thread_count() { return Pool::instance().size(); }

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  Pool::instance().run(n, fn);
}

}  // namespace offnadir
