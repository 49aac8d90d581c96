#include "sbcformer/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sbc::parallel {

namespace {

// Fixed pool of workers fed one batch at a time; the calling thread also takes work.
class Pool {
 public:
  ~Pool() { resize(0); }

  void resize(int workers) {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
    stop_ = false;
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
  }

  std::size_t size() const { return threads_.size(); }

  void run(std::int64_t chunks, const std::function<void(std::int64_t)>& task) {
    std::unique_lock run_lock(run_mu_);
    {
      std::lock_guard lock(mu_);
      task_ = &task;
      next_ = 0;
      total_ = chunks;
      pending_ = chunks;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    drain();
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    task_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    for (;;) {
      std::int64_t i;
      const std::function<void(std::int64_t)>* task;
      {
        std::lock_guard lock(mu_);
        if (!task_ || next_ >= total_) return;
        i = next_++;
        task = task_;
      }
      try {
        (*task)(i);
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      std::lock_guard lock(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || (generation_ != seen && task_ != nullptr); });
        if (stop_) return;
        seen = generation_;
      }
      drain();
    }
  }

  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(std::int64_t)>* task_ = nullptr;
  std::int64_t next_ = 0;
  std::int64_t total_ = 0;
  std::int64_t pending_ = 0;
  std::uint64_t generation_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

std::atomic<int> g_threads{0};
std::atomic<bool> g_deterministic{false};

Pool& pool() {
  static Pool p;
  return p;
}

std::mutex g_config_mu;
thread_local bool t_in_parallel = false;

}  // namespace

int hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

int num_threads() {
  if (g_deterministic.load()) return 1;
  int n = g_threads.load();
  return n > 0 ? n : hardware_threads();
}

int requested_threads() { return g_threads.load(); }

void set_num_threads(int n) { g_threads.store(std::max(0, n)); }

void set_deterministic(bool on) { g_deterministic.store(on); }
bool deterministic() { return g_deterministic.load(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body,
                  std::int64_t min_chunk) {
  if (n <= 0) return;
  const int threads = num_threads();
  min_chunk = std::max<std::int64_t>(1, min_chunk);
  std::int64_t chunks = std::min<std::int64_t>(threads, (n + min_chunk - 1) / min_chunk);
  if (chunks <= 1 || t_in_parallel) {
    body(0, n);
    return;
  }
  {
    std::lock_guard lock(g_config_mu);
    if (pool().size() != static_cast<std::size_t>(threads - 1)) pool().resize(threads - 1);
  }
  const std::int64_t step = (n + chunks - 1) / chunks;
  chunks = (n + step - 1) / step;
  pool().run(chunks, [&](std::int64_t c) {
    struct Nested {
      bool outer = t_in_parallel;
      Nested() { t_in_parallel = true; }
      ~Nested() { t_in_parallel = outer; }
    } nested;
    const std::int64_t b = c * step;
    body(b, std::min(n, b + step));
  });
}

}  // namespace sbc::parallel
