#include "mvsurf/parallel.hpp"

#include <atomic>

namespace mvsurf {

namespace {

std::atomic<int> g_max_threads{0};  // 0 = hardware default

// Minimal persistent pool. Workers pull chunk indices from a shared counter;
// chunk boundaries are fixed up front so scheduling never changes results.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i)
      threads_.emplace_back([this, i] { worker_loop(i); });
  }

  void run(std::int64_t nchunks, int extra_workers,
           const std::function<void(std::int64_t)>& chunk_fn) {
    std::unique_lock<std::mutex> lk(mu_);
    chunk_fn_ = &chunk_fn;
    next_chunk_ = 0;
    pending_ = nchunks;
    total_chunks_ = nchunks;
    active_limit_ = extra_workers;
    cv_.notify_all();
    while (true) {  // the calling thread participates
      std::int64_t c = next_chunk_++;
      if (c >= total_chunks_) break;
      lk.unlock();
      chunk_fn(c);
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    chunk_fn_ = nullptr;
  }

  int workers() const { return static_cast<int>(threads_.size()); }

 private:
  void worker_loop(int id) {
    std::unique_lock<std::mutex> lk(mu_);
    while (true) {
      cv_.wait(lk, [this, id] {
        return chunk_fn_ && id < active_limit_ && next_chunk_ < total_chunks_;
      });
      while (chunk_fn_ && id < active_limit_ && next_chunk_ < total_chunks_) {
        std::int64_t c = next_chunk_++;
        const auto* fn = chunk_fn_;
        lk.unlock();
        (*fn)(c);
        lk.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(std::int64_t)>* chunk_fn_ = nullptr;
  std::int64_t next_chunk_ = 0, total_chunks_ = 0, pending_ = 0;
  int active_limit_ = 0;
};

Pool& pool_instance() {
  // Leaked on purpose: detached workers must outlive static destruction order.
  static Pool* pool = new Pool(std::max(1, max_threads() - 1));
  return *pool;
}

thread_local bool in_parallel_region = false;

}  // namespace

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }

int max_threads() {
  int n = g_max_threads.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain) {
  if (n <= 0) return;
  const int workers = max_threads();
  if (workers <= 1 || n <= grain || in_parallel_region) {
    fn(0, n);
    return;
  }
  std::int64_t nchunks = std::min<std::int64_t>(4 * workers, (n + grain - 1) / grain);
  const std::int64_t chunk = (n + nchunks - 1) / nchunks;
  nchunks = (n + chunk - 1) / chunk;
  Pool& pool = pool_instance();
  const int extra = std::min(pool.workers(), workers - 1);
  auto chunk_fn = [&](std::int64_t c) {
    in_parallel_region = true;
    const std::int64_t b = c * chunk;
    fn(b, std::min<std::int64_t>(b + chunk, n));
    in_parallel_region = false;
  };
  pool.run(nchunks, extra, chunk_fn);
}

}  // namespace mvsurf
