#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mvsurf {

// Process-wide cap on worker threads. 1 disables the pool entirely.
void set_max_threads(int n);
int max_threads();

// Runs fn(begin, end) over disjoint chunks of [0, n). Each index is touched by
// exactly one worker, so writes to per-index outputs are race-free and the
// result is identical for any thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain = 1024);

}  // namespace mvsurf
