#pragma once

#include <cstdint>
#include <functional>

namespace tse {

// Number of worker threads used by parallel_for. 0 restores the hardware
// default. Thread count never changes results: work is split by fixed index
// ranges and every output element is written by exactly one range.
void set_num_threads(int n);
int num_threads();

// Runs body(begin, end) over a static partition of [0, n). Small n runs
// inline. Re-entrant calls from inside a worker run serially.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

// Same, with an explicit per-item work estimate (in flops or comparable
// units) so row-level loops with heavy rows still fan out.
void parallel_for(std::int64_t n, std::int64_t work_per_item,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

// Makes parallel_for run inline on the current thread while alive. Outer
// worker pools (scene generation, evaluation) wrap their loop bodies in one
// so the inner op parallelism does not fight the outer one.
class InlineParallelGuard {
 public:
  InlineParallelGuard();
  ~InlineParallelGuard();
  InlineParallelGuard(const InlineParallelGuard&) = delete;
  InlineParallelGuard& operator=(const InlineParallelGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace tse
