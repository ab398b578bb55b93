#pragma once

#include <cstdint>
#include <functional>

namespace voxcount {

// Number of worker threads in the shared pool (VOXCOUNT_THREADS overrides,
// defaults to hardware concurrency).
int thread_count();

// Runs fn(begin, end) over a partition of [0, n). All results must be written
// to disjoint output locations and each output element must be accumulated
// entirely inside one chunk, so the result is bit-identical for any thread
// count. Falls back to a direct call when n is small or when invoked from
// inside a pool worker.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace voxcount
