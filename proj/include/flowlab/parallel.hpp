#pragma once

#include <cstddef>
#include <functional>

namespace flowlab {

/// Worker cap: FLOWLAB_THREADS if set and positive, else hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index is
/// handled exactly once; callers write results by index and reduce in order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace flowlab
