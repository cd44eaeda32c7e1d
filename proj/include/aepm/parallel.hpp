#pragma once

#include <cstdint>
#include <functional>

namespace aepm {

/// Number of worker threads: min(hardware concurrency, AEPM_THREADS).
/// AEPM_THREADS <= 0 or unset means "no cap".
int max_threads();

/// Run fn(i) for i in [0, count). Work is handed out in fixed-size
/// contiguous ranges; callers that need deterministic reductions must
/// write results into per-index slots and combine them in index order.
void parallel_for(int64_t count, const std::function<void(int64_t)>& fn);

} // namespace aepm
