#pragma once

#include <cstdint>
#include <functional>

namespace offnadir {

// Global worker pool. Work items are indexed; each index is claimed by exactly
// one worker and writes to disjoint outputs, so results do not depend on the
// thread count. Reductions must be done in fixed index order by the caller.
void set_threads(int n);  // n < 1 selects hardware concurrency
int thread_count();

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace offnadir
