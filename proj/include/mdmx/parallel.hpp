#pragma once

#include <cstddef>
#include <functional>

namespace mdmx {

// Process-wide worker count used by parallel_for; 0 means hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Work items must write to disjoint outputs so the
// result does not depend on scheduling. The exception from the lowest failing
// index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mdmx
