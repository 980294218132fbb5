#pragma once

#include <cstddef>
#include <functional>

namespace pinet {

/// Worker count from PINET_THREADS (default 1; values < 1 mean 1).
int thread_count();

/// PINET_DETERMINISTIC=0 allows nondeterministic reductions; anything else
/// (or unset) keeps a fixed order.
bool deterministic_mode();

/// Runs fn(i) for i in [0, n) on thread_count() workers with a static block
/// partition. Each index is handled exactly once, so results written to
/// per-index slots do not depend on the worker count. The first exception
/// thrown by a worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pinet
