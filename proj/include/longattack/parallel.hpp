#pragma once

#include <cstddef>
#include <functional>

namespace longattack {

// Worker count: LONGATTACK_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Each index must write only to its own slot;
// results are then independent of scheduling. The first exception thrown by
// any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace longattack
