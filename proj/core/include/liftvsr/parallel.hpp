#pragma once

#include <cstddef>
#include <functional>

namespace liftvsr {

// Worker count: LIFTVSR_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index
// runs exactly once, so results are deterministic as long as fn(i) writes
// only its own outputs. The first exception thrown is rethrown here.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace liftvsr
