#pragma once

#include <cstddef>
#include <functional>

namespace scl {

// Worker count: SCL_THREADS when set (>= 1), otherwise the hardware concurrency.
std::size_t worker_count();

// Runs body(begin, end) over a static partition of [0, count). Each index is
// visited exactly once, so per-index writes are schedule independent.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace scl
