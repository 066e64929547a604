#pragma once

#include <cstddef>
#include <functional>

namespace detkit {

// Runs fn(i) for i in [0, n) over up to <threads> workers on contiguous index
// chunks. Results must be written to per-index slots so the outcome is
// schedule-independent. Exceptions from workers are rethrown on the caller.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace detkit
