#pragma once

#include <cstddef>
#include <functional>

namespace condgauss {

/// Worker count from CONDGAUSS_THREADS (default 1). Never affects results:
/// callers give each index its own output slot and reduce in index order.
std::size_t worker_count();
/// Overrides the environment for the current process (0 restores it).
void set_worker_count(std::size_t n);

/// Calls fn(i) for i in [0, n), split into contiguous chunks across workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace condgauss
