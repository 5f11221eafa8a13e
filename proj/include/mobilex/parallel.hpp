#pragma once

#include <cstdint>
#include <functional>

namespace mobilex {

// Number of worker threads used by the compute kernels. Defaults to the
// hardware concurrency, capped by the MOBILEX_THREADS environment variable.
int kernel_threads();

// Overrides the thread count for the current process (0 restores the default).
void set_kernel_threads(int n);

// Runs fn(i) for i in [begin, end). Each index must be an independent pure
// computation; results are identical for any thread count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace mobilex
