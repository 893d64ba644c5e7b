#pragma once

#include <cstddef>
#include <functional>

namespace fedcopl {

// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
// if any call throws, the exception from the lowest failing index is
// rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

// Worker count from FEDCOPL_THREADS, else 1.
std::size_t default_thread_count();

}  // namespace fedcopl
