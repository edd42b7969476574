#pragma once

#include <functional>

#include "mfeig/common.hpp"

namespace mfeig {

// Worker-count policy: explicit request > MFEIG_WORKERS > hardware threads.
int resolve_workers(int requested = 0);

// Runs fn(block_index, thread_index) for every block on a small thread pool.
// Blocks are claimed dynamically; callers must keep results indexed by block
// so the outcome is independent of scheduling. Exceptions propagate.
void parallel_for_blocks(index_t n_blocks, int workers, const std::function<void(index_t, int)>& fn);

}  // namespace mfeig
