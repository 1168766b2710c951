#pragma once

#include <cstddef>
#include <functional>

namespace pxs {

// Global worker count for op-internal parallelism. Results are required to be
// bitwise independent of this setting; see parallel_for.
void set_num_threads(int n);
int num_threads();

// Runs body(begin, end) over a partition of [0, n). The partition depends only
// on n (fixed block count), never on the worker count, so any reduction that
// merges per-block results in block order is bitwise thread-count independent.
// Ranges never overlap; disjoint writes need no synchronization.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Number of fixed blocks parallel_for uses for a given n.
std::size_t parallel_block_count(std::size_t n);

// Runs body(i) once for each i in [0, count), distributed over the workers in
// no particular order. For reductions: give each index its own buffer and
// merge in index order afterwards — that stays bitwise thread-count
// independent because the per-index work is.
void parallel_for_blocks(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace pxs
