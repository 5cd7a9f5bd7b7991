#pragma once

#include <cstddef>
#include <functional>

namespace gsvton {

/// Process-wide worker count; 0 selects the number of logical cores.
void set_worker_count(unsigned n);
unsigned worker_count();

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; callers
/// reduce per-item results in index order so output is independent of the
/// worker count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

} // namespace gsvton
