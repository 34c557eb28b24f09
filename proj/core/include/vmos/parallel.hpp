#pragma once

#include <cstddef>
#include <functional>

namespace vmos {

// Number of workers used by parallel_for. Reads VMOS_THREADS once
// (0 or unset = hardware concurrency) unless overridden.
std::size_t worker_count();
void set_worker_count(std::size_t n);  // 0 restores the environment default

// Runs fn(i) for i in [0, n). Every index is visited exactly once; callers
// must write to disjoint outputs so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vmos
