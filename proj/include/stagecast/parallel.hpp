#pragma once

#include <cstddef>

namespace stagecast {

/// Kernel execution path. Serial is the reference; Parallel must match it bitwise.
enum class Exec { Serial, Parallel };

/**
 * Worker count for OpenMP kernels: STAGECAST_THREADS when set to a positive
 * integer (capped at the available parallelism), otherwise the available
 * parallelism.
 */
int worker_count();

/// Below this many independent items a Parallel kernel runs inline.
inline constexpr std::size_t kParallelGrain = 256;

}  // namespace stagecast
