#pragma once

#include <cstdint>
#include <functional>

namespace sbc::parallel {

/// Number of worker threads kernels may use. Defaults to the host's logical core count.
int num_threads();
/// 0 restores the default.
void set_num_threads(int n);
/// Value last passed to set_num_threads (0 when never set).
int requested_threads();

/// Deterministic mode pins kernels to a single thread.
void set_deterministic(bool on);
bool deterministic();

int hardware_threads();

/// Splits [0, n) into contiguous chunks and runs `body(begin, end)` on each, blocking until all finish.
/// Work is only ever partitioned over independent outputs, so results do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body,
                  std::int64_t min_chunk = 1);

}  // namespace sbc::parallel
