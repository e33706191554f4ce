#pragma once

#include <cstddef>
#include <functional>

namespace proker {

/// Worker count used by parallel loops. 0 means hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [0, count). Work is split by index, so results
/// are identical for any thread count as long as body(i) only writes to
/// slot i. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace proker
