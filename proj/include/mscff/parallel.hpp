#pragma once

#include <cstddef>
#include <functional>

namespace mscff {

/// Caps the worker count used by parallel_for. 1 (the default) runs inline.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, count). Work is split into contiguous chunks, one
/// per worker; calls made from inside a worker run serially. Callers must
/// make each index write only its own output so results do not depend on the
/// thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace mscff
