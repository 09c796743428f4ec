// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace gle {

/// Worker count taken from GLE_THREADS (default 1, clamped to [1, 64]).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over contiguous chunks. Callers only write to
/// per-index outputs, so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gle
