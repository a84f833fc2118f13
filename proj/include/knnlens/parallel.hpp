#pragma once

#include <cstddef>
#include <functional>

namespace knnlens {

/// Resolves a requested worker count: 0 means one worker per hardware thread.
std::size_t resolve_threads(std::size_t requested) noexcept;

/// Splits [0, count) into contiguous chunks and runs `body(begin, end)` on up to
/// `threads` workers. Chunk boundaries depend only on (count, workers), and
/// callers write results into pre-sized slots, so output never depends on
/// scheduling. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace knnlens
