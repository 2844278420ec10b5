#pragma once

#include <cstddef>
#include <functional>

namespace sfal {

// Worker count resolution: explicit argument > SFAL_THREADS env var > hardware.
std::size_t resolve_thread_count(std::size_t requested = 0);

// Runs fn(i) for i in [0, n) across workers. Work items must write only to
// their own slots; results are then identical for any worker count. If any
// item throws, the exception from the smallest index is rethrown after all
// workers finish, so failures are deterministic too.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t n_threads = 0);

}  // namespace sfal
