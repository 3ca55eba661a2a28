#pragma once

#include <cstddef>
#include <functional>

namespace lmpet {

/// Process-wide cap on worker threads (>= 1). Defaults to the value of
/// LMPET_THREADS, else the hardware concurrency.
void set_worker_count(int workers);
int worker_count();

/// Splits [0, n) into chunks whose boundaries depend only on n and
/// `min_chunk`, never on the worker count, so per-chunk results can be
/// combined in a fixed order.
struct ChunkPlan {
  std::size_t n = 0;
  std::size_t chunk = 1;
  std::size_t count = 0;

  [[nodiscard]] std::size_t begin(std::size_t c) const { return c * chunk; }
  [[nodiscard]] std::size_t end(std::size_t c) const { return c * chunk + chunk < n ? c * chunk + chunk : n; }
};

ChunkPlan plan_chunks(std::size_t n, std::size_t min_chunk = 256, std::size_t max_chunks = 64);

/// Runs body(chunk_index, begin, end) for every chunk of `plan`, spread over
/// worker_count() threads. Exceptions from the body are rethrown (the one
/// from the lowest chunk index wins).
void parallel_for_chunks(const ChunkPlan& plan,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

}  // namespace lmpet
