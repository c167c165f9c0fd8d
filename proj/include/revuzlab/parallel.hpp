/// @file parallel.hpp
/// @brief Deterministic task-parallel loops. Work is cut into fixed-size
///        chunks whose partial results are stored by chunk index and reduced
///        sequentially, so totals do not depend on the worker count.
#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace revuzlab {

/// Worker count resolution: explicit request > REVUZ_LAB_WORKERS > hardware.
inline int resolve_workers(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("REVUZ_LAB_WORKERS")) {
    const int k = std::atoi(env);
    if (k > 0) return k;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

/// Runs fn(i) for i in [0, n) on `workers` threads. fn must only write to
/// per-index (or per-chunk) storage; the caller reduces afterwards.
inline void parallel_for(std::int64_t n, int workers,
                         const std::function<void(std::int64_t)>& fn) {
  workers = resolve_workers(workers);
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  auto body = [&]() {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int spawn = int(std::min<std::int64_t>(workers, n));
  pool.reserve(spawn);
  for (int w = 1; w < spawn; ++w) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
}

/// Chunked reduction helper: splits [0, n) into chunks of `chunk` items,
/// runs `fill(chunk_index, begin, end, slot)` in parallel with one slot per
/// chunk, then reduces slots in index order (deterministic floating point).
template <class Slot>
std::vector<Slot> chunked_map(std::int64_t n, std::int64_t chunk, int workers,
                              const std::function<void(std::int64_t, std::int64_t,
                                                       std::int64_t, Slot&)>& fill) {
  if (chunk <= 0) chunk = 1024;
  const std::int64_t n_chunks = n > 0 ? (n + chunk - 1) / chunk : 0;
  std::vector<Slot> slots(n_chunks);
  parallel_for(n_chunks, workers, [&](std::int64_t c) {
    const std::int64_t b = c * chunk;
    const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
    fill(c, b, e, slots[c]);
  });
  return slots;
}

}  // namespace revuzlab
