#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace mapstat {

// parallel_for with deterministic output contract: body(i) must write only to
// slot i of preallocated storage. Work is split into fixed contiguous chunks
// (no stealing), so the set of (i -> result) pairs is identical for every
// thread count; reductions then run sequentially over the slots.

inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  unsigned t = threads;
  if (t > n) t = unsigned(n);
  std::vector<std::thread> workers;
  workers.reserve(t);
  std::size_t chunk = (n + t - 1) / t;
  for (unsigned w = 0; w < t; ++w) {
    std::size_t lo = std::size_t(w) * chunk;
    std::size_t hi = lo + chunk < n ? lo + chunk : n;
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : workers) th.join();
}

}  // namespace mapstat
