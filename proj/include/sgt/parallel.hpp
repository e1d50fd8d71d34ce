#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace sgt {

/// Worker count from SGT_WORKERS; 1 when unset or invalid.
inline int workers_from_env() {
  const char* v = std::getenv("SGT_WORKERS");
  if (!v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (...) {
    return 1;
  }
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// handled exactly once; the first exception is rethrown after joining.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sgt
