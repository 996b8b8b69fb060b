#pragma once

#include <atomic>
#include <cstdlib>
#include <future>
#include <thread>
#include <vector>

#include "slpca/types.hpp"

namespace slpca {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};  // 0 = not yet resolved
  return cap;
}
}  // namespace detail

/// Global worker cap for replicate-level parallelism.  Resolved once from
/// SLPCA_THREADS (falling back to the hardware count) unless set explicitly.
inline int max_threads() {
  int cap = detail::thread_cap().load();
  if (cap > 0) return cap;
  if (const char* env = std::getenv("SLPCA_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) {
      detail::thread_cap().store(v);
      return v;
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  const int v = hw == 0 ? 1 : static_cast<int>(hw);
  detail::thread_cap().store(v);
  return v;
}

inline void set_max_threads(int n) { detail::thread_cap().store(n >= 1 ? n : 1); }

namespace detail {

/// Index-addressed parallel loop.  Work items must write only to their own
/// slot so results are independent of scheduling.
template <typename F>
void parallel_for(Index n, F&& fn) {
  const Index nt = std::min<Index>(max_threads(), n);
  if (nt <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::future<void>> workers;
  workers.reserve(static_cast<std::size_t>(nt));
  for (Index t = 0; t < nt; ++t)
    workers.push_back(std::async(std::launch::async, [&]() {
      for (Index i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    }));
  for (auto& w : workers) w.get();
}

}  // namespace detail
}  // namespace slpca
