#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>

#include <omp.h>

namespace mvfr {

// Worker-count bound shared by all parallel regions (the CLI --jobs flag).
// Parallel loops only ever write disjoint outputs and all cross-iteration
// reductions are performed sequentially in index order afterwards, so results
// are bit-identical for any thread count.
inline int& max_jobs_ref() {
  static int jobs = int(std::max(1u, std::thread::hardware_concurrency()));
  return jobs;
}

inline void set_max_jobs(int n) { max_jobs_ref() = std::max(1, n); }
inline int max_jobs() { return max_jobs_ref(); }

template <class Fn>
void parallel_for(int64_t n, Fn&& fn) {
  int jobs = std::min<int64_t>(max_jobs(), n);
  if (jobs <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(jobs)
  for (int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace mvfr
