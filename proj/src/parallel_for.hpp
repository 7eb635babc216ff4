#pragma once

#include <exception>

#include <omp.h>

namespace sparnet::detail {

// OpenMP loop over [0, n) that carries the first exception out of the
// parallel region instead of terminating. threads <= 0 uses the default.
template <class Body>
void parallel_for(long n, int threads, Body&& body) {
  std::exception_ptr failure;
  const int team = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(team) if (team > 1)
  for (long i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(sparnet_parallel_for_error)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sparnet::detail
