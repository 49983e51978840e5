#pragma once

#include <exception>
#include <mutex>

namespace omgms::detail {

/// Runs fn(i) for i in [0, n) across OpenMP threads; the first exception thrown
/// by any iteration is rethrown on the calling thread after the loop.
template <class Fn>
void parallel_for(long n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex mutex;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (error) continue;
    }
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace omgms::detail
