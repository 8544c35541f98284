#pragma once

#include <cstddef>
#include <exception>
#include <string_view>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cvdl {

// Every data-parallel kernel has a serial reference path. Both paths compute
// per-item results into disjoint slots and reduce them in index order, so
// their outputs are bit-identical regardless of thread count.
enum class ExecPolicy { serial, parallel };

inline std::string_view to_string(ExecPolicy p) { return p == ExecPolicy::serial ? "serial" : "parallel"; }

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename Fn>
void for_each_index(std::size_t n, ExecPolicy policy, Fn&& fn) {
  if (policy == ExecPolicy::serial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // Exceptions may not cross an OpenMP region; keep the first and rethrow.
  std::exception_ptr first;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(cvdl_for_each_index)
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace cvdl
