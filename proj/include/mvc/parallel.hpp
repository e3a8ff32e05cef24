#pragma once

// Include this instead of <omp.h>; builds without OpenMP fall back to serial.
#if defined(_OPENMP)
#include <omp.h>
#else
inline int omp_get_thread_num() { return 0; }
inline int omp_get_max_threads() { return 1; }
inline void omp_set_num_threads(int) {}
#endif

namespace mvc {

// Applies the MVC_THREADS cap (if set) and returns the thread count in use.
int configure_threads_from_env();

}  // namespace mvc
