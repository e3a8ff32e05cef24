#include "mvc/parallel.hpp"

#include <cstdlib>
#include <string>

namespace mvc {

int configure_threads_from_env() {
  if (const char* env = std::getenv("MVC_THREADS"); env && *env) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1 && cap < omp_get_max_threads()) omp_set_num_threads(cap);
    } catch (const std::exception&) {
      // Unparseable caps are ignored.
    }
  }
  return omp_get_max_threads();
}

}  // namespace mvc
