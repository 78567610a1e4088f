#include "stagecast/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stagecast {

int worker_count() {
  static const int count = [] {
#ifdef _OPENMP
    int available = omp_get_max_threads();
#else
    int available = static_cast<int>(std::thread::hardware_concurrency());
#endif
    if (available < 1) available = 1;
    if (const char* env = std::getenv("STAGECAST_THREADS")) {
      try {
        const int requested = std::stoi(env);
        if (requested > 0 && requested < available) return requested;
      } catch (const std::exception&) {
      }
    }
    return available;
  }();
  return count;
}

}  // namespace stagecast
