#include "colliderlab/parallel.hpp"

#include <omp.h>

namespace colliderlab {

int worker_threads() { return omp_get_max_threads(); }

}  // namespace colliderlab
