#pragma once

namespace colliderlab {

/// Selects the OpenMP kernel or its serial reference loop. Both produce
/// identical results.
enum class Execution { Serial, Parallel };

int worker_threads();

}  // namespace colliderlab
