#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace colliderlab {

/// Nelder-Mead simplex descent restricted to the box [lower, upper]^n.
/// Trial points outside the box are projected onto it. The objective may
/// return +inf to reject a point.
struct SimplexOptions {
  double lower = 0.0;
  double upper = 1.0;
  double initial_step = 0.1;
  double ftol = 1e-12;  ///< spread of objective values across the simplex
  double xtol = 1e-9;   ///< max-norm spread of vertices
  int max_iterations = 4000;
  int max_restarts = 3;
};

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

using Objective = std::function<double(std::span<const double>)>;

SimplexResult minimize_simplex(const Objective &f, std::vector<double> start,
                               const SimplexOptions &options = {});

}  // namespace colliderlab
