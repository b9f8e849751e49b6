#pragma once

#include "rsteer/conic/program.hpp"

namespace rsteer::conic {

struct SolveOptions {
  double tol = 1e-7;    // target feasibility / optimality tolerance
  int max_iters = 100;  // interior-point iterations
  bool verbose = false;
  // Wall-clock budget checked between iterations; 0 disables. Exceeding it
  // ends the solve with IterationLimit ("time budget exceeded").
  double time_budget_ms = 0.0;
};

// Solves the program with the built-in primal-dual interior-point backend
// (Nesterov-Todd scaled predictor-corrector over nonnegative, second-order
// and small PSD cones, sparse quasi-definite KKT). Deterministic: identical
// inputs produce identical results.
SolveResult solve(const ConicProgram& prog, const SolveOptions& opts = {});

}  // namespace rsteer::conic
