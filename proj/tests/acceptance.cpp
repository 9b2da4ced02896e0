// One line per acceptance criterion; exits nonzero when any criterion fails.
// Skipped criteria (missing optional inputs) do not fail the run.

#include <iostream>

#include "colliderlab/validation.hpp"

int main() {
  using namespace colliderlab::validation;
  bool failed = false;
  for (int id = 1; id <= kCriterionCount; ++id) {
    const CriterionResult r = run_criterion(id, Options{});
    std::cout << format_line(r) << std::endl;
    failed = failed || r.verdict == Verdict::Fail;
  }
  return failed ? 1 : 0;
}
