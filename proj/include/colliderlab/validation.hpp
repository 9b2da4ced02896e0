#pragma once

// Offline acceptance checks. Each criterion recomputes its reference values
// independently of the code under test where one exists (brute-force
// enumeration, hand fixtures, construction targets).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace colliderlab::validation {

enum class Verdict { Pass, Fail, Skip };

struct CriterionResult {
  int id = 0;
  std::string name;
  Verdict verdict = Verdict::Fail;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  std::uint64_t seed = 20240611;
  /// Scratch space for the end-to-end runs; a fresh temporary directory when empty.
  std::filesystem::path work_dir;
  /// Released human-baseline file; located automatically when empty.
  std::optional<std::filesystem::path> human_baseline;
};

inline constexpr int kCriterionCount = 9;

CriterionResult run_criterion(int id, const Options &options);
std::vector<CriterionResult> run_all(const Options &options);

/// "[PASS] 3 parameter recovery: ... (1.20 s)"
std::string format_line(const CriterionResult &r);

/// $COLLIDERLAB_HUMAN_BASELINE if set, else <data>/released/human_baseline.csv
/// if present.
std::optional<std::filesystem::path> locate_human_baseline();

}  // namespace colliderlab::validation
