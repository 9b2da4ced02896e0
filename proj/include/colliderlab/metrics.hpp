#pragma once

// Scalar signatures computed from judgments and fits: explaining away,
// Markov violation, background-adjusted causal strength, rank alignment
// with bootstrap intervals, the domain test and robustness dispersion.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colliderlab/fitting.hpp"
#include "colliderlab/judgment.hpp"
#include "colliderlab/parallel.hpp"

namespace colliderlab {

class MissingData : public std::runtime_error {
public:
  MissingData(const std::string &what, std::vector<TaskId> missing)
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::vector<TaskId> &missing() const { return missing_; }

private:
  std::vector<TaskId> missing_;
};

class UndefinedCorrelation : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InsufficientPoints : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tasks whose judgments define EA and MV.
inline constexpr TaskId kEaAlternativeAbsent = TaskId::IX;   // P(C1=1 | E=1, C2=0)
inline constexpr TaskId kEaAlternativePresent = TaskId::XI;  // P(C1=1 | E=1, C2=1)
inline constexpr TaskId kMvAlternativePresent = TaskId::IV;  // P(C1=1 | C2=1)
inline constexpr TaskId kMvAlternativeAbsent = TaskId::V;    // P(C1=1 | C2=0)

/// Mean normalized judgment of one task: averaged within each domain, then
/// across domains. Both phrasings of a symmetric query share a task id, so
/// they are pooled here as well.
std::optional<double> task_mean(std::span<const JudgmentRecord> records, TaskId task);

/// EA = P(C1=1 | E=1, C2=0) - P(C1=1 | E=1, C2=1) from raw judgments of one
/// agent and condition. Throws MissingData naming absent tasks.
double explaining_away(std::span<const JudgmentRecord> records);

/// MV = |P(C1=1 | C2=1) - P(C1=1 | C2=0)|.
double markov_violation(std::span<const JudgmentRecord> records);

/// Mean causal strength minus leak.
double bacs(const CbnParams &params);
double bacs(const FitResult &fit);

enum class BiasSource { RawJudgments, FittedModel };

struct BiasReport {
  double ea = 0.0;
  double mv = 0.0;
  std::optional<double> bacs;
  BiasSource source = BiasSource::RawJudgments;
};

BiasReport bias_report(std::span<const JudgmentRecord> records,
                       const FitResult *fit = nullptr);

/// EA and MV implied by a parameter point.
BiasReport model_bias(const CbnParams &params);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman's rho as the Pearson correlation of average ranks. Throws
/// UndefinedCorrelation for fewer than 3 pairs or zero rank variance.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct AlignmentReport {
  double rho = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_boot = 0;
  int n_valid_boot = 0;  ///< resamples with defined correlation
  int n_pairs = 0;
};

/// Percentile bootstrap over pairs. Resample b draws its indices from a
/// generator seeded by (seed, b), so all scheduling orders agree.
AlignmentReport bootstrap_spearman(std::span<const double> x, std::span<const double> y,
                                   int n_boot, std::uint64_t seed,
                                   Execution exec = Execution::Parallel);

/// Pairs the two agents' mean judgments over matching (task, domain) cells.
struct PairedCells {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<std::pair<TaskId, std::string>> cells;
};
PairedCells pair_cells(std::span<const JudgmentRecord> a, std::span<const JudgmentRecord> b);

AlignmentReport spearman_alignment(std::span<const JudgmentRecord> a,
                                   std::span<const JudgmentRecord> b, int n_boot = 2000,
                                   std::uint64_t seed = 0,
                                   Execution exec = Execution::Parallel);

struct KruskalWallisResult {
  double h = 0.0;
  int df = 0;
  double p = 1.0;
};

/// Tie-corrected H with a chi-square(k-1) upper-tail p-value. When every
/// value is identical H is 0 and p is 1 by convention.
KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups);

/// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_fdr(std::span<const double> pvals);

/// The metric vector placed on the robustness map for one condition.
struct SignaturePoint {
  double bacs = 0.0;
  double loocv_r2 = 0.0;  ///< clamped to [-1, 1] before scaling
  double ea = 0.0;
  double mv = 0.0;
  double mae = 0.0;

  std::array<double, 5> axes() const;
};

/// Min-max bounds per axis fitted over a population of points.
class SignatureScaler {
public:
  explicit SignatureScaler(std::span<const SignaturePoint> population);
  std::array<double, 5> scale(const SignaturePoint &p) const;

private:
  std::array<double, 5> lo_{};
  std::array<double, 5> hi_{};
};

/// Mean pairwise Euclidean distance between already scaled points.
/// Throws InsufficientPoints for fewer than two points.
double robustness_dispersion(std::span<const std::array<double, 5>> points);

}  // namespace colliderlab
