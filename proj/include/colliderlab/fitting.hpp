#pragma once

// Least-squares fitting of leaky noisy-OR collider parameters to an agent's
// normalized judgments, plus the lattice oracle and task-level LOOCV.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colliderlab/collider.hpp"
#include "colliderlab/judgment.hpp"
#include "colliderlab/parallel.hpp"

namespace colliderlab {

struct FitConfig {
  int n_starts = 16;
  std::uint64_t start_seed = 0;
  int max_iterations = 4000;     ///< per start, restarts included
  double convergence_tol = 1e-12;
  bool tie_strengths = false;
  bool tie_priors = true;
  /// Fit per-(task, domain) cell means instead of individual responses.
  bool aggregate_cells = false;

  /// Throws std::invalid_argument on n_starts < 1 or convergence_tol <= 0.
  void validate() const;
};

struct FitResult {
  CbnParams params;
  double sse = 0.0;
  double mae = 0.0;
  bool converged = false;
  int n_starts_used = 0;
  int best_start_index = -1;
  int iterations = 0;
  /// Loss at each starting point, in start order (+inf when undefined there).
  std::vector<double> start_losses;
  std::vector<std::string> warnings;
};

class NonConvergence : public std::runtime_error {
public:
  NonConvergence(const std::string &what, FitResult best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const FitResult &best() const { return best_; }

private:
  FitResult best_;
};

class InsufficientData : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UndefinedR2 : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Per-task counts, means and centred sums of squares. The pooled squared
/// error of a constant prediction per task is n*(pred-mean)^2 + css.
class TaskSummary {
public:
  explicit TaskSummary(std::span<const JudgmentRecord> data);

  /// +inf when a task present in the data is undefined at `params`.
  double sse(const CbnParams &params) const;
  int count(TaskId t) const { return count_[task_index(t)]; }
  double mean(TaskId t) const { return mean_[task_index(t)]; }
  int distinct_tasks() const;
  std::size_t size() const { return n_; }

private:
  std::array<int, kTaskCount> count_{};
  std::array<double, kTaskCount> mean_{};
  std::array<double, kTaskCount> css_{};
  std::size_t n_ = 0;
};

/// Sum over records of (eval_query - normalized)^2, record by record.
/// Returns +inf when any record's query is undefined at `params`.
/// Throws std::invalid_argument on empty data.
double sse_loss(const CbnParams &params, std::span<const JudgmentRecord> data);

double mean_absolute_error(const CbnParams &params, std::span<const JudgmentRecord> data);

/// Free-parameter layout for the tie flags: b, m1, [m2], p1, [p2].
int free_dimension(bool tie_strengths, bool tie_priors);
CbnParams params_from_vector(std::span<const double> x, bool tie_strengths, bool tie_priors);
std::vector<double> vector_from_params(const CbnParams &params);

/// Deterministic starting points: the corner starts (b, m, prior) = (0, 1, 0.5)
/// and (0.5, 0.5, 0.5), then a seeded shifted Halton sequence. All starts are
/// contracted into [0.01, 0.99] so they begin where every query is defined.
std::vector<CbnParams> start_points(const FitConfig &config);

/// Per-(task, domain) means, one record per cell, ordered by task then domain.
std::vector<JudgmentRecord> aggregate_cells(std::span<const JudgmentRecord> data);

/// Multi-start least squares. Throws NonConvergence (carrying the best point)
/// when no start converges, InsufficientData on empty data.
FitResult fit(std::span<const JudgmentRecord> data, const FitConfig &config);

/// Fits every dataset; entry i is the fit of datasets[i]. Failed cells carry
/// the error message and no result.
struct CellFit {
  bool ok = false;
  FitResult result;
  std::string error;
};
std::vector<CellFit> fit_many(std::span<const std::vector<JudgmentRecord>> datasets,
                              const FitConfig &config, Execution exec = Execution::Parallel);

/// Exhaustive lattice search with spacing grid_step in every free coordinate
/// (1.0 is always on the lattice). n_starts_used reports the lattice size.
FitResult grid_oracle_fit(std::span<const JudgmentRecord> data, double grid_step,
                          bool tie_strengths = false, bool tie_priors = true,
                          Execution exec = Execution::Parallel);

std::vector<double> lattice_axis(double grid_step);

struct HeldOutPrediction {
  TaskId task;
  std::string domain;
  double prediction;
  double judgment;
};

struct LoocvResult {
  double r2 = 0.0;
  std::vector<HeldOutPrediction> predictions;  ///< in input record order
  std::array<CbnParams, kTaskCount> fold_params{};
};

/// Task-level leave-one-out: each fold withholds every record of one task.
/// Throws InsufficientData unless all 11 tasks are covered, UndefinedR2 when
/// the held-out judgments have zero variance.
LoocvResult loocv_r2(std::span<const JudgmentRecord> data, const FitConfig &config,
                     Execution exec = Execution::Parallel);

double r_squared(std::span<const HeldOutPrediction> predictions);

}  // namespace colliderlab
